use comptr::grad_suite::{run_scope, GradScope};

fn assert_scope(scope: GradScope, seeds: u64) {
    let r = run_scope(scope, None, seeds).unwrap();
    let worst = r.worst().unwrap();
    assert!(r.passed(), "{scope}: {} seed {} rel {:e} at {:?}", worst.name, worst.seed, worst.max_rel_error, worst.worst);
}

#[test]
fn every_op_passes() {
    assert_scope(GradScope::Op, 5);
}

#[test]
fn attention_units_pass() {
    assert_scope(GradScope::Ada, 5);
}

#[test]
fn consistency_block_passes() {
    assert_scope(GradScope::Ceb, 5);
}

#[test]
fn difference_block_passes() {
    assert_scope(GradScope::Dab, 5);
}

#[test]
fn reduced_model_passes() {
    assert_scope(GradScope::Model, 2);
}

#[test]
fn zero_tolerance_fails() {
    let r = run_scope(GradScope::Op, Some(0.0), 1).unwrap();
    assert!(!r.passed());
    assert!(r.worst().unwrap().worst.is_some());
}

#[test]
fn scope_names_round_trip() {
    for s in GradScope::ALL {
        assert_eq!(s.to_string().parse::<GradScope>().unwrap(), s);
    }
    assert!("tensor".parse::<GradScope>().is_err());
}
