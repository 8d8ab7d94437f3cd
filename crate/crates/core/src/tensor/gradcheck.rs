//! Central finite-difference verification of tape gradients.

use super::{ParamId, ParamStore, Rng, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Pass iff the worst relative error is strictly below this.
    pub tol: f64,
    /// Lower bound of the relative-error denominator, so gradients that are
    /// zero up to rounding compare on an absolute scale.
    pub floor: f64,
    /// Check a random subset of at most this many elements per parameter.
    pub max_elements_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-4,
            floor: 1e-6,
            max_elements_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElementCheck {
    pub param: String,
    pub index: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub elements: Vec<ElementCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ElementCheck> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |e| e.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    /// Worst element per parameter name.
    pub fn per_param(&self) -> Vec<&ElementCheck> {
        let mut out: Vec<&ElementCheck> = Vec::new();
        for e in &self.elements {
            match out.iter_mut().find(|w| w.param == e.param) {
                Some(w) if e.rel_error > w.rel_error => *w = e,
                Some(_) => {}
                None => out.push(e),
            }
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares the tape gradient of `f` against `(f(p+h) - f(p-h)) / 2h` for the
/// elements of `params`. `f` must build a scalar loss on the given tape.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>) -> Result<Var<f64>>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let tape = Tape::new(store);
        let loss = f(&tape)?;
        let grads = tape.backward(&loss)?;
        params
            .iter()
            .map(|&id| grads.get(id).map(|g| g.data().to_vec()))
            .collect()
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::inference(store);
        Ok(f(&tape)?.value().item())
    };

    let mut rng = Rng::new(cfg.seed);
    let mut elements = Vec::new();
    for (&id, grad) in params.iter().zip(&analytic) {
        let n = store.value(id).len();
        let mut indices: Vec<usize> = (0..n).collect();
        if let Some(m) = cfg.max_elements_per_param {
            if m < n {
                rng.shuffle(&mut indices);
                indices.truncate(m);
                indices.sort_unstable();
            }
        }
        for flat in indices {
            let orig = store.value(id).data()[flat];
            store.value_mut(id).data_mut()[flat] = orig + cfg.step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[flat] = orig - cfg.step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[flat] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.as_ref().map_or(0.0, |g| g[flat]);
            let value = store.value(id);
            elements.push(ElementCheck {
                param: store.get(id).name.clone(),
                index: value.unravel(flat),
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric, cfg.floor),
            });
        }
    }
    Ok(GradCheckReport {
        elements,
        tol: cfg.tol,
    })
}
