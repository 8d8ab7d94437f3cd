use super::TaskKind;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Mean loss of one prediction `[H·W × out]` against a target map `[H × W]`.
///
/// Binary: BCE on logits. Multiclass: cross-entropy over class logits.
/// Density: mean squared error plus `count_weight · |Σ pred − Σ target|`.
pub fn task_loss<T: Scalar>(
    tape: &Tape<'_, T>,
    task: TaskKind,
    pred: &Var<T>,
    target: &Tensor<f32>,
    count_weight: f64,
) -> Result<Var<T>> {
    let n = target.len();
    if pred.shape() != [n, task.out_channels()] {
        return Err(Error::ShapeMismatch {
            op: "task_loss",
            left: pred.shape().to_vec(),
            right: vec![n, task.out_channels()],
        });
    }
    match task {
        TaskKind::Binary => {
            if let Some(v) = target.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!("binary target holds non-binary value {v}")));
            }
            let t: Tensor<T> = target.cast::<T>().reshape(&[n, 1])?;
            tape.bce_with_logits(pred, &t)
        }
        TaskKind::Multiclass { classes } => {
            let labels = class_labels(target, classes)?;
            tape.cross_entropy(pred, &labels)
        }
        TaskKind::Density => {
            if target.data().iter().any(|&v| v < 0.0) {
                return Err(Error::invalid("density target must be nonnegative"));
            }
            let t = tape.constant(target.cast::<T>().reshape(&[n, 1])?);
            let diff = tape.sub(pred, &t)?;
            let mse = tape.mean(&tape.mul(&diff, &diff)?)?;
            let count_err = tape.abs(&tape.sum(&diff)?)?;
            tape.add(&mse, &tape.scale(&count_err, T::lit(count_weight))?)
        }
    }
}

/// Integer class indices of a float-encoded label map.
pub fn class_labels(target: &Tensor<f32>, classes: usize) -> Result<Vec<usize>> {
    target
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < classes {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("invalid class index {v} for {classes} classes")))
            }
        })
        .collect()
}
