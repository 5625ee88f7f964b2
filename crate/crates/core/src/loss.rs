//! Training losses built on the graph ops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::network::Family;
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquareError,
    SoftmaxCrossEntropy,
}

/// The loss each family trains with unless a config overrides it. Radial and
/// sigmoid networks emit values in [0,1] and use the square error against a
/// one-hot target; ReLU networks emit logits and use cross-entropy.
pub fn default_loss(family: Family) -> LossKind {
    match family {
        Family::Relu => LossKind::SoftmaxCrossEntropy,
        Family::Rbfi | Family::Sigmoid => LossKind::SquareError,
    }
}

pub fn onehot(targets: &[u8], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[targets.len(), classes]);
    for (r, &c) in targets.iter().enumerate() {
        if c as usize >= classes {
            return Err(Error::Usage(format!(
                "class {c} out of range for {classes} outputs"
            )));
        }
        t.set2(r, c as usize, 1.0);
    }
    Ok(t)
}

/// Mean over the batch of the summed squared error against a one-hot target.
pub fn square_error(pred: &Var, targets: &[u8]) -> Result<Var> {
    let shape = pred.shape();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::Dimension(format!(
            "predictions {shape:?} against {} targets",
            targets.len()
        )));
    }
    let t = Var::constant(onehot(targets, shape[1])?);
    let diff = ops::sub(pred, &t)?;
    let total = ops::sum_all(&ops::square(&diff));
    Ok(ops::scale(&total, 1.0 / targets.len() as f64))
}

pub fn apply(kind: LossKind, pred: &Var, targets: &[u8]) -> Result<Var> {
    match kind {
        LossKind::SquareError => square_error(pred, targets),
        LossKind::SoftmaxCrossEntropy => ops::softmax_cross_entropy(pred, targets),
    }
}
