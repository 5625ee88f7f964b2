//! Closed-form sensitivity bounds on network outputs.
//!
//! Each unit kind admits a bound on |dy/dx| that depends only on its
//! parameters: a ReLU unit is bounded by the l1 norm of its weights, a
//! sigmoid unit by a quarter of that, an infinity-norm radial unit by
//! (2/e) times the squared largest scale, and the sum-of-squares variant by
//! sqrt(2/e) times the l2 norm of its scales. Composing layers gives a
//! per-output bound s on the whole network: starting from s = 1 on every
//! input, each layer maps the incoming vector through its own bound and the
//! largest entry at the output layer bounds the network's response to any
//! single-coordinate input change.
//!
//! The bound exists in two mirrored forms: a plain evaluation over f64
//! vectors and a graph term built from the same ops as training, so it can
//! be added to the loss as a regularizer. The two are arithmetically
//! identical, which the tests pin bitwise.

use crate::error::Result;
use crate::graph::{Mode, Var};
use crate::network::{Activation, Gamma, Layer, LayerView, Network};
use crate::ops;
use crate::tensor::Tensor;

pub const TWO_OVER_E: f64 = 2.0 / std::f64::consts::E;

pub fn sqrt_two_over_e() -> f64 {
    TWO_OVER_E.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitSensKind {
    Relu,
    Sigmoid,
    Rbfi,
    Rbf2,
}

/// Worst-case |dy/dx_i| of one unit over all inputs and coordinates.
pub fn unit_sensitivity(kind: UnitSensKind, weights: &[f64]) -> f64 {
    match kind {
        UnitSensKind::Relu => weights.iter().map(|w| w.abs()).sum(),
        UnitSensKind::Sigmoid => weights.iter().map(|w| w.abs()).sum::<f64>() * 0.25,
        UnitSensKind::Rbfi => {
            let m = weights.iter().fold(0.0, |a: f64, &u| a.max(u.abs()));
            TWO_OVER_E * (m * m)
        }
        UnitSensKind::Rbf2 => {
            let s: f64 = weights.iter().map(|u| u * u).sum();
            sqrt_two_over_e() * s.sqrt()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SensitivityReport {
    /// Bound vector after each layer, input side first.
    pub per_layer: Vec<Vec<f64>>,
    /// Largest entry of the final layer's vector.
    pub network_bound: f64,
}

fn propagate_rbfi(s: &[f64], u: &Tensor, gamma: Gamma) -> Vec<f64> {
    let (ni, nj) = (u.rows(), u.cols());
    let ut = u.transpose2d();
    (0..nj)
        .map(|j| {
            let urow = ut.row(j);
            match gamma {
                Gamma::Infinity => {
                    let prod = |i: usize| (urow[i] * urow[i]) * s[i];
                    let mut best = prod(0);
                    for i in 1..ni {
                        let v = prod(i);
                        if v > best {
                            best = v;
                        }
                    }
                    best * TWO_OVER_E
                }
                Gamma::Two => {
                    let mut acc = 0.0;
                    for i in 0..ni {
                        let t = urow[i] * s[i];
                        acc += t * t;
                    }
                    acc.sqrt() * sqrt_two_over_e()
                }
            }
        })
        .collect()
}

fn propagate_dense(s: &[f64], w: &Tensor, activation: Activation) -> Vec<f64> {
    let (ni, nj) = (w.rows(), w.cols());
    let wt = w.transpose2d();
    (0..nj)
        .map(|j| {
            let wrow = wt.row(j);
            let mut acc = 0.0;
            for i in 0..ni {
                acc += wrow[i].abs() * s[i];
            }
            match activation {
                Activation::Sigmoid => acc * 0.25,
                Activation::Relu | Activation::None => acc,
            }
        })
        .collect()
}

/// Layer-by-layer bound vectors and the network bound, evaluated plainly.
pub fn network_report(net: &Network) -> SensitivityReport {
    let mut s = vec![1.0; net.input_dim()];
    let mut per_layer = Vec::new();
    for l in &net.layers {
        s = match l {
            Layer::Rbfi { u, gamma, .. } => propagate_rbfi(&s, &u.value, *gamma),
            Layer::Dense { w, activation, .. } => propagate_dense(&s, &w.value, *activation),
        };
        per_layer.push(s.clone());
    }
    let mut best = s[0];
    for &v in &s[1..] {
        if v > best {
            best = v;
        }
    }
    SensitivityReport {
        per_layer,
        network_bound: best,
    }
}

/// The network bound as a scalar graph node over the bound-in parameter
/// leaves, for use as a loss term. Maxes differentiate one-hot (the
/// attaining entry gets the gradient), matching true-mode semantics.
pub fn bound_var(input_dim: usize, views: &[LayerView]) -> Result<Var> {
    let mut s = Var::constant(Tensor::full(&[input_dim], 1.0));
    for v in views {
        s = match v {
            LayerView::Rbfi { u, gamma } => match gamma {
                Gamma::Infinity => {
                    let prod = ops::mul(&ops::transpose(&ops::square(u))?, &s)?;
                    let m = ops::shared_feedback_max(&prod, Mode::True)?;
                    ops::scale(&m, TWO_OVER_E)
                }
                Gamma::Two => {
                    let prod = ops::mul(&ops::transpose(u)?, &s)?;
                    let ssum = ops::sum_last(&ops::square(&prod))?;
                    ops::scale(&ops::sqrt(&ssum), sqrt_two_over_e())
                }
            },
            LayerView::Dense { w, activation } => {
                let prod = ops::mul(&ops::transpose(&ops::abs(w))?, &s)?;
                let summed = ops::sum_last(&prod)?;
                match activation {
                    Activation::Sigmoid => ops::scale(&summed, 0.25),
                    Activation::Relu | Activation::None => summed,
                }
            }
        };
    }
    ops::shared_feedback_max(&s, Mode::True)
}

/// c times the network bound, the term added to training losses.
pub fn regularizer(input_dim: usize, views: &[LayerView], c: f64) -> Result<Var> {
    Ok(ops::scale(&bound_var(input_dim, views)?, c))
}
