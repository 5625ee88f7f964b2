//! AdaDelta with post-step clamping for bounded parameters.

use crate::network::BoundedParam;
use crate::tensor::Tensor;

/// AdaDelta (Zeiler 2012): per-component running averages of squared
/// gradients and squared updates, no learning rate to tune.
pub struct AdaDelta {
    rho: f64,
    eps: f64,
    slots: Option<Vec<Slot>>,
}

struct Slot {
    eg2: Vec<f64>,
    edx2: Vec<f64>,
}

impl Default for AdaDelta {
    fn default() -> Self {
        AdaDelta::new()
    }
}

impl AdaDelta {
    pub fn new() -> Self {
        AdaDelta {
            rho: 0.95,
            eps: 1e-6,
            slots: None,
        }
    }

    pub fn with_params(rho: f64, eps: f64) -> Self {
        AdaDelta {
            rho,
            eps,
            slots: None,
        }
    }

    /// Apply one update to every parameter from its matching gradient, then
    /// clamp each parameter to its bounds. Accumulator state persists across
    /// calls; the parameter list must stay aligned between calls.
    pub fn step(&mut self, params: &mut [&mut BoundedParam], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "params and grads misaligned");
        let slots = self.slots.get_or_insert_with(|| {
            params
                .iter()
                .map(|p| Slot {
                    eg2: vec![0.0; p.value.len()],
                    edx2: vec![0.0; p.value.len()],
                })
                .collect()
        });
        assert_eq!(
            slots.len(),
            params.len(),
            "optimizer rebound to a different net"
        );
        let (rho, eps) = (self.rho, self.eps);
        for (k, p) in params.iter_mut().enumerate() {
            assert_eq!(
                grads[k].shape(),
                p.value.shape(),
                "gradient shape mismatch on parameter {k}"
            );
            let slot = &mut slots[k];
            let g = grads[k].data();
            let v = p.value.data_mut();
            for i in 0..v.len() {
                let gi = g[i];
                slot.eg2[i] = rho * slot.eg2[i] + (1.0 - rho) * gi * gi;
                let dx = -((slot.edx2[i] + eps).sqrt() / (slot.eg2[i] + eps).sqrt()) * gi;
                slot.edx2[i] = rho * slot.edx2[i] + (1.0 - rho) * dx * dx;
                v[i] += dx;
            }
            p.clamp();
        }
    }
}

/// Standalone per-coordinate AdaDelta state for ascent over a flat buffer,
/// used by the projected attack loop.
pub struct AdaDeltaState {
    rho: f64,
    eps: f64,
    eg2: Vec<f64>,
    edx2: Vec<f64>,
}

impl AdaDeltaState {
    pub fn new(len: usize) -> Self {
        AdaDeltaState {
            rho: 0.95,
            eps: 1e-6,
            eg2: vec![0.0; len],
            edx2: vec![0.0; len],
        }
    }

    /// One descent step on `x` along gradient `g` (negate g for ascent).
    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        assert_eq!(x.len(), g.len());
        assert_eq!(x.len(), self.eg2.len());
        let (rho, eps) = (self.rho, self.eps);
        for i in 0..x.len() {
            let gi = g[i];
            self.eg2[i] = rho * self.eg2[i] + (1.0 - rho) * gi * gi;
            let dx = -((self.edx2[i] + eps).sqrt() / (self.eg2[i] + eps).sqrt()) * gi;
            self.edx2[i] = rho * self.edx2[i] + (1.0 - rho) * dx * dx;
            x[i] += dx;
        }
    }
}
