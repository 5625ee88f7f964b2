//! Minibatch training with AdaDelta and optional sensitivity regularization.

use std::time::Instant;

use crate::error::Result;
use crate::graph::{backward, Mode, Var};
use crate::loss::{self, LossKind};
use crate::mnist::{batches, Dataset};
use crate::network::Network;
use crate::optim::AdaDelta;
use crate::sensitivity;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 250;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub gradient_mode: Mode,
    /// Weight on the network sensitivity bound added to the loss; 0 trains
    /// the task loss alone.
    pub regularizer_c: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean task loss per example over the epoch (regularizer excluded, so
    /// values are comparable across different c).
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub sensitivity_bound: f64,
    /// Seconds since training started, measured at epoch end.
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_accuracy)
    }
}

/// Train in place for cfg.epochs epochs and report per-epoch metrics.
/// Everything except wall_s is a pure function of the initial network, the
/// data, and the config; rerunning reproduces it bitwise.
pub fn train(
    net: &mut Network,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    let started = Instant::now();
    let mut opt = AdaDelta::new();
    let mut log = TrainingLog::default();
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for (x, y) in batches(train_data, cfg.batch_size, cfg.seed, epoch as u64) {
            let bsz = y.len();
            let xv = Var::constant(x);
            let g = net.forward_graph(&xv, cfg.gradient_mode, true)?;
            let task = loss::apply(cfg.loss, &g.out, &y)?;
            let total = if cfg.regularizer_c != 0.0 {
                let reg = sensitivity::regularizer(net.input_dim(), &g.views, cfg.regularizer_c)?;
                crate::ops::add(&task, &reg)?
            } else {
                task.clone()
            };
            backward(&total)?;
            let grads: Vec<Tensor> = g.leaves.iter().map(|l| l.grad()).collect();
            let mut params = net.params_mut();
            opt.step(&mut params, &grads);
            loss_sum += task.item() * bsz as f64;
            debug_assert!(net.all_in_bounds());
        }
        let test_accuracy = net.accuracy(&test_data.images, &test_data.labels, EVAL_BATCH)?;
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            test_accuracy,
            sensitivity_bound: sensitivity::network_report(net).network_bound,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}
