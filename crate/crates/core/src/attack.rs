//! Gradient and noise attacks with box constraints.
//!
//! All attacks perturb inputs within an infinity-norm ball of radius
//! epsilon intersected with the unit box. Gradients flow to the input only;
//! parameters stay constant. Perturbed coordinates can drift past epsilon
//! by a rounding unit or two, never more.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{backward, Mode, Var};
use crate::loss::{self, LossKind};
use crate::mnist::Dataset;
use crate::network::Network;
use crate::optim::AdaDeltaState;
use crate::rng;
use crate::tensor::Tensor;

const ATTACK_BATCH: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Ifgsm,
    Pgd,
    Noise,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Noise => "noise",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub ifgsm_steps: usize,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    pub seed: u64,
    pub gradient_mode: Mode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon: 0.0,
            ifgsm_steps: 10,
            pgd_steps: 100,
            pgd_restarts: 20,
            seed: 0,
            // Attacks follow the gradient of the loss the network was
            // trained with; the pseudogradient is a training device, not
            // part of the threat model. Pseudo-mode attacks stay available
            // through the config for anyone probing that distinction.
            gradient_mode: Mode::True,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub clean_accuracy: f64,
    pub attacked_accuracy: f64,
    /// Whether each example ended up misclassified.
    pub per_example_success: Vec<bool>,
    /// Mean over examples of the largest coordinate change; for pgd, over
    /// successful examples only (0 if none succeed).
    pub mean_linf: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the family's training loss with respect to the input batch.
pub fn input_gradient(
    net: &Network,
    x: &Tensor,
    y: &[u8],
    mode: Mode,
    loss_kind: LossKind,
) -> Result<Tensor> {
    let xv = Var::leaf(x.clone());
    let g = net.forward_graph(&xv, mode, false)?;
    let l = loss::apply(loss_kind, &g.out, y)?;
    backward(&l)?;
    Ok(xv.grad())
}

/// One signed gradient step of size epsilon, clamped to the unit box.
pub fn fgsm(net: &Network, x: &Tensor, y: &[u8], epsilon: f64, mode: Mode) -> Result<Tensor> {
    check_epsilon(epsilon)?;
    let g = input_gradient(net, x, y, mode, loss::default_loss(net.family()))?;
    let mut out = x.clone();
    for (v, gv) in out.data_mut().iter_mut().zip(g.data()) {
        *v = (*v + epsilon * sign(*gv)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// steps signed gradient steps of size epsilon/steps, each clamped to the
/// unit box, gradient recomputed at every iterate.
pub fn ifgsm(
    net: &Network,
    x: &Tensor,
    y: &[u8],
    epsilon: f64,
    steps: usize,
    mode: Mode,
) -> Result<Tensor> {
    check_epsilon(epsilon)?;
    if steps == 0 {
        return Err(Error::Usage("ifgsm needs at least one step".into()));
    }
    let step = epsilon / steps as f64;
    let loss_kind = loss::default_loss(net.family());
    let mut cur = x.clone();
    for _ in 0..steps {
        let g = input_gradient(net, &cur, y, mode, loss_kind)?;
        for (v, gv) in cur.data_mut().iter_mut().zip(g.data()) {
            *v = (*v + step * sign(*gv)).clamp(0.0, 1.0);
        }
    }
    Ok(cur)
}

/// Blend toward uniform noise: (1-epsilon) x + epsilon eta, eta uniform in
/// the unit box. Stays within epsilon of x because both endpoints are in
/// [0,1].
pub fn noise_perturb(x: &Tensor, epsilon: f64, r: &mut impl Rng) -> Result<Tensor> {
    check_epsilon(epsilon)?;
    let mut out = x.clone();
    for v in out.data_mut() {
        let eta: f64 = r.random_range(0.0..1.0);
        *v = (1.0 - epsilon) * *v + epsilon * eta;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PgdOutcome {
    pub success: bool,
    /// The misclassified iterate when success, otherwise absent.
    pub adversarial: Option<Vec<f64>>,
}

/// Projected ascent with restarts: start uniformly inside the feasible box
/// around x, take AdaDelta steps along the loss gradient, project after
/// every step, and stop at the first misclassified iterate. An example the
/// network already misclassifies counts as an immediate success.
pub fn pgd(
    net: &Network,
    x: &[f64],
    y: u8,
    cfg: &AttackConfig,
    instance_seed: u64,
) -> Result<PgdOutcome> {
    check_epsilon(cfg.epsilon)?;
    let n = x.len();
    if n != net.input_dim() {
        return Err(Error::Dimension(format!(
            "example has {n} features, network wants {}",
            net.input_dim()
        )));
    }
    let loss_kind = loss::default_loss(net.family());
    let misclassified = |row: &[f64]| -> Result<bool> {
        let t = Tensor::new(vec![1, n], row.to_vec())?;
        Ok(net.classify(&t)?[0] != y as usize)
    };
    if misclassified(x)? {
        return Ok(PgdOutcome {
            success: true,
            adversarial: Some(x.to_vec()),
        });
    }
    if cfg.epsilon == 0.0 {
        // the feasible region is the single point x, already classified
        return Ok(PgdOutcome {
            success: false,
            adversarial: None,
        });
    }
    let lo: Vec<f64> = x.iter().map(|&v| (v - cfg.epsilon).max(0.0)).collect();
    let hi: Vec<f64> = x.iter().map(|&v| (v + cfg.epsilon).min(1.0)).collect();
    for restart in 0..cfg.pgd_restarts {
        let mut r = rng::stream(instance_seed, &[restart as u64]);
        let mut cur: Vec<f64> = (0..n)
            .map(|i| {
                if hi[i] > lo[i] {
                    r.random_range(lo[i]..=hi[i])
                } else {
                    lo[i]
                }
            })
            .collect();
        if misclassified(&cur)? {
            return Ok(PgdOutcome {
                success: true,
                adversarial: Some(cur),
            });
        }
        let mut st = AdaDeltaState::new(n);
        let mut neg = vec![0.0; n];
        for _ in 0..cfg.pgd_steps {
            let xt = Tensor::new(vec![1, n], cur.clone())?;
            let g = input_gradient(net, &xt, &[y], cfg.gradient_mode, loss_kind)?;
            // ascend the loss: AdaDelta descends, so negate
            for (d, s) in neg.iter_mut().zip(g.data()) {
                *d = -s;
            }
            st.step(&mut cur, &neg);
            for i in 0..n {
                cur[i] = cur[i].clamp(lo[i], hi[i]);
            }
            if misclassified(&cur)? {
                return Ok(PgdOutcome {
                    success: true,
                    adversarial: Some(cur),
                });
            }
        }
    }
    Ok(PgdOutcome {
        success: false,
        adversarial: None,
    })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Usage(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    Ok(())
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Run one attack over the first `limit` test examples (all by default) and
/// measure accuracy before and after.
pub fn evaluate_under_attack(
    net: &Network,
    data: &Dataset,
    cfg: &AttackConfig,
    limit: Option<usize>,
) -> Result<AttackResult> {
    let n = limit.unwrap_or(data.len()).min(data.len());
    if n == 0 {
        return Err(Error::Usage("no examples to attack".into()));
    }
    let cols = data.feature_dim();
    let mut clean_correct = Vec::with_capacity(n);
    let mut success = Vec::with_capacity(n);
    let mut linf_sum = 0.0;
    let mut linf_count = 0usize;

    let mut start = 0;
    while start < n {
        let stop = (start + ATTACK_BATCH).min(n);
        let idx: Vec<usize> = (start..stop).collect();
        let (x, y) = data.select(&idx);
        let preds = net.classify(&x)?;
        for (p, &l) in preds.iter().zip(&y) {
            clean_correct.push(*p == l as usize);
        }
        match cfg.kind {
            AttackKind::Fgsm | AttackKind::Ifgsm => {
                let adv = match cfg.kind {
                    AttackKind::Fgsm => fgsm(net, &x, &y, cfg.epsilon, cfg.gradient_mode)?,
                    _ => ifgsm(net, &x, &y, cfg.epsilon, cfg.ifgsm_steps, cfg.gradient_mode)?,
                };
                let apreds = net.classify(&adv)?;
                for (r, (&p, &l)) in apreds.iter().zip(&y).enumerate() {
                    success.push(p != l as usize);
                    linf_sum += linf(adv.row(r), x.row(r));
                    linf_count += 1;
                }
            }
            AttackKind::Noise => {
                let mut adv = Tensor::zeros(&[stop - start, cols]);
                for (r, global) in (start..stop).enumerate() {
                    let mut rg = rng::stream(cfg.seed, &[global as u64]);
                    let row = Tensor::new(vec![1, cols], x.row(r).to_vec())?;
                    let prow = noise_perturb(&row, cfg.epsilon, &mut rg)?;
                    adv.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(prow.data());
                }
                let apreds = net.classify(&adv)?;
                for (r, (&p, &l)) in apreds.iter().zip(&y).enumerate() {
                    success.push(p != l as usize);
                    linf_sum += linf(adv.row(r), x.row(r));
                    linf_count += 1;
                }
            }
            AttackKind::Pgd => {
                for (r, global) in (start..stop).enumerate() {
                    let row = x.row(r);
                    let out = pgd(net, row, y[r], cfg, rng::mix(cfg.seed, &[global as u64]))?;
                    success.push(out.success);
                    if let Some(adv) = out.adversarial {
                        linf_sum += linf(&adv, row);
                        linf_count += 1;
                    }
                }
            }
        }
        start = stop;
    }

    let clean_accuracy = clean_correct.iter().filter(|&&c| c).count() as f64 / n as f64;
    let attacked_accuracy = success.iter().filter(|&&s| !s).count() as f64 / n as f64;
    Ok(AttackResult {
        clean_accuracy,
        attacked_accuracy,
        per_example_success: success,
        mean_linf: if linf_count == 0 {
            0.0
        } else {
            linf_sum / linf_count as f64
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_network, parse_geometry, Layer, UnitKind};

    /// A fixed one-unit network whose gradient direction is known.
    fn probe_net() -> Network {
        let spec = parse_geometry("R[3](2,2|and,or)").unwrap();
        init_network(&spec, 41)
    }

    fn probe_x() -> Tensor {
        Tensor::new(vec![2, 3], vec![0.2, 0.8, 0.5, 0.9, 0.1, 0.4]).unwrap()
    }

    #[test]
    fn fgsm_moves_each_coordinate_by_epsilon_or_clips() {
        let net = probe_net();
        let x = probe_x();
        let eps = 0.25;
        let adv = fgsm(&net, &x, &[0, 1], eps, Mode::Pseudo).unwrap();
        for (a, o) in adv.data().iter().zip(x.data()) {
            let d = (a - o).abs();
            assert!(d <= eps + 1e-12, "moved {d}");
            assert!((0.0..=1.0).contains(a));
            // each coordinate moved by exactly eps, or hit the box, or had
            // zero gradient
            assert!(d <= 1e-12 || (d - eps).abs() <= 1e-12 || *a == 0.0 || *a == 1.0);
        }
    }

    #[test]
    fn zero_epsilon_attacks_do_nothing() {
        let net = probe_net();
        let x = probe_x();
        let adv = fgsm(&net, &x, &[0, 1], 0.0, Mode::Pseudo).unwrap();
        assert_eq!(adv.data(), x.data());
        let adv = ifgsm(&net, &x, &[0, 1], 0.0, 4, Mode::Pseudo).unwrap();
        assert_eq!(adv.data(), x.data());
        let mut r = rng::stream_from(0);
        let adv = noise_perturb(&x, 0.0, &mut r).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn ifgsm_stays_within_the_ball() {
        let net = probe_net();
        let x = probe_x();
        let eps = 0.3;
        for mode in [Mode::Pseudo, Mode::True] {
            let adv = ifgsm(&net, &x, &[0, 1], eps, 7, mode).unwrap();
            for (a, o) in adv.data().iter().zip(x.data()) {
                assert!((a - o).abs() <= eps + 1e-12);
                assert!((0.0..=1.0).contains(a));
            }
        }
        assert!(ifgsm(&net, &x, &[0, 1], 0.1, 0, Mode::Pseudo).is_err());
    }

    #[test]
    fn noise_interpolates_toward_the_cube() {
        let x = Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let mut r = rng::stream_from(3);
        let eps = 0.4;
        let adv = noise_perturb(&x, eps, &mut r).unwrap();
        for (a, o) in adv.data().iter().zip(x.data()) {
            assert!((a - o).abs() <= eps + 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
        // determinism per stream
        let mut r2 = rng::stream_from(3);
        let adv2 = noise_perturb(&x, eps, &mut r2).unwrap();
        assert_eq!(adv.data(), adv2.data());
    }

    #[test]
    fn negative_epsilon_rejected() {
        let net = probe_net();
        let x = probe_x();
        assert!(fgsm(&net, &x, &[0, 1], -0.1, Mode::Pseudo).is_err());
        assert!(noise_perturb(&x, f64::NAN, &mut rng::stream_from(0)).is_err());
    }

    #[test]
    fn pgd_respects_the_box_and_finds_close_misclassifications() {
        // a single Or unit of one input with center 0.5: class 1 iff far
        // from 0.5; pair it against a constant And unit so argmax flips
        let spec = parse_geometry("R[1](2|mixed)").unwrap();
        let mut net = init_network(&spec, 1);
        {
            let Layer::Rbfi { u, w, kinds, .. } = &mut net.layers[0] else {
                panic!()
            };
            u.value = Tensor::new(vec![1, 2], vec![3.0, 3.0]).unwrap();
            w.value = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
            kinds[0] = UnitKind::And;
            kinds[1] = UnitKind::Or;
        }
        // at x=0.5 the And unit wins (1 vs 0): class 0; moving x by 0.3
        // makes the Or unit win
        let cfg = AttackConfig {
            kind: AttackKind::Pgd,
            epsilon: 0.3,
            pgd_steps: 30,
            pgd_restarts: 3,
            seed: 11,
            ..AttackConfig::default()
        };
        let out = pgd(&net, &[0.5], 0, &cfg, 1).unwrap();
        assert!(out.success);
        let adv = out.adversarial.unwrap();
        assert!((adv[0] - 0.5).abs() <= 0.3 + 1e-12);
        assert!((0.0..=1.0).contains(&adv[0]));

        // with a tiny ball the same attack fails
        let tight = AttackConfig {
            epsilon: 0.05,
            ..cfg.clone()
        };
        let out = pgd(&net, &[0.5], 0, &tight, 1).unwrap();
        assert!(!out.success);
        assert!(out.adversarial.is_none());

        // an already-misclassified example succeeds immediately
        let out = pgd(&net, &[0.5], 1, &cfg, 1).unwrap();
        assert!(out.success);
        assert_eq!(out.adversarial.unwrap(), vec![0.5]);
    }

    #[test]
    fn evaluate_covers_all_kinds_and_zero_epsilon_matches_clean() {
        let net = probe_net();
        let data = Dataset {
            images: probe_x(),
            labels: vec![0, 1],
        };
        for kind in [
            AttackKind::Fgsm,
            AttackKind::Ifgsm,
            AttackKind::Pgd,
            AttackKind::Noise,
        ] {
            let cfg = AttackConfig {
                kind,
                epsilon: 0.0,
                pgd_steps: 2,
                pgd_restarts: 1,
                ..AttackConfig::default()
            };
            let res = evaluate_under_attack(&net, &data, &cfg, None).unwrap();
            // at eps=0 the only successes are clean mistakes
            assert_eq!(res.clean_accuracy, res.attacked_accuracy, "{kind:?}");
            assert_eq!(res.per_example_success.len(), 2);
            assert_eq!(res.mean_linf, 0.0);
        }
    }

    #[test]
    fn evaluate_respects_limit_and_is_deterministic() {
        let net = probe_net();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..7 {
            rows.extend([0.1 * i as f64, 0.5, 0.9 - 0.1 * i as f64]);
            labels.push((i % 2) as u8);
        }
        let data = Dataset {
            images: Tensor::new(vec![7, 3], rows).unwrap(),
            labels,
        };
        let cfg = AttackConfig {
            kind: AttackKind::Noise,
            epsilon: 0.2,
            seed: 5,
            ..AttackConfig::default()
        };
        let a = evaluate_under_attack(&net, &data, &cfg, Some(4)).unwrap();
        assert_eq!(a.per_example_success.len(), 4);
        let b = evaluate_under_attack(&net, &data, &cfg, Some(4)).unwrap();
        assert_eq!(a.per_example_success, b.per_example_success);
        assert_eq!(a.mean_linf, b.mean_linf);
        // limit larger than the dataset clips
        let c = evaluate_under_attack(&net, &data, &cfg, Some(100)).unwrap();
        assert_eq!(c.per_example_success.len(), 7);
    }

    #[test]
    fn true_and_pseudo_gradients_differ_for_attacks() {
        let net = probe_net();
        let x = probe_x();
        let gp = input_gradient(&net, &x, &[0, 1], Mode::Pseudo, LossKind::SquareError).unwrap();
        let gt = input_gradient(&net, &x, &[0, 1], Mode::True, LossKind::SquareError).unwrap();
        assert_ne!(gp.data(), gt.data());
    }
}
