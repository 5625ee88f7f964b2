//! Helpers shared by the integration test targets: a central finite
//! difference gradient oracle, the true-mode operation sweep table, random
//! problem builders, and synthetic IDX fixtures for CLI runs.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rbfinet::graph::{backward, Mode, Var};
use rbfinet::loss::{self, LossKind};
use rbfinet::network::{
    init_network, parse_geometry, Activation, Family, Gamma, Layer, Network, UnitKind,
};
use rbfinet::ops;
use rbfinet::rng;
use rbfinet::sensitivity;
use rbfinet::tensor::Tensor;

/// Relative tolerance for agreement with central finite differences.
pub const FD_TOL: f64 = 1e-4;

pub fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform draw with every component at least `margin` away from zero, for
/// operations with a kink there.
pub fn rand_tensor_off_zero(
    r: &mut ChaCha8Rng,
    shape: &[usize],
    lo: f64,
    hi: f64,
    margin: f64,
) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| loop {
            let v = r.random_range(lo..hi);
            if v.abs() >= margin {
                return v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Rows whose sorted values keep at least `gap` between neighbours, so a max
/// over the row cannot change hands under finite difference probes.
pub fn separated_rows(
    r: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    gap: f64,
) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        loop {
            let row: Vec<f64> = (0..cols).map(|_| r.random_range(lo..hi)).collect();
            let mut sorted = row.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).all(|w| w[1] - w[0] >= gap) {
                data.extend_from_slice(&row);
                break;
            }
        }
    }
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn eval_scalar(inputs: &[Tensor], build: &dyn Fn(&[Var]) -> Var) -> f64 {
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::constant).collect();
    build(&vars).item()
}

/// Check d(build)/d(inputs) against central finite differences component by
/// component. `build` must map the leaves to a scalar.
pub fn fd_check(name: &str, inputs: &[Tensor], build: &dyn Fn(&[Var]) -> Var) {
    let leaves: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = build(&leaves);
    assert!(
        out.value().is_scalar(),
        "{name}: fd_check needs a scalar objective"
    );
    backward(&out).unwrap();
    let grads: Vec<Tensor> = leaves.iter().map(Var::grad).collect();
    for (k, base) in inputs.iter().enumerate() {
        for i in 0..base.len() {
            let v = base.data()[i];
            let h = 1e-5 * v.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] = v + h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] = v - h;
            let fd = (eval_scalar(&plus, build) - eval_scalar(&minus, build)) / (2.0 * h);
            let a = grads[k].data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            assert!(
                rel <= FD_TOL,
                "{name}: input {k}[{i}]: analytic {a} vs central difference {fd} (rel {rel:.3e})"
            );
        }
    }
}

/// Scalar readout sum(weights .* v) so every component of a non-scalar
/// operation output contributes to the objective with a distinct weight.
pub fn weighted(v: &Var, weights: &Tensor) -> Var {
    ops::sum_all(&ops::mul(v, &Var::constant(weights.clone())).unwrap())
}

// One finite difference instance per call; the sweep driver seeds a fresh
// rng stream for each (operation, instance) pair.

fn sweep_add(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let b = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let wts = rand_tensor(r, &[2, 3], 0.5, 1.5);
    fd_check("add", &[a, b], &|v| {
        weighted(&ops::add(&v[0], &v[1]).unwrap(), &wts)
    });
}

fn sweep_sub(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let b = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let wts = rand_tensor(r, &[2, 3], 0.5, 1.5);
    fd_check("sub", &[a, b], &|v| {
        weighted(&ops::sub(&v[0], &v[1]).unwrap(), &wts)
    });
}

fn sweep_mul(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let b = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let wts = rand_tensor(r, &[2, 3], 0.5, 1.5);
    fd_check("mul", &[a, b], &|v| {
        weighted(&ops::mul(&v[0], &v[1]).unwrap(), &wts)
    });
}

fn sweep_square(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[3, 2], -2.0, 2.0);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("square", &[a], &|v| weighted(&ops::square(&v[0]), &wts));
}

fn sweep_scale(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[3, 2], -2.0, 2.0);
    let c = r.random_range(-3.0..3.0);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("scale", &[a], &|v| weighted(&ops::scale(&v[0], c), &wts));
}

fn sweep_sqrt(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[3, 2], 0.1, 4.0);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("sqrt", &[a], &|v| weighted(&ops::sqrt(&v[0]), &wts));
}

fn sweep_abs(r: &mut ChaCha8Rng) {
    let a = rand_tensor_off_zero(r, &[3, 2], -2.0, 2.0, 1e-3);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("abs", &[a], &|v| weighted(&ops::abs(&v[0]), &wts));
}

fn sweep_relu(r: &mut ChaCha8Rng) {
    let a = rand_tensor_off_zero(r, &[3, 2], -2.0, 2.0, 1e-3);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("relu", &[a], &|v| weighted(&ops::relu(&v[0]), &wts));
}

fn sweep_sigmoid(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[3, 2], -4.0, 4.0);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("sigmoid", &[a], &|v| weighted(&ops::sigmoid(&v[0]), &wts));
}

fn sweep_exp_neg(r: &mut ChaCha8Rng) {
    let z = rand_tensor(r, &[3, 2], 0.05, 4.0);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("exp_neg(true)", &[z], &|v| {
        weighted(&ops::exp_neg(&v[0], Mode::True), &wts)
    });
}

fn sweep_sfm(r: &mut ChaCha8Rng) {
    let z = separated_rows(r, 2, 4, -2.0, 2.0, 1e-2);
    let wts = rand_tensor(r, &[2], 0.5, 1.5);
    fd_check("shared_feedback_max(true)", &[z], &|v| {
        weighted(&ops::shared_feedback_max(&v[0], Mode::True).unwrap(), &wts)
    });
}

fn sweep_sum_all(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[2, 3], -2.0, 2.0);
    fd_check("sum_all", &[a], &|v| ops::sum_all(&v[0]));
}

fn sweep_sum_last(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[3, 4], -2.0, 2.0);
    let wts = rand_tensor(r, &[3], 0.5, 1.5);
    fd_check("sum_last", &[a], &|v| {
        weighted(&ops::sum_last(&v[0]).unwrap(), &wts)
    });
}

fn sweep_transpose(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[2, 3], -2.0, 2.0);
    let wts = rand_tensor(r, &[3, 2], 0.5, 1.5);
    fd_check("transpose", &[a], &|v| {
        weighted(&ops::transpose(&v[0]).unwrap(), &wts)
    });
}

fn sweep_affine(r: &mut ChaCha8Rng) {
    let x = rand_tensor(r, &[2, 3], -1.0, 1.0);
    let w = rand_tensor(r, &[3, 2], -1.0, 1.0);
    let b = rand_tensor(r, &[2], -0.5, 0.5);
    let wts = rand_tensor(r, &[2, 2], 0.5, 1.5);
    fd_check("affine", &[x, w, b], &|v| {
        weighted(&ops::affine(&v[0], &v[1], &v[2]).unwrap(), &wts)
    });
}

fn sweep_kind_mix(r: &mut ChaCha8Rng) {
    let a = rand_tensor(r, &[2, 4], 0.0, 1.0);
    let kinds = vec![UnitKind::And, UnitKind::Or, UnitKind::Or, UnitKind::And];
    let wts = rand_tensor(r, &[2, 4], 0.5, 1.5);
    fd_check("kind_mix", &[a], &|v| {
        weighted(&ops::kind_mix(&v[0], &kinds).unwrap(), &wts)
    });
}

fn sweep_scaled_sq_dist(r: &mut ChaCha8Rng) {
    let x = rand_tensor(r, &[2, 3], 0.0, 1.0);
    let u = rand_tensor(r, &[3, 4], 0.2, 2.0);
    let w = rand_tensor(r, &[3, 4], 0.0, 1.0);
    let wts = rand_tensor(r, &[2, 4, 3], 0.5, 1.5);
    fd_check("scaled_sq_dist", &[x, u, w], &|v| {
        weighted(&ops::scaled_sq_dist(&v[0], &v[1], &v[2]).unwrap(), &wts)
    });
}

/// Smallest gap between the best and second-best scaled squared deviation
/// over all (example, unit) pairs; large gaps keep the max argument stable
/// under the probes.
fn rbfi_top2_gap(x: &Tensor, u: &Tensor, w: &Tensor) -> f64 {
    let (bsz, ni, nj) = (x.rows(), u.rows(), u.cols());
    let mut min_gap = f64::INFINITY;
    for b in 0..bsz {
        for j in 0..nj {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for i in 0..ni {
                let t = u.at2(i, j) * (x.at2(b, i) - w.at2(i, j));
                let d = t * t;
                if d > best {
                    second = best;
                    best = d;
                } else if d > second {
                    second = d;
                }
            }
            min_gap = min_gap.min(best - second);
        }
    }
    min_gap
}

fn sweep_rbfi_inf(r: &mut ChaCha8Rng) {
    loop {
        let x = rand_tensor(r, &[2, 3], 0.0, 1.0);
        let u = rand_tensor(r, &[3, 4], 0.3, 2.5);
        let w = rand_tensor(r, &[3, 4], 0.0, 1.0);
        if rbfi_top2_gap(&x, &u, &w) < 1e-3 {
            continue;
        }
        let kinds = vec![UnitKind::And, UnitKind::Or, UnitKind::And, UnitKind::Or];
        let wts = rand_tensor(r, &[2, 4], 0.5, 1.5);
        fd_check("rbfi_layer(inf,true)", &[x, u, w], &move |v| {
            weighted(
                &ops::rbfi_layer(&v[0], &v[1], &v[2], &kinds, Gamma::Infinity, Mode::True).unwrap(),
                &wts,
            )
        });
        return;
    }
}

fn sweep_rbfi_two(r: &mut ChaCha8Rng) {
    let x = rand_tensor(r, &[2, 3], 0.0, 1.0);
    let u = rand_tensor(r, &[3, 4], 0.3, 2.5);
    let w = rand_tensor(r, &[3, 4], 0.0, 1.0);
    let kinds = vec![UnitKind::Or, UnitKind::And, UnitKind::Or, UnitKind::And];
    let wts = rand_tensor(r, &[2, 4], 0.5, 1.5);
    fd_check("rbfi_layer(two,true)", &[x, u, w], &move |v| {
        weighted(
            &ops::rbfi_layer(&v[0], &v[1], &v[2], &kinds, Gamma::Two, Mode::True).unwrap(),
            &wts,
        )
    });
}

fn sweep_softmax_cross_entropy(r: &mut ChaCha8Rng) {
    let logits = rand_tensor(r, &[3, 4], -3.0, 3.0);
    let targets: Vec<u8> = (0..3).map(|_| r.random_range(0..4u8)).collect();
    fd_check("softmax_cross_entropy", &[logits], &move |v| {
        ops::softmax_cross_entropy(&v[0], &targets).unwrap()
    });
}

fn sweep_square_error(r: &mut ChaCha8Rng) {
    let pred = rand_tensor(r, &[3, 4], 0.0, 1.0);
    let targets: Vec<u8> = (0..3).map(|_| r.random_range(0..4u8)).collect();
    fd_check("square_error", &[pred], &move |v| {
        loss::square_error(&v[0], &targets).unwrap()
    });
}

/// One radial layer forward in plain arithmetic, for the gap walker.
fn rbfi_layer_out(x: &Tensor, u: &Tensor, w: &Tensor, kinds: &[UnitKind], gamma: Gamma) -> Tensor {
    let (bsz, ni, nj) = (x.rows(), u.rows(), u.cols());
    let mut out = Tensor::zeros(&[bsz, nj]);
    for b in 0..bsz {
        for j in 0..nj {
            let mut m = match gamma {
                Gamma::Infinity => f64::NEG_INFINITY,
                Gamma::Two => 0.0,
            };
            for i in 0..ni {
                let t = u.at2(i, j) * (x.at2(b, i) - w.at2(i, j));
                let d = t * t;
                match gamma {
                    Gamma::Infinity => m = m.max(d),
                    Gamma::Two => m += d,
                }
            }
            let a = (-m).exp();
            out.set2(b, j, if kinds[j] == UnitKind::Or { 1.0 - a } else { a });
        }
    }
    out
}

/// Whole-network true-mode gradient of the family loss against finite
/// differences, every parameter component at once.
fn sweep_network_loss(r: &mut ChaCha8Rng) {
    let spec = parse_geometry("R[3](4,2|and,or)").unwrap();
    loop {
        let seed = r.random::<u64>();
        let mut net = init_network(&spec, seed);
        let x = rand_tensor(r, &[2, 3], 0.0, 1.0);
        if network_min_gap_full(&net, &x) < 1e-3 {
            continue;
        }
        let y: Vec<u8> = (0..2).map(|_| r.random_range(0..2u8)).collect();
        fd_check_network(&mut net, &x, &y, LossKind::SquareError);
        return;
    }
}

/// Like sweep_network_loss but for a dense ReLU stack under cross-entropy.
fn sweep_dense_loss(r: &mut ChaCha8Rng) {
    let spec = parse_geometry("ReLU[3](4,3)").unwrap();
    loop {
        let seed = r.random::<u64>();
        let mut net = init_network(&spec, seed);
        let x = rand_tensor(r, &[2, 3], 0.0, 1.0);
        if dense_min_preactivation(&net, &x) < 1e-3 {
            continue;
        }
        let y: Vec<u8> = (0..2).map(|_| r.random_range(0..3u8)).collect();
        fd_check_network(&mut net, &x, &y, LossKind::SoftmaxCrossEntropy);
        return;
    }
}

/// Smallest |preactivation| reaching a ReLU, to keep probes off the kink.
fn dense_min_preactivation(net: &Network, x: &Tensor) -> f64 {
    let mut cur = x.clone();
    let mut min_abs = f64::INFINITY;
    for layer in &net.layers {
        let Layer::Dense { w, b, activation } = layer else {
            unreachable!("preactivation audit is for dense stacks")
        };
        let (ni, nj) = (w.value.rows(), w.value.cols());
        let mut next = Tensor::zeros(&[cur.rows(), nj]);
        for bi in 0..cur.rows() {
            for j in 0..nj {
                let mut acc = b.value.data()[j];
                for i in 0..ni {
                    acc += cur.at2(bi, i) * w.value.at2(i, j);
                }
                if *activation == Activation::Relu {
                    min_abs = min_abs.min(acc.abs());
                }
                next.set2(
                    bi,
                    j,
                    match activation {
                        Activation::Relu => acc.max(0.0),
                        Activation::Sigmoid => 1.0 / (1.0 + (-acc).exp()),
                        Activation::None => acc,
                    },
                );
            }
        }
        cur = next;
    }
    min_abs
}

/// Sensitivity bound graph gradient against finite differences, checked
/// through the parameter leaves of a live forward pass.
fn sweep_bound_graph(r: &mut ChaCha8Rng) {
    let spec = parse_geometry("R[3](4,2|and,or)").unwrap();
    loop {
        let seed = r.random::<u64>();
        let mut net = init_network(&spec, seed);
        if bound_min_gap(&net) < 1e-3 {
            continue;
        }
        fd_check_bound(&mut net);
        return;
    }
}

/// Min top-2 gap of the per-unit maxima inside the sensitivity recurrence.
fn bound_min_gap(net: &Network) -> f64 {
    let mut s = vec![1.0; net.input_dim()];
    let mut min_gap = f64::INFINITY;
    for layer in &net.layers {
        match layer {
            Layer::Rbfi {
                u,
                gamma: Gamma::Infinity,
                ..
            } => {
                let (ni, nj) = (u.value.rows(), u.value.cols());
                let mut next = vec![0.0; nj];
                for j in 0..nj {
                    let mut best = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    for i in 0..ni {
                        let c = s[i] * u.value.at2(i, j) * u.value.at2(i, j);
                        if c > best {
                            second = best;
                            best = c;
                        } else if c > second {
                            second = c;
                        }
                    }
                    min_gap = min_gap.min(best - second);
                    next[j] = (2.0 / std::f64::consts::E) * best;
                }
                s = next;
            }
            _ => unreachable!("bound_min_gap only audits pure radial stacks"),
        }
    }
    // The final network bound is a max over output units as well.
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() >= 2 {
        min_gap = min_gap.min(sorted[sorted.len() - 1] - sorted[sorted.len() - 2]);
    }
    min_gap
}

fn fd_check_bound(net: &mut Network) {
    let input_dim = net.input_dim();
    let x = Tensor::zeros(&[1, input_dim]);
    let xv = Var::constant(x);
    let g = net.forward_graph(&xv, Mode::True, true).unwrap();
    let bound = sensitivity::bound_var(input_dim, &g.views).unwrap();
    backward(&bound).unwrap();
    let grads: Vec<Tensor> = g.leaves.iter().map(Var::grad).collect();
    let eval = |net: &Network| sensitivity::network_report(net).network_bound;
    fd_against(net, &grads, &eval, "sensitivity_bound");
}

fn fd_check_network(net: &mut Network, x: &Tensor, y: &[u8], kind: LossKind) {
    let xv = Var::constant(x.clone());
    let g = net.forward_graph(&xv, Mode::True, true).unwrap();
    let l = loss::apply(kind, &g.out, y).unwrap();
    backward(&l).unwrap();
    let grads: Vec<Tensor> = g.leaves.iter().map(Var::grad).collect();
    let x2 = x.clone();
    let y2 = y.to_vec();
    let eval = move |net: &Network| {
        let xv = Var::constant(x2.clone());
        let g = net.forward_graph(&xv, Mode::True, false).unwrap();
        loss::apply(kind, &g.out, &y2).unwrap().item()
    };
    fd_against(net, &grads, &eval, "network_loss");
}

/// Central differences over every parameter component of `net`, compared
/// against precomputed analytic gradients in params() order.
fn fd_against(net: &mut Network, grads: &[Tensor], eval: &dyn Fn(&Network) -> f64, name: &str) {
    let n_params = net.params().len();
    assert_eq!(n_params, grads.len());
    for k in 0..n_params {
        let len = net.params()[k].value.len();
        for i in 0..len {
            let v0 = net.params()[k].value.data()[i];
            let h = 1e-5 * v0.abs().max(1.0);
            net.params_mut()[k].value.data_mut()[i] = v0 + h;
            let fp = eval(net);
            net.params_mut()[k].value.data_mut()[i] = v0 - h;
            let fm = eval(net);
            net.params_mut()[k].value.data_mut()[i] = v0;
            let fd = (fp - fm) / (2.0 * h);
            let a = grads[k].data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            assert!(
                rel <= FD_TOL,
                "{name}: param {k}[{i}]: analytic {a} vs central difference {fd} (rel {rel:.3e})"
            );
        }
    }
}

/// Min max-argument gap across radial layers for a full forward pass.
fn network_min_gap_full(net: &Network, x: &Tensor) -> f64 {
    let mut cur = x.clone();
    let mut min_gap = f64::INFINITY;
    for layer in &net.layers {
        let Layer::Rbfi { u, w, kinds, gamma } = layer else {
            unreachable!("gap audit is for radial stacks")
        };
        if *gamma == Gamma::Infinity {
            min_gap = min_gap.min(rbfi_top2_gap(&cur, &u.value, &w.value));
        }
        cur = rbfi_layer_out(&cur, &u.value, &w.value, kinds, *gamma);
    }
    min_gap
}

pub type SweepFn = fn(&mut ChaCha8Rng);

/// Every true-mode differentiable operation paired with its instance
/// generator. The composed network and bound entries cover the fused layer
/// backward paths end to end.
pub fn true_mode_sweeps() -> Vec<(&'static str, SweepFn)> {
    vec![
        ("add", sweep_add as SweepFn),
        ("sub", sweep_sub),
        ("mul", sweep_mul),
        ("square", sweep_square),
        ("scale", sweep_scale),
        ("sqrt", sweep_sqrt),
        ("abs", sweep_abs),
        ("relu", sweep_relu),
        ("sigmoid", sweep_sigmoid),
        ("exp_neg", sweep_exp_neg),
        ("shared_feedback_max", sweep_sfm),
        ("sum_all", sweep_sum_all),
        ("sum_last", sweep_sum_last),
        ("transpose", sweep_transpose),
        ("affine", sweep_affine),
        ("kind_mix", sweep_kind_mix),
        ("scaled_sq_dist", sweep_scaled_sq_dist),
        ("rbfi_layer_inf", sweep_rbfi_inf),
        ("rbfi_layer_two", sweep_rbfi_two),
        ("softmax_cross_entropy", sweep_softmax_cross_entropy),
        ("square_error", sweep_square_error),
        ("network_loss", sweep_network_loss),
        ("dense_loss", sweep_dense_loss),
        ("sensitivity_bound", sweep_bound_graph),
    ]
}

/// Run `instances` seeded instances of one sweep from the table.
pub fn run_sweep(name: &str, instances: usize) {
    let table = true_mode_sweeps();
    let (idx, f) = table
        .iter()
        .enumerate()
        .find_map(|(i, (n, f))| (*n == name).then_some((i, *f)))
        .unwrap_or_else(|| panic!("unknown sweep {name}"));
    for j in 0..instances {
        let mut r = rng::stream(0xFD0C, &[idx as u64, j as u64]);
        f(&mut r);
    }
}

/// Run the whole table; returns how many operations were checked.
pub fn run_all_sweeps(instances: usize) -> usize {
    let table = true_mode_sweeps();
    for (name, _) in &table {
        run_sweep(name, instances);
    }
    table.len()
}

/// A small synthetic classification set in the MNIST container format:
/// `classes` blobs on a side-by-side grid of `side`x`side` images.
pub fn synthetic_idx(
    dir: &std::path::Path,
    prefix: &str,
    n: usize,
    side: usize,
    classes: usize,
    seed: u64,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut r = rng::stream(seed, &[0x1D]);
    let mut pixels = vec![0u8; n * side * side];
    let mut labels = vec![0u8; n];
    for e in 0..n {
        let c = (e % classes) as u8;
        labels[e] = c;
        let img = &mut pixels[e * side * side..(e + 1) * side * side];
        // One bright column band per class plus noise, linearly separable.
        let band = (c as usize * side) / classes;
        for row in 0..side {
            for col in 0..side {
                let base = if col == band || col == (band + 1) % side {
                    200
                } else {
                    20
                };
                let jitter = r.random_range(0..40u32) as i32 - 20;
                img[row * side + col] = (base + jitter).clamp(0, 255) as u8;
            }
        }
    }
    let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    rbfinet::mnist::write_idx_images(&images, &pixels, n, side, side).unwrap();
    rbfinet::mnist::write_idx_labels(&labels_path, &labels).unwrap();
    (images, labels_path)
}

/// Builds a random small network for the soundness sweep: parameters drawn
/// over their full legal ranges rather than the init ranges.
pub fn random_small_net(seed: u64, family: Family, gamma: Gamma) -> Network {
    let mut r = rng::stream(seed, &[0x6E7]);
    let depth = r.random_range(1..=3usize);
    let input_dim = r.random_range(3..=8usize);
    let sizes: Vec<String> = (0..depth)
        .map(|_| r.random_range(4..=16usize).to_string())
        .collect();
    let code = match family {
        Family::Rbfi => {
            let kinds: Vec<&str> = (0..depth)
                .map(|_| ["and", "or", "mixed"][r.random_range(0..3usize)])
                .collect();
            let fam = if gamma == Gamma::Two { "R2" } else { "R" };
            format!(
                "{fam}[{input_dim}]({}|{})",
                sizes.join(","),
                kinds.join(",")
            )
        }
        Family::Relu => format!("ReLU[{input_dim}]({})", sizes.join(",")),
        Family::Sigmoid => format!("Sigmoid[{input_dim}]({})", sizes.join(",")),
    };
    let spec = parse_geometry(&code).unwrap();
    let mut net = init_network(&spec, rng::mix(seed, &[0x11]));
    for layer in &mut net.layers {
        match layer {
            Layer::Rbfi { u, w, .. } => {
                for v in u.value.data_mut() {
                    *v = r.random_range(0.01..3.0);
                }
                for v in w.value.data_mut() {
                    *v = r.random_range(0.0..1.0);
                }
            }
            Layer::Dense { w, b, .. } => {
                for v in w.value.data_mut() {
                    *v = r.random_range(-1.0..1.0);
                }
                for v in b.value.data_mut() {
                    *v = r.random_range(-0.5..0.5);
                }
            }
        }
    }
    debug_assert!(net.all_in_bounds());
    net
}

/// Asserts the attack contracts: output in [0,1] and within eps of x in the
/// infinity norm, with a 1e-12 slack for clamp rounding.
pub fn assert_valid_perturbation(x: &Tensor, adv: &Tensor, eps: f64, label: &str) {
    assert_eq!(x.shape(), adv.shape(), "{label}: shape changed");
    for (a, b) in x.data().iter().zip(adv.data()) {
        assert!(
            (a - b).abs() <= eps + 1e-12,
            "{label}: moved {} > eps {eps}",
            (a - b).abs()
        );
        assert!((0.0..=1.0).contains(b), "{label}: left the unit box: {b}");
    }
}
