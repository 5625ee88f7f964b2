//! Differentiable operations.
//!
//! Forward passes are exact in both gradient modes; the `pseudo` mode only
//! substitutes the backward rules of `exp_neg` (factor -1/sqrt(1+z) instead
//! of -e^(-z)) and `shared_feedback_max` (factor e^(z_i - y) shared across
//! inputs instead of a one-hot assignment to the maximum).

use crate::error::{Error, Result};
use crate::fastmath::fast_exp;
use crate::graph::{Mode, Var};
use crate::network::{Gamma, UnitKind};
use crate::tensor::{matmul, Tensor};

/// How one operand of a binary elementwise op maps onto the output shape.
#[derive(Clone, Copy, PartialEq)]
enum Side {
    Full,
    Scalar,
    Row,
}

fn is_scalar_shape(s: &[usize]) -> bool {
    s.iter().product::<usize>() == 1 && s.len() <= 1
}

fn is_row_of(v: &[usize], m: &[usize]) -> bool {
    m.len() == 2 && ((v.len() == 1 && v[0] == m[1]) || (v.len() == 2 && v[0] == 1 && v[1] == m[1]))
}

fn classify(a: &[usize], b: &[usize]) -> Result<(Side, Side, Vec<usize>)> {
    if a == b {
        return Ok((Side::Full, Side::Full, a.to_vec()));
    }
    if is_scalar_shape(a) && is_scalar_shape(b) {
        return Ok((Side::Full, Side::Full, a.to_vec()));
    }
    if is_scalar_shape(a) {
        return Ok((Side::Scalar, Side::Full, b.to_vec()));
    }
    if is_scalar_shape(b) {
        return Ok((Side::Full, Side::Scalar, a.to_vec()));
    }
    if is_row_of(a, b) {
        return Ok((Side::Row, Side::Full, b.to_vec()));
    }
    if is_row_of(b, a) {
        return Ok((Side::Full, Side::Row, a.to_vec()));
    }
    Err(Error::Dimension(format!(
        "incompatible shapes {a:?} and {b:?}"
    )))
}

/// Value of an operand at a flat output index under its broadcast side.
#[inline]
fn pick(v: &[f64], side: Side, idx: usize, cols: usize) -> f64 {
    match side {
        Side::Full => v[idx],
        Side::Scalar => v[0],
        Side::Row => v[idx % cols],
    }
}

/// Fold a full-shaped gradient back down to an operand's own shape.
fn reduce(g: &Tensor, side: Side, shape: &[usize]) -> Tensor {
    match side {
        Side::Full => {
            let mut t = g.clone();
            if t.shape() != shape {
                // same element count, scalar [] vs [1] mismatch only
                t = Tensor::new(shape.to_vec(), t.data().to_vec()).unwrap();
            }
            t
        }
        Side::Scalar => {
            let s: f64 = g.data().iter().sum();
            Tensor::new(shape.to_vec(), vec![s]).unwrap()
        }
        Side::Row => {
            let cols: usize = shape.iter().product();
            let mut acc = vec![0.0; cols];
            for (i, &gv) in g.data().iter().enumerate() {
                acc[i % cols] += gv;
            }
            Tensor::new(shape.to_vec(), acc).unwrap()
        }
    }
}

fn binary(
    a: &Var,
    b: &Var,
    fwd: fn(f64, f64) -> f64,
    bwd: fn(f64, f64, f64) -> (f64, f64),
) -> Result<Var> {
    let av = a.value_clone();
    let bv = b.value_clone();
    let (sa, sb, out_shape) = classify(av.shape(), bv.shape())?;
    let cols = *out_shape.last().unwrap_or(&1);
    let n: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(fwd(
            pick(av.data(), sa, i, cols),
            pick(bv.data(), sb, i, cols),
        ));
    }
    let out = Tensor::new(out_shape, data)?;
    let (na, nb) = (a.requires_grad(), b.requires_grad());
    let (ash, bsh) = (av.shape().to_vec(), bv.shape().to_vec());
    let rule = move |g: &Tensor, _v: &Tensor| {
        let mut ga = na.then(|| Tensor::zeros(g.shape()));
        let mut gb = nb.then(|| Tensor::zeros(g.shape()));
        for (i, &gv) in g.data().iter().enumerate() {
            let (da, db) = bwd(
                pick(av.data(), sa, i, cols),
                pick(bv.data(), sb, i, cols),
                gv,
            );
            if let Some(t) = ga.as_mut() {
                t.data_mut()[i] = da;
            }
            if let Some(t) = gb.as_mut() {
                t.data_mut()[i] = db;
            }
        }
        vec![
            ga.map(|t| reduce(&t, sa, &ash)),
            gb.map(|t| reduce(&t, sb, &bsh)),
        ]
    };
    Ok(Var::from_op(
        out,
        vec![a.clone(), b.clone()],
        Box::new(rule),
    ))
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    binary(a, b, |x, y| x + y, |_, _, g| (g, g))
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    binary(a, b, |x, y| x - y, |_, _, g| (g, -g))
}

pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    binary(a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
}

fn unary(x: &Var, fwd: impl Fn(f64) -> f64, bwd: impl Fn(f64, f64, f64) -> f64 + 'static) -> Var {
    // bwd(input, output, grad) -> input grad
    let xv = x.value_clone();
    let out = xv.map(&fwd);
    let ov = out.clone();
    let rule = move |g: &Tensor, _: &Tensor| {
        let mut gx = Tensor::zeros(xv.shape());
        for i in 0..g.len() {
            gx.data_mut()[i] = bwd(xv.data()[i], ov.data()[i], g.data()[i]);
        }
        vec![Some(gx)]
    };
    Var::from_op(out, vec![x.clone()], Box::new(rule))
}

pub fn square(x: &Var) -> Var {
    unary(x, |v| v * v, |v, _, g| g * (2.0 * v))
}

pub fn scale(x: &Var, c: f64) -> Var {
    unary(x, |v| c * v, move |_, _, g| g * c)
}

pub fn sqrt(x: &Var) -> Var {
    unary(x, f64::sqrt, |_, o, g| g / (2.0 * o))
}

pub fn abs(x: &Var) -> Var {
    unary(x, f64::abs, |v, _, g| {
        if v > 0.0 {
            g
        } else if v < 0.0 {
            -g
        } else {
            0.0
        }
    })
}

pub fn relu(x: &Var) -> Var {
    unary(x, |v| v.max(0.0), |v, _, g| if v > 0.0 { g } else { 0.0 })
}

pub fn sigmoid(x: &Var) -> Var {
    unary(
        x,
        |v| 1.0 / (1.0 + (-v).exp()),
        |_, o, g| g * (o * (1.0 - o)),
    )
}

/// Elementwise e^(-z). Backward multiplies by -1/sqrt(1+z) in pseudo mode
/// and by the true derivative -e^(-z) otherwise.
pub fn exp_neg(z: &Var, mode: Mode) -> Var {
    match mode {
        Mode::Pseudo => unary(z, |v| (-v).exp(), |v, _, g| g * (-1.0 / (1.0 + v).sqrt())),
        Mode::True => unary(z, |v| (-v).exp(), |_, o, g| g * (-o)),
    }
}

/// Max over the last axis. Pseudo backward spreads the incoming gradient as
/// g * e^(z_i - y); true backward sends all of it to the maximal input,
/// lowest index on ties.
pub fn shared_feedback_max(z: &Var, mode: Mode) -> Result<Var> {
    let zv = z.value_clone();
    if zv.rank() == 0 || *zv.shape().last().unwrap() == 0 {
        return Err(Error::Dimension(format!(
            "max over last axis needs a nonempty axis, got shape {:?}",
            zv.shape()
        )));
    }
    let n = *zv.shape().last().unwrap();
    let out_shape: Vec<usize> = zv.shape()[..zv.rank() - 1].to_vec();
    let rows = zv.len() / n;
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &zv.data()[r * n..(r + 1) * n];
        let mut m = row[0];
        for &v in &row[1..] {
            if v > m {
                m = v;
            }
        }
        y.push(m);
    }
    let out = Tensor::new(out_shape, y.clone())?;
    let rule = move |g: &Tensor, _: &Tensor| {
        let mut gz = Tensor::zeros(zv.shape());
        for r in 0..rows {
            let gr = g.data()[r];
            if gr == 0.0 {
                continue;
            }
            let row = &zv.data()[r * n..(r + 1) * n];
            let grow = &mut gz.data_mut()[r * n..(r + 1) * n];
            match mode {
                Mode::Pseudo => {
                    let yr = y[r];
                    for i in 0..n {
                        grow[i] = gr * fast_exp(row[i] - yr);
                    }
                }
                Mode::True => {
                    let mut best = 0;
                    for i in 1..n {
                        if row[i] > row[best] {
                            best = i;
                        }
                    }
                    grow[best] = gr;
                }
            }
        }
        vec![Some(gz)]
    };
    Ok(Var::from_op(out, vec![z.clone()], Box::new(rule)))
}

/// Sum of all elements, as a rank-0 scalar.
pub fn sum_all(x: &Var) -> Var {
    let xv = x.value_clone();
    let s: f64 = xv.data().iter().sum();
    let shape = xv.shape().to_vec();
    let rule = move |g: &Tensor, _: &Tensor| vec![Some(Tensor::full(&shape, g.item()))];
    Var::from_op(Tensor::scalar(s), vec![x.clone()], Box::new(rule))
}

/// Sum over the last axis.
pub fn sum_last(x: &Var) -> Result<Var> {
    let xv = x.value_clone();
    if xv.rank() == 0 {
        return Err(Error::Dimension(
            "sum over last axis needs rank >= 1".into(),
        ));
    }
    let n = *xv.shape().last().unwrap();
    let out_shape: Vec<usize> = xv.shape()[..xv.rank() - 1].to_vec();
    let rows = xv.len().checked_div(n).unwrap_or(0);
    let mut data = Vec::with_capacity(rows);
    for r in 0..rows {
        data.push(xv.data()[r * n..(r + 1) * n].iter().sum());
    }
    let out = Tensor::new(out_shape, data)?;
    let in_shape = xv.shape().to_vec();
    let rule = move |g: &Tensor, _: &Tensor| {
        let mut gx = Tensor::zeros(&in_shape);
        for r in 0..rows {
            let gr = g.data()[r];
            for v in gx.data_mut()[r * n..(r + 1) * n].iter_mut() {
                *v = gr;
            }
        }
        vec![Some(gx)]
    };
    Ok(Var::from_op(out, vec![x.clone()], Box::new(rule)))
}

pub fn transpose(x: &Var) -> Result<Var> {
    let xv = x.value_clone();
    if xv.rank() != 2 {
        return Err(Error::Dimension(format!(
            "transpose needs rank 2, got {:?}",
            xv.shape()
        )));
    }
    let out = xv.transpose2d();
    let rule = move |g: &Tensor, _: &Tensor| vec![Some(g.transpose2d())];
    Ok(Var::from_op(out, vec![x.clone()], Box::new(rule)))
}

fn colsum(t: &Tensor) -> Vec<f64> {
    let (r, c) = (t.rows(), t.cols());
    let mut acc = vec![0.0; c];
    for i in 0..r {
        let row = t.row(i);
        for j in 0..c {
            acc[j] += row[j];
        }
    }
    acc
}

/// x[B,N] * W[N,M] + b, with b shaped [M] or [1,M].
pub fn affine(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    let xv = x.value_clone();
    let wv = w.value_clone();
    let bv = b.value_clone();
    if xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows() {
        return Err(Error::Dimension(format!(
            "affine shapes {:?} x {:?}",
            xv.shape(),
            wv.shape()
        )));
    }
    let m = wv.cols();
    if bv.len() != m || bv.rank() == 0 || bv.rank() > 2 {
        return Err(Error::Dimension(format!(
            "affine bias shape {:?}, want [{m}]",
            bv.shape()
        )));
    }
    let mut out = matmul(&xv, &wv)?;
    for r in 0..out.rows() {
        let row = &mut out.data_mut()[r * m..(r + 1) * m];
        for j in 0..m {
            row[j] += bv.data()[j];
        }
    }
    let (nx, nw, nb) = (x.requires_grad(), w.requires_grad(), b.requires_grad());
    let bshape = bv.shape().to_vec();
    let rule = move |g: &Tensor, _: &Tensor| {
        let gx = nx.then(|| matmul(g, &wv.transpose2d()).unwrap());
        let gw = nw.then(|| matmul(&xv.transpose2d(), g).unwrap());
        let gb = nb.then(|| Tensor::new(bshape.clone(), colsum(g)).unwrap());
        vec![gx, gw, gb]
    };
    Ok(Var::from_op(
        out,
        vec![x.clone(), w.clone(), b.clone()],
        Box::new(rule),
    ))
}

/// Per-column And/Or selection: And columns pass through, Or columns emit
/// 1 - value.
pub fn kind_mix(a: &Var, kinds: &[UnitKind]) -> Result<Var> {
    let av = a.value_clone();
    let m = *av.shape().last().unwrap_or(&0);
    if m != kinds.len() {
        return Err(Error::Dimension(format!(
            "kind_mix: {} kinds for last axis {m}",
            kinds.len()
        )));
    }
    let kinds = kinds.to_vec();
    let mut out = av.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if kinds[i % m] == UnitKind::Or {
            *v = 1.0 - *v;
        }
    }
    let kb = kinds.clone();
    let rule = move |g: &Tensor, _: &Tensor| {
        let mut gx = g.clone();
        for (i, v) in gx.data_mut().iter_mut().enumerate() {
            if kb[i % m] == UnitKind::Or {
                *v = -*v;
            }
        }
        vec![Some(gx)]
    };
    Ok(Var::from_op(out, vec![a.clone()], Box::new(rule)))
}

/// d[b,j,i] = (u[i,j] * (x[b,i] - w[i,j]))^2, the squared scaled deviations
/// every radial unit reduces over.
pub fn scaled_sq_dist(x: &Var, u: &Var, w: &Var) -> Result<Var> {
    let xv = x.value_clone();
    let uv = u.value_clone();
    let wv = w.value_clone();
    if xv.rank() != 2 || uv.rank() != 2 || wv.rank() != 2 {
        return Err(Error::Dimension(
            "scaled_sq_dist needs rank-2 inputs".into(),
        ));
    }
    if uv.shape() != wv.shape() || xv.cols() != uv.rows() {
        return Err(Error::Dimension(format!(
            "scaled_sq_dist shapes x{:?} u{:?} w{:?}",
            xv.shape(),
            uv.shape(),
            wv.shape()
        )));
    }
    let (bsz, ni, nj) = (xv.rows(), uv.rows(), uv.cols());
    let ut = uv.transpose2d();
    let wt = wv.transpose2d();
    let mut data = vec![0.0; bsz * nj * ni];
    for b in 0..bsz {
        let xrow = xv.row(b);
        for j in 0..nj {
            let urow = ut.row(j);
            let wrow = wt.row(j);
            let orow = &mut data[(b * nj + j) * ni..(b * nj + j + 1) * ni];
            for i in 0..ni {
                let diff = xrow[i] - wrow[i];
                let t = urow[i] * diff;
                orow[i] = t * t;
            }
        }
    }
    let out = Tensor::new(vec![bsz, nj, ni], data)?;
    let (nx, nu, nw) = (x.requires_grad(), u.requires_grad(), w.requires_grad());
    let rule = move |g: &Tensor, _: &Tensor| {
        let mut gx = nx.then(|| Tensor::zeros(&[bsz, ni]));
        let mut gut = nu.then(|| Tensor::zeros(&[nj, ni]));
        let mut gwt = nw.then(|| Tensor::zeros(&[nj, ni]));
        for b in 0..bsz {
            let xrow = xv.row(b);
            for j in 0..nj {
                let urow = ut.row(j);
                let wrow = wt.row(j);
                let grow = &g.data()[(b * nj + j) * ni..(b * nj + j + 1) * ni];
                for i in 0..ni {
                    let gd = grow[i];
                    let diff = xrow[i] - wrow[i];
                    let t = urow[i] * diff;
                    let s = 2.0 * t;
                    if let Some(gu) = gut.as_mut() {
                        gu.data_mut()[j * ni + i] += gd * (s * diff);
                    }
                    let a = gd * (s * urow[i]);
                    if let Some(gx) = gx.as_mut() {
                        gx.data_mut()[b * ni + i] += a;
                    }
                    if let Some(gw) = gwt.as_mut() {
                        gw.data_mut()[j * ni + i] += -a;
                    }
                }
            }
        }
        vec![
            gx,
            gut.map(|t| t.transpose2d()),
            gwt.map(|t| t.transpose2d()),
        ]
    };
    Ok(Var::from_op(
        out,
        vec![x.clone(), u.clone(), w.clone()],
        Box::new(rule),
    ))
}

/// Forward kernel shared by the graph op and plain network evaluation.
/// Takes transposed parameters ([N_out, N_in]) and returns the per-unit
/// pre-exponential values m alongside the layer output.
pub(crate) fn rbfi_forward_plain(
    xv: &Tensor,
    ut: &Tensor,
    wt: &Tensor,
    kinds: &[UnitKind],
    gamma: Gamma,
) -> (Vec<f64>, Tensor) {
    let (bsz, nj, ni) = (xv.rows(), ut.rows(), ut.cols());
    let mut m = vec![0.0; bsz * nj];
    let mut data = vec![0.0; bsz * nj];
    for b in 0..bsz {
        let xrow = xv.row(b);
        for j in 0..nj {
            let urow = ut.row(j);
            let wrow = wt.row(j);
            let mv = match gamma {
                Gamma::Infinity => {
                    // Four independent lanes; max is exactly reorderable, so
                    // this matches the sequential scan bit for bit while
                    // letting the loop vectorize.
                    let mut b0 = f64::NEG_INFINITY;
                    let mut b1 = f64::NEG_INFINITY;
                    let mut b2 = f64::NEG_INFINITY;
                    let mut b3 = f64::NEG_INFINITY;
                    let mut i = 0;
                    while i + 4 <= ni {
                        let d0 = {
                            let t = urow[i] * (xrow[i] - wrow[i]);
                            t * t
                        };
                        let d1 = {
                            let t = urow[i + 1] * (xrow[i + 1] - wrow[i + 1]);
                            t * t
                        };
                        let d2 = {
                            let t = urow[i + 2] * (xrow[i + 2] - wrow[i + 2]);
                            t * t
                        };
                        let d3 = {
                            let t = urow[i + 3] * (xrow[i + 3] - wrow[i + 3]);
                            t * t
                        };
                        b0 = b0.max(d0);
                        b1 = b1.max(d1);
                        b2 = b2.max(d2);
                        b3 = b3.max(d3);
                        i += 4;
                    }
                    let mut best = b0.max(b1).max(b2).max(b3);
                    while i < ni {
                        let t = urow[i] * (xrow[i] - wrow[i]);
                        best = best.max(t * t);
                        i += 1;
                    }
                    best
                }
                Gamma::Two => {
                    let mut acc = 0.0;
                    for i in 0..ni {
                        let diff = xrow[i] - wrow[i];
                        let t = urow[i] * diff;
                        acc += t * t;
                    }
                    acc
                }
            };
            m[b * nj + j] = mv;
            let a = (-mv).exp();
            data[b * nj + j] = if kinds[j] == UnitKind::Or { 1.0 - a } else { a };
        }
    }
    (m, Tensor::new(vec![bsz, nj], data).unwrap())
}

/// Accumulates f(i) * d(d_i)/d{x,u,w} into whichever gradient rows exist.
/// The fallback path for rbfi_layer's backward; the hot mode/target
/// combinations get flat specializations at the call site.
fn scatter_row(
    xrow: &[f64],
    urow: &[f64],
    wrow: &[f64],
    mut gxr: Option<&mut [f64]>,
    mut gur: Option<&mut [f64]>,
    mut gwr: Option<&mut [f64]>,
    f: impl Fn(usize) -> f64,
) {
    for i in 0..xrow.len() {
        let fi = f(i);
        let diff = xrow[i] - wrow[i];
        let t = urow[i] * diff;
        let s = 2.0 * t;
        if let Some(gu) = gur.as_deref_mut() {
            gu[i] += fi * (s * diff);
        }
        let a = fi * (s * urow[i]);
        if let Some(gx) = gxr.as_deref_mut() {
            gx[i] += a;
        }
        if let Some(gw) = gwr.as_deref_mut() {
            gw[i] += -a;
        }
    }
}

/// scatter_row for a single surviving input (the true-gradient max).
#[allow(clippy::too_many_arguments)]
fn scatter_one(
    i: usize,
    f: f64,
    xrow: &[f64],
    urow: &[f64],
    wrow: &[f64],
    gxr: Option<&mut [f64]>,
    gur: Option<&mut [f64]>,
    gwr: Option<&mut [f64]>,
) {
    let diff = xrow[i] - wrow[i];
    let t = urow[i] * diff;
    let s = 2.0 * t;
    if let Some(gu) = gur {
        gu[i] += f * (s * diff);
    }
    let a = f * (s * urow[i]);
    if let Some(gx) = gxr {
        gx[i] += a;
    }
    if let Some(gw) = gwr {
        gw[i] += -a;
    }
}

/// One whole radial layer as a single fused operation, arithmetically
/// identical to scaled_sq_dist -> reduction -> exp_neg -> kind_mix but
/// without materializing the [B, N_out, N_in] intermediate. The composition
/// test in the ops test module pins the equivalence bitwise.
pub fn rbfi_layer(
    x: &Var,
    u: &Var,
    w: &Var,
    kinds: &[UnitKind],
    gamma: Gamma,
    mode: Mode,
) -> Result<Var> {
    let xv = x.value_clone();
    let uv = u.value_clone();
    let wv = w.value_clone();
    if xv.rank() != 2 || uv.rank() != 2 || wv.rank() != 2 {
        return Err(Error::Dimension("rbfi_layer needs rank-2 inputs".into()));
    }
    if uv.shape() != wv.shape() || xv.cols() != uv.rows() || uv.cols() != kinds.len() {
        return Err(Error::Dimension(format!(
            "rbfi_layer shapes x{:?} u{:?} w{:?}, {} kinds",
            xv.shape(),
            uv.shape(),
            wv.shape(),
            kinds.len()
        )));
    }
    let (bsz, ni, nj) = (xv.rows(), uv.rows(), uv.cols());
    if ni == 0 {
        return Err(Error::Dimension(
            "rbfi_layer needs at least one input".into(),
        ));
    }
    let ut = uv.transpose2d();
    let wt = wv.transpose2d();
    let kinds = kinds.to_vec();

    let (m, out) = rbfi_forward_plain(&xv, &ut, &wt, &kinds, gamma);
    let (nx, nu, nw) = (x.requires_grad(), u.requires_grad(), w.requires_grad());
    let rule = move |g: &Tensor, _: &Tensor| {
        let mut gx = nx.then(|| vec![0.0; bsz * ni]);
        let mut gut = nu.then(|| vec![0.0; nj * ni]);
        let mut gwt = nw.then(|| vec![0.0; nj * ni]);
        for b in 0..bsz {
            let xrow = xv.row(b);
            for j in 0..nj {
                let gout = g.data()[b * nj + j];
                if gout == 0.0 {
                    continue;
                }
                let ga = if kinds[j] == UnitKind::Or {
                    -gout
                } else {
                    gout
                };
                let mval = m[b * nj + j];
                let gm = match mode {
                    Mode::Pseudo => ga * (-1.0 / (1.0 + mval).sqrt()),
                    Mode::True => ga * (-(-mval).exp()),
                };
                let urow = ut.row(j);
                let wrow = wt.row(j);
                let gxr = gx.as_mut().map(|v| &mut v[b * ni..(b + 1) * ni]);
                let gur = gut.as_mut().map(|v| &mut v[j * ni..(j + 1) * ni]);
                let gwr = gwt.as_mut().map(|v| &mut v[j * ni..(j + 1) * ni]);
                match (gamma, mode) {
                    (Gamma::Infinity, Mode::Pseudo) => {
                        // The hot path of pseudogradient training: e^(d-m)
                        // shared feedback into every input of every unit.
                        // Gradient targets are matched once per row so the
                        // inner loops stay flat enough to vectorize.
                        match (gxr, gur, gwr) {
                            (None, Some(gur), Some(gwr)) => {
                                for i in 0..ni {
                                    let diff = xrow[i] - wrow[i];
                                    let t = urow[i] * diff;
                                    let d = t * t;
                                    let f = gm * fast_exp(d - mval);
                                    let s = 2.0 * t;
                                    gur[i] += f * (s * diff);
                                    gwr[i] += -(f * (s * urow[i]));
                                }
                            }
                            (Some(gxr), None, None) => {
                                for i in 0..ni {
                                    let diff = xrow[i] - wrow[i];
                                    let t = urow[i] * diff;
                                    let d = t * t;
                                    let f = gm * fast_exp(d - mval);
                                    let s = 2.0 * t;
                                    gxr[i] += f * (s * urow[i]);
                                }
                            }
                            (gxr, gur, gwr) => {
                                scatter_row(xrow, urow, wrow, gxr, gur, gwr, |i| {
                                    gm * fast_exp(
                                        {
                                            let t = urow[i] * (xrow[i] - wrow[i]);
                                            t * t
                                        } - mval,
                                    )
                                });
                            }
                        }
                    }
                    (Gamma::Infinity, Mode::True) => {
                        let mut best = 0;
                        let mut bestd = {
                            let diff = xrow[0] - wrow[0];
                            let t = urow[0] * diff;
                            t * t
                        };
                        for i in 1..ni {
                            let diff = xrow[i] - wrow[i];
                            let t = urow[i] * diff;
                            let d = t * t;
                            if d > bestd {
                                bestd = d;
                                best = i;
                            }
                        }
                        scatter_one(best, gm, xrow, urow, wrow, gxr, gur, gwr);
                    }
                    (Gamma::Two, _) => {
                        scatter_row(xrow, urow, wrow, gxr, gur, gwr, |_| gm);
                    }
                }
            }
        }
        vec![
            gx.map(|v| Tensor::new(vec![bsz, ni], v).unwrap()),
            gut.map(|v| Tensor::new(vec![nj, ni], v).unwrap().transpose2d()),
            gwt.map(|v| Tensor::new(vec![nj, ni], v).unwrap().transpose2d()),
        ]
    };
    Ok(Var::from_op(
        out,
        vec![x.clone(), u.clone(), w.clone()],
        Box::new(rule),
    ))
}

/// Mean over the batch of -log softmax(logits)[target], computed with
/// max-subtraction. Backward is (softmax - onehot)/B, the analytic form.
pub fn softmax_cross_entropy(logits: &Var, targets: &[u8]) -> Result<Var> {
    let lv = logits.value_clone();
    if lv.rank() != 2 {
        return Err(Error::Dimension(
            "softmax_cross_entropy needs [B,C] logits".into(),
        ));
    }
    let (bsz, c) = (lv.rows(), lv.cols());
    if targets.len() != bsz {
        return Err(Error::Usage(format!(
            "{} targets for batch of {bsz}",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| (t as usize) >= c) {
        return Err(Error::Usage(format!("class {t} out of range 0..{c}")));
    }
    let mut probs = Tensor::zeros(&[bsz, c]);
    let mut total = 0.0;
    for b in 0..bsz {
        let row = lv.row(b);
        let mx = row.iter().cloned().fold(row[0], f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - mx).exp();
        }
        let lse = mx + z.ln();
        total += lse - row[targets[b] as usize];
        let prow = &mut probs.data_mut()[b * c..(b + 1) * c];
        for (j, &v) in row.iter().enumerate() {
            prow[j] = (v - mx).exp() / z;
        }
    }
    let out = Tensor::scalar(total / bsz as f64);
    let targets = targets.to_vec();
    let rule = move |g: &Tensor, _: &Tensor| {
        let gs = g.item() / bsz as f64;
        let mut gl = Tensor::zeros(&[bsz, c]);
        for b in 0..bsz {
            let prow = probs.row(b);
            let grow = &mut gl.data_mut()[b * c..(b + 1) * c];
            for j in 0..c {
                let onehot = if j == targets[b] as usize { 1.0 } else { 0.0 };
                grow[j] = gs * (prow[j] - onehot);
            }
        }
        vec![Some(gl)]
    };
    Ok(Var::from_op(out, vec![logits.clone()], Box::new(rule)))
}
