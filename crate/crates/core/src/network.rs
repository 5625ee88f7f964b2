//! Radial and dense layers, geometry strings, network assembly.
//!
//! A radial unit with scale vector u and center w computes
//! exp(-max_i (u_i (x_i - w_i))^2) in its And form; the Or form is the
//! complement to 1. Geometry strings describe whole networks:
//! `R(128,128,10|mixed,mixed,or)`, `R2(...)` for the sum-of-squares variant,
//! `ReLU(64,64,10)`, `Sigmoid(64,10)`. An optional `[n]` after the family
//! name sets the input dimension (default 784).

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Mode, Var};
use crate::ops;
use crate::rng;
use crate::tensor::{matmul, Tensor};

pub const U_LO: f64 = 0.01;
pub const DEFAULT_U_MAX: f64 = 3.0;
pub const W_LO: f64 = 0.0;
pub const W_HI: f64 = 1.0;
pub const DEFAULT_INPUT_DIM: usize = 784;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    And,
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gamma {
    Two,
    Infinity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Rbfi,
    Relu,
    Sigmoid,
}

/// Per-layer kind declaration in a geometry string. `Mixed` resolves to a
/// random fixed And/Or assignment per unit at initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindCode {
    And,
    Or,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub family: Family,
    pub gamma: Gamma,
    pub input_dim: usize,
    pub layer_sizes: Vec<usize>,
    /// One entry per layer for radial families, empty for dense ones.
    pub layer_kind_codes: Vec<KindCode>,
    pub u_max: f64,
}

impl NetworkSpec {
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Normalized geometry string; two specs describe the same architecture
    /// iff their canonical forms are equal (u_max is carried separately).
    pub fn canonical(&self) -> String {
        let fam = match (self.family, self.gamma) {
            (Family::Rbfi, Gamma::Infinity) => "R",
            (Family::Rbfi, Gamma::Two) => "R2",
            (Family::Relu, _) => "ReLU",
            (Family::Sigmoid, _) => "Sigmoid",
        };
        let dim = if self.input_dim == DEFAULT_INPUT_DIM {
            String::new()
        } else {
            format!("[{}]", self.input_dim)
        };
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let mut out = format!("{fam}{dim}({}", sizes.join(","));
        if self.family == Family::Rbfi {
            let kinds: Vec<&str> = self
                .layer_kind_codes
                .iter()
                .map(|k| match k {
                    KindCode::And => "and",
                    KindCode::Or => "or",
                    KindCode::Mixed => "mixed",
                })
                .collect();
            out.push('|');
            out.push_str(&kinds.join(","));
        }
        out.push(')');
        out
    }
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner { src, pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += got.len_utf8();
                Ok(())
            }
            got => Err(Error::Parse {
                pos: self.pos,
                msg: format!("expected '{c}', found {}", describe(got)),
            }),
        }
    }

    fn word(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        for (off, ch) in self.src[start..].char_indices() {
            if !(ch.is_alphanumeric()
                || ch == '∧'
                || ch == '∨'
                || ch == '*'
                || ch == '∗'
                || ch == '^')
            {
                self.pos = start + off;
                return self.src[start..self.pos].to_string();
            }
        }
        self.pos = self.src.len();
        self.src[start..].to_string()
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.src[self.pos..].starts_with(|c: char| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                pos: start,
                msg: "expected a number".into(),
            });
        }
        self.src[start..self.pos].parse().map_err(|_| Error::Parse {
            pos: start,
            msg: "number out of range".into(),
        })
    }
}

fn describe(c: Option<char>) -> String {
    match c {
        Some(c) => format!("'{c}'"),
        None => "end of input".into(),
    }
}

/// Parse a geometry string into a network spec (default u_max).
pub fn parse_geometry(code: &str) -> Result<NetworkSpec> {
    let mut sc = Scanner::new(code);
    let fam_pos = sc.pos;
    let fam_word = sc.word();
    let (family, gamma) = match fam_word.to_ascii_lowercase().as_str() {
        "r" => (Family::Rbfi, Gamma::Infinity),
        "r2" => (Family::Rbfi, Gamma::Two),
        "relu" => (Family::Relu, Gamma::Infinity),
        "sigmoid" => (Family::Sigmoid, Gamma::Infinity),
        _ => {
            return Err(Error::Parse {
                pos: fam_pos,
                msg: format!("unknown family '{fam_word}' (expected R, R2, ReLU, or Sigmoid)"),
            })
        }
    };
    let mut input_dim = DEFAULT_INPUT_DIM;
    if sc.peek() == Some('[') {
        sc.eat('[')?;
        let pos = sc.pos;
        input_dim = sc.number()?;
        if input_dim == 0 {
            return Err(Error::Parse {
                pos,
                msg: "input dimension must be positive".into(),
            });
        }
        sc.eat(']')?;
    }
    sc.eat('(')?;
    let mut layer_sizes = Vec::new();
    loop {
        let pos = sc.pos;
        let n = sc.number()?;
        if n == 0 {
            return Err(Error::Parse {
                pos,
                msg: "layer size must be positive".into(),
            });
        }
        layer_sizes.push(n);
        if sc.peek() == Some(',') {
            sc.eat(',')?;
        } else {
            break;
        }
    }
    let mut layer_kind_codes = Vec::new();
    if family == Family::Rbfi {
        sc.eat('|')?;
        loop {
            let pos = sc.pos;
            let w = sc.word();
            let code = match w.to_ascii_lowercase().as_str() {
                "and" | "∧" | "^" => KindCode::And,
                "or" | "∨" | "v" => KindCode::Or,
                "mixed" | "*" | "∗" => KindCode::Mixed,
                _ => {
                    return Err(Error::Parse {
                        pos,
                        msg: format!("unknown layer kind '{w}' (expected and, or, mixed)"),
                    })
                }
            };
            layer_kind_codes.push(code);
            if sc.peek() == Some(',') {
                sc.eat(',')?;
            } else {
                break;
            }
        }
        if layer_kind_codes.len() != layer_sizes.len() {
            return Err(Error::Parse {
                pos: sc.pos,
                msg: format!(
                    "{} layer sizes but {} kinds",
                    layer_sizes.len(),
                    layer_kind_codes.len()
                ),
            });
        }
    }
    sc.eat(')')?;
    sc.skip_ws();
    if sc.pos != code.len() {
        return Err(Error::Parse {
            pos: sc.pos,
            msg: "trailing characters after geometry".into(),
        });
    }
    Ok(NetworkSpec {
        family,
        gamma,
        input_dim,
        layer_sizes,
        layer_kind_codes,
        u_max: DEFAULT_U_MAX,
    })
}

/// A trainable tensor with an enforced componentwise range.
#[derive(Clone, Debug)]
pub struct BoundedParam {
    pub value: Tensor,
    pub lo: f64,
    pub hi: f64,
}

impl BoundedParam {
    pub fn unbounded(value: Tensor) -> Self {
        BoundedParam {
            value,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn clamp(&mut self) {
        let (lo, hi) = (self.lo, self.hi);
        for v in self.value.data_mut() {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.value
            .data()
            .iter()
            .all(|&v| v >= self.lo && v <= self.hi)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Rbfi {
        /// [N_in, N_out] per-input scales, bounded to [U_LO, u_max].
        u: BoundedParam,
        /// [N_in, N_out] centers, bounded to [W_LO, W_HI].
        w: BoundedParam,
        kinds: Vec<UnitKind>,
        gamma: Gamma,
    },
    Dense {
        w: BoundedParam,
        b: BoundedParam,
        activation: Activation,
    },
}

impl Layer {
    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Rbfi { u, .. } => u.value.cols(),
            Layer::Dense { w, .. } => w.value.cols(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Rbfi { u, .. } => u.value.rows(),
            Layer::Dense { w, .. } => w.value.rows(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

/// Layer parameters bound into a live graph, for building loss terms that
/// depend on them (the sensitivity bound).
pub enum LayerView {
    Rbfi { u: Var, gamma: Gamma },
    Dense { w: Var, activation: Activation },
}

/// A network forward pass recorded as a graph: output node, one leaf per
/// parameter in `params()` order, and per-layer views of those leaves.
pub struct GraphNet {
    pub out: Var,
    pub leaves: Vec<Var>,
    pub views: Vec<LayerView>,
}

/// Draw a fresh network. The same seed always yields bitwise-identical
/// parameters: draws happen in a fixed order (per layer: w, then u, then
/// mixed-kind coins; dense: W then nothing for the zero bias).
pub fn init_network(spec: &NetworkSpec, rng_seed: u64) -> Network {
    let mut rng = rng::stream_from(rng_seed);
    let mut layers = Vec::new();
    let mut n_in = spec.input_dim;
    for (idx, &n_out) in spec.layer_sizes.iter().enumerate() {
        match spec.family {
            Family::Rbfi => {
                let mut w = Tensor::zeros(&[n_in, n_out]);
                for v in w.data_mut() {
                    *v = rng.random_range(W_LO..W_HI);
                }
                // u starts at most 1.0 so early training is not stuck in the
                // flat tail of the exponential
                let u_init_hi = spec.u_max.min(1.0);
                let mut u = Tensor::zeros(&[n_in, n_out]);
                for v in u.data_mut() {
                    *v = rng.random_range(U_LO..u_init_hi);
                }
                let kinds: Vec<UnitKind> = match spec.layer_kind_codes[idx] {
                    KindCode::And => vec![UnitKind::And; n_out],
                    KindCode::Or => vec![UnitKind::Or; n_out],
                    KindCode::Mixed => (0..n_out)
                        .map(|_| {
                            if rng.random::<bool>() {
                                UnitKind::And
                            } else {
                                UnitKind::Or
                            }
                        })
                        .collect(),
                };
                layers.push(Layer::Rbfi {
                    u: BoundedParam {
                        value: u,
                        lo: U_LO,
                        hi: spec.u_max,
                    },
                    w: BoundedParam {
                        value: w,
                        lo: W_LO,
                        hi: W_HI,
                    },
                    kinds,
                    gamma: spec.gamma,
                });
            }
            Family::Relu | Family::Sigmoid => {
                let a = (6.0 / (n_in + n_out) as f64).sqrt();
                let mut w = Tensor::zeros(&[n_in, n_out]);
                for v in w.data_mut() {
                    *v = rng.random_range(-a..a);
                }
                let activation = if spec.family == Family::Sigmoid {
                    Activation::Sigmoid
                } else if idx + 1 == spec.layer_sizes.len() {
                    Activation::None
                } else {
                    Activation::Relu
                };
                layers.push(Layer::Dense {
                    w: BoundedParam::unbounded(w),
                    b: BoundedParam::unbounded(Tensor::zeros(&[n_out])),
                    activation,
                });
            }
        }
        n_in = n_out;
    }
    Network {
        spec: spec.clone(),
        layers,
    }
}

fn dense_forward_plain(x: &Tensor, w: &Tensor, b: &Tensor, activation: Activation) -> Tensor {
    let mut out = matmul(x, w).unwrap();
    let m = out.cols();
    for r in 0..out.rows() {
        let row = &mut out.data_mut()[r * m..(r + 1) * m];
        for j in 0..m {
            row[j] += b.data()[j];
        }
    }
    match activation {
        Activation::Relu => out.map(|v| v.max(0.0)),
        Activation::Sigmoid => out.map(|v| 1.0 / (1.0 + (-v).exp())),
        Activation::None => out,
    }
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn params(&self) -> Vec<&BoundedParam> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Rbfi { u, w, .. } => {
                    out.push(u);
                    out.push(w);
                }
                Layer::Dense { w, b, .. } => {
                    out.push(w);
                    out.push(b);
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut BoundedParam> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Rbfi { u, w, .. } => {
                    out.push(u);
                    out.push(w);
                }
                Layer::Dense { w, b, .. } => {
                    out.push(w);
                    out.push(b);
                }
            }
        }
        out
    }

    pub fn all_in_bounds(&self) -> bool {
        self.params().iter().all(|p| p.in_bounds())
    }

    /// Plain forward evaluation (no graph). Identical arithmetic to the
    /// graph path, which the tests pin down.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input shape {:?}, want [B,{}]",
                x.shape(),
                self.input_dim()
            )));
        }
        let mut cur = x.clone();
        for l in &self.layers {
            cur = match l {
                Layer::Rbfi { u, w, kinds, gamma } => {
                    let ut = u.value.transpose2d();
                    let wt = w.value.transpose2d();
                    ops::rbfi_forward_plain(&cur, &ut, &wt, kinds, *gamma).1
                }
                Layer::Dense { w, b, activation } => {
                    dense_forward_plain(&cur, &w.value, &b.value, *activation)
                }
            };
        }
        Ok(cur)
    }

    /// Record a forward pass as a differentiation graph. `train_params`
    /// decides whether parameters are gradient leaves (training) or
    /// constants (attacks differentiate the input only).
    pub fn forward_graph(&self, x: &Var, mode: Mode, train_params: bool) -> Result<GraphNet> {
        let bind = |t: &Tensor| {
            if train_params {
                Var::leaf(t.clone())
            } else {
                Var::constant(t.clone())
            }
        };
        let mut leaves = Vec::new();
        let mut views = Vec::new();
        let mut cur = x.clone();
        for l in &self.layers {
            match l {
                Layer::Rbfi { u, w, kinds, gamma } => {
                    let uv = bind(&u.value);
                    let wv = bind(&w.value);
                    cur = ops::rbfi_layer(&cur, &uv, &wv, kinds, *gamma, mode)?;
                    views.push(LayerView::Rbfi {
                        u: uv.clone(),
                        gamma: *gamma,
                    });
                    leaves.push(uv);
                    leaves.push(wv);
                }
                Layer::Dense { w, b, activation } => {
                    let wv = bind(&w.value);
                    let bv = bind(&b.value);
                    cur = ops::affine(&cur, &wv, &bv)?;
                    cur = match activation {
                        Activation::Relu => ops::relu(&cur),
                        Activation::Sigmoid => ops::sigmoid(&cur),
                        Activation::None => cur,
                    };
                    views.push(LayerView::Dense {
                        w: wv.clone(),
                        activation: *activation,
                    });
                    leaves.push(wv);
                    leaves.push(bv);
                }
            }
        }
        Ok(GraphNet {
            out: cur,
            leaves,
            views,
        })
    }

    /// Predicted class per row: argmax, lowest index on ties.
    pub fn classify(&self, x: &Tensor) -> Result<Vec<usize>> {
        let out = self.forward(x)?;
        let c = out.cols();
        Ok((0..out.rows())
            .map(|r| {
                let row = out.row(r);
                let mut best = 0;
                for j in 1..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Fraction of examples classified correctly, evaluated in batches.
    pub fn accuracy(&self, images: &Tensor, labels: &[u8], batch: usize) -> Result<f64> {
        let n = images.rows();
        if n == 0 {
            return Ok(0.0);
        }
        let cols = images.cols();
        let mut correct = 0usize;
        let mut start = 0;
        while start < n {
            let stop = (start + batch).min(n);
            let chunk = Tensor::new(
                vec![stop - start, cols],
                images.data()[start * cols..stop * cols].to_vec(),
            )?;
            let preds = self.classify(&chunk)?;
            for (p, &l) in preds.iter().zip(&labels[start..stop]) {
                if *p == l as usize {
                    correct += 1;
                }
            }
            start = stop;
        }
        Ok(correct as f64 / n as f64)
    }

    /// Reorder input features: feature i of the permuted network corresponds
    /// to feature perm[i] of the original, matching a dataset whose columns
    /// were rearranged the same way.
    pub fn permute_input_features(&mut self, perm: &[usize]) -> Result<()> {
        let n = self.input_dim();
        let mut seen = vec![false; n];
        if perm.len() != n
            || !perm
                .iter()
                .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
        {
            return Err(Error::Usage(format!("not a permutation of 0..{n}")));
        }
        let reorder = |t: &Tensor| {
            let cols = t.cols();
            let mut out = Tensor::zeros(&[n, cols]);
            for (i_new, &i_old) in perm.iter().enumerate() {
                let src = t.row(i_old).to_vec();
                out.data_mut()[i_new * cols..(i_new + 1) * cols].copy_from_slice(&src);
            }
            out
        };
        match &mut self.layers[0] {
            Layer::Rbfi { u, w, .. } => {
                u.value = reorder(&u.value);
                w.value = reorder(&w.value);
            }
            Layer::Dense { w, .. } => {
                w.value = reorder(&w.value);
            }
        }
        Ok(())
    }
}
