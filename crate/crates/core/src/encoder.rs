//! Graph encoders (GCN, GraphSAGE-GCN, MLP) and the batch-normalized projector.

use std::fmt;
use std::ops::Range;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::autodiff::{BlockDiag, Tape, Tensor, Var};
use crate::error::{Result, RosaError};
use crate::graph::Subgraph;
use crate::rng::{self, Purpose};

/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncoderKind {
    #[default]
    Gcn,
    Sage,
    Mlp,
}

impl FromStr for EncoderKind {
    type Err = RosaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(EncoderKind::Gcn),
            "sage" => Ok(EncoderKind::Sage),
            "mlp" => Ok(EncoderKind::Mlp),
            other => Err(RosaError::Config(format!("unknown encoder `{other}` (gcn, sage, mlp)"))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Gcn => "gcn",
            EncoderKind::Sage => "sage",
            EncoderKind::Mlp => "mlp",
        })
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, stream: u64) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = rng::stream(stream, Purpose::Init, &[]);
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub w1: Tensor,
    pub w2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    /// Applied to mean-aggregated neighborhood features.
    pub w_msg: Tensor,
    /// Applied to the node's own features.
    pub w_self: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageParams {
    pub layers: Vec<SageLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Gcn(GcnParams),
    Sage(SageParams),
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Batch statistics produced by a training-mode projector pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Tensor,
    /// Unbiased batch variance.
    pub var: Tensor,
}

/// Encoder plus projector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub projector: ProjectorParams,
}

impl Encoder {
    pub fn init(kind: EncoderKind, in_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || hidden == 0 {
            return Err(RosaError::Config("encoder dimensions must be positive".into()));
        }
        let init = |k: u64, fi: usize, fo: usize| glorot_init(fi, fo, rng::stream_seed(seed, Purpose::Init, &[k]));
        Ok(match kind {
            EncoderKind::Gcn => Encoder::Gcn(GcnParams {
                w1: init(0, in_dim, hidden),
                w2: init(1, hidden, hidden),
            }),
            EncoderKind::Sage => {
                if hidden < 2 {
                    return Err(RosaError::Config("sage encoder needs hidden_size >= 2".into()));
                }
                let self_dim = hidden / 2;
                let msg_dim = hidden - self_dim;
                let layers = (0..3)
                    .map(|l| {
                        let fi = if l == 0 { in_dim } else { hidden };
                        SageLayer {
                            w_msg: init(2 * l as u64, fi, msg_dim),
                            w_self: init(2 * l as u64 + 1, fi, self_dim),
                        }
                    })
                    .collect();
                Encoder::Sage(SageParams { layers })
            }
            EncoderKind::Mlp => Encoder::Mlp(MlpParams {
                w1: init(0, in_dim, hidden),
                b1: Array2::zeros((1, hidden)),
                w2: init(1, hidden, hidden),
                b2: Array2::zeros((1, hidden)),
            }),
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Gcn(_) => EncoderKind::Gcn,
            Encoder::Sage(_) => EncoderKind::Sage,
            Encoder::Mlp(_) => EncoderKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Gcn(p) => p.w1.nrows(),
            Encoder::Sage(p) => p.layers[0].w_msg.nrows(),
            Encoder::Mlp(p) => p.w1.nrows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Gcn(p) => p.w2.ncols(),
            Encoder::Sage(p) => {
                let last = p.layers.last().expect("three layers");
                last.w_msg.ncols() + last.w_self.ncols()
            }
            Encoder::Mlp(p) => p.w2.ncols(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        match self {
            Encoder::Gcn(p) => vec![("encoder.w1".into(), &p.w1), ("encoder.w2".into(), &p.w2)],
            Encoder::Sage(p) => p
                .layers
                .iter()
                .enumerate()
                .flat_map(|(i, l)| [(format!("encoder.layer{i}.w_msg"), &l.w_msg), (format!("encoder.layer{i}.w_self"), &l.w_self)])
                .collect(),
            Encoder::Mlp(p) => vec![
                ("encoder.w1".into(), &p.w1),
                ("encoder.b1".into(), &p.b1),
                ("encoder.w2".into(), &p.w2),
                ("encoder.b2".into(), &p.b2),
            ],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Encoder::Gcn(p) => vec![&mut p.w1, &mut p.w2],
            Encoder::Sage(p) => p.layers.iter_mut().flat_map(|l| [&mut l.w_msg, &mut l.w_self]).collect(),
            Encoder::Mlp(p) => vec![&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2],
        }
    }
}

impl ProjectorParams {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let init = |k: u64, fi: usize, fo: usize| glorot_init(fi, fo, rng::stream_seed(seed, Purpose::Init, &[100 + k]));
        ProjectorParams {
            w1: init(0, in_dim, out_dim),
            b1: Array2::zeros((1, out_dim)),
            bn_scale: Array2::ones((1, out_dim)),
            bn_shift: Array2::zeros((1, out_dim)),
            w2: init(1, out_dim, out_dim),
            b2: Array2::zeros((1, out_dim)),
            running_mean: Array2::zeros((1, out_dim)),
            running_var: Array2::ones((1, out_dim)),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("projector.w1".into(), &self.w1),
            ("projector.b1".into(), &self.b1),
            ("projector.bn_scale".into(), &self.bn_scale),
            ("projector.bn_shift".into(), &self.bn_shift),
            ("projector.w2".into(), &self.w2),
            ("projector.b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.bn_scale,
            &mut self.bn_shift,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("projector.running_mean".into(), &self.running_mean),
            ("projector.running_var".into(), &self.running_var),
        ]
    }

    /// Folds one batch into the running statistics.
    pub fn update_running(&mut self, stats: &BnStats) {
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &stats.mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + &stats.var * BN_MOMENTUM;
    }
}

impl Model {
    pub fn init(kind: EncoderKind, in_dim: usize, hidden: usize, proj_dim: usize, seed: u64) -> Result<Self> {
        let encoder = Encoder::init(kind, in_dim, hidden, seed)?;
        let projector = ProjectorParams::init(encoder.output_dim(), proj_dim, seed);
        Ok(Model { encoder, projector })
    }

    /// Trainable tensors in a fixed order: encoder first, then projector.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named();
        out.extend(self.projector.named());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.projector.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().len()
    }

    /// Registers every trainable tensor as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars = self.named_params().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
        BoundModel {
            vars,
            encoder_len: self.encoder.named().len(),
        }
    }

    /// Registers every trainable tensor as an untracked constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundModel {
        let vars = self.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        BoundModel {
            vars,
            encoder_len: self.encoder.named().len(),
        }
    }
}

/// Tape handles of a model's parameters, in [`Model::named_params`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub vars: Vec<Var>,
    encoder_len: usize,
}

impl BoundModel {
    fn enc(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn proj(&self, i: usize) -> Var {
        self.vars[self.encoder_len + i]
    }
}

/// Symmetrically normalized adjacency with self-loops, `D̂^{-1/2} (A + I) D̂^{-1/2}`.
pub fn normalize_adjacency(sg: &Subgraph) -> Array2<f64> {
    let n = sg.num_nodes();
    let mut a = Array2::<f64>::eye(n);
    for &(i, j) in &sg.edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    let inv_sqrt: Vec<f64> = a.sum_axis(Axis(1)).iter().map(|d| 1.0 / d.sqrt()).collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    a
}

/// Row-normalized adjacency with self-loops, `D̂^{-1} (A + I)`.
pub fn mean_adjacency(sg: &Subgraph) -> Array2<f64> {
    let n = sg.num_nodes();
    let mut a = Array2::<f64>::eye(n);
    for &(i, j) in &sg.edges {
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    for mut row in a.rows_mut() {
        let d = row.sum();
        row.mapv_inplace(|v| v / d);
    }
    a
}

/// A set of views stacked row-wise, with their propagation operators.
#[derive(Debug, Clone)]
pub struct ViewStack {
    pub features: Array2<f64>,
    pub ranges: Vec<Range<usize>>,
    pub gcn_op: Rc<BlockDiag>,
    pub mean_op: Rc<BlockDiag>,
}

impl ViewStack {
    pub fn new(views: &[&Subgraph]) -> Result<Self> {
        if views.is_empty() {
            return Err(RosaError::shape("view stack", "no views"));
        }
        let d = views[0].features.ncols();
        let mut ranges = Vec::with_capacity(views.len());
        let mut offset = 0;
        for v in views {
            if v.features.ncols() != d || v.features.nrows() != v.num_nodes() {
                return Err(RosaError::shape("view stack", "inconsistent view feature shapes"));
            }
            ranges.push(offset..offset + v.num_nodes());
            offset += v.num_nodes();
        }
        let parts: Vec<_> = views.iter().map(|v| v.features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &parts).map_err(|e| RosaError::shape("view stack", e.to_string()))?;
        Ok(ViewStack {
            features,
            ranges,
            gcn_op: Rc::new(BlockDiag::new(views.iter().map(|v| normalize_adjacency(v)).collect())),
            mean_op: Rc::new(BlockDiag::new(views.iter().map(|v| mean_adjacency(v)).collect())),
        })
    }

    pub fn num_rows(&self) -> usize {
        self.features.nrows()
    }
}

fn add_bias(tape: &mut Tape, x: Var, b: Var) -> Result<Var> {
    tape.add(x, b)
}

/// Encoder forward over stacked views. `x` must have one row per stacked node.
pub fn encode(tape: &mut Tape, model: &Model, bound: &BoundModel, stack: &ViewStack, x: Var) -> Result<Var> {
    let (rows, cols) = tape.shape(x);
    if rows != stack.num_rows() || cols != model.encoder.input_dim() {
        return Err(RosaError::shape(
            "encode",
            format!("input {rows}x{cols}, expected {}x{}", stack.num_rows(), model.encoder.input_dim()),
        ));
    }
    match &model.encoder {
        Encoder::Gcn(_) => {
            let mut h = x;
            for layer in 0..2 {
                let xw = tape.matmul(h, bound.enc(layer))?;
                let p = tape.propagate(stack.gcn_op.clone(), xw)?;
                h = tape.relu(p);
            }
            Ok(h)
        }
        Encoder::Sage(p) => {
            let mut h = x;
            for layer in 0..p.layers.len() {
                let msg_in = tape.matmul(h, bound.enc(2 * layer))?;
                let msg = tape.propagate(stack.mean_op.clone(), msg_in)?;
                let own = tape.matmul(h, bound.enc(2 * layer + 1))?;
                let cat = tape.concat_cols(&[own, msg])?;
                h = tape.relu(cat);
            }
            Ok(h)
        }
        Encoder::Mlp(_) => {
            let a = tape.matmul(x, bound.enc(0))?;
            let a = add_bias(tape, a, bound.enc(1))?;
            let a = tape.relu(a);
            let b = tape.matmul(a, bound.enc(2))?;
            let b = add_bias(tape, b, bound.enc(3))?;
            Ok(tape.relu(b))
        }
    }
}

/// Projector forward. Training mode normalizes with batch statistics and
/// returns them; inference mode uses the running statistics.
pub fn project(tape: &mut Tape, model: &Model, bound: &BoundModel, h: Var, training: bool) -> Result<(Var, Option<BnStats>)> {
    let p = &model.projector;
    let a = tape.matmul(h, bound.proj(0))?;
    let a = add_bias(tape, a, bound.proj(1))?;
    let n = tape.shape(a).0;
    let (normed, stats) = if training {
        if n < 2 {
            return Err(RosaError::shape("projector", "training-mode normalization needs at least two rows"));
        }
        let mu = tape.mean_rows(a);
        let centered = tape.sub(a, mu)?;
        let sq = tape.mul(centered, centered)?;
        let var = tape.mean_rows(sq);
        let var_eps = tape.affine(var, 1.0, BN_EPS);
        let sd = tape.sqrt(var_eps)?;
        let normed = tape.div(centered, sd)?;
        let stats = BnStats {
            mean: tape.value(mu).clone(),
            var: tape.value(var) * (n as f64 / (n as f64 - 1.0)),
        };
        (normed, Some(stats))
    } else {
        let mu = tape.constant(p.running_mean.clone());
        let sd = tape.constant(p.running_var.mapv(|v| (v + BN_EPS).sqrt()));
        let centered = tape.sub(a, mu)?;
        (tape.div(centered, sd)?, None)
    };
    let scaled = tape.mul(normed, bound.proj(2))?;
    let shifted = tape.add(scaled, bound.proj(3))?;
    let act = tape.relu(shifted);
    let z = tape.matmul(act, bound.proj(4))?;
    let z = add_bias(tape, z, bound.proj(5))?;
    Ok((z, stats))
}

fn single_view_forward(encoder: Encoder, sg: &Subgraph, features: &Tensor) -> Result<Tensor> {
    if features.nrows() != sg.num_nodes() {
        return Err(RosaError::shape("encoder", format!("{} feature rows for {} nodes", features.nrows(), sg.num_nodes())));
    }
    let model = Model {
        projector: ProjectorParams::init(encoder.output_dim(), 1, 0),
        encoder,
    };
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let view = Subgraph {
        features: features.clone(),
        ..sg.clone()
    };
    let stack = ViewStack::new(&[&view])?;
    let x = tape.constant(features.clone());
    let h = encode(&mut tape, &model, &bound, &stack, x)?;
    Ok(tape.value(h).clone())
}

/// `H = σ(N · σ(N · X · W1) · W2)` with `N` the normalized adjacency of `sg`.
pub fn gcn_forward(params: &GcnParams, sg: &Subgraph, features: &Tensor) -> Result<Tensor> {
    single_view_forward(Encoder::Gcn(params.clone()), sg, features)
}

/// Three layers of `σ(X W' ‖ D̂^{-1} Â X W)`.
pub fn sage_forward(params: &SageParams, sg: &Subgraph, features: &Tensor) -> Result<Tensor> {
    single_view_forward(Encoder::Sage(params.clone()), sg, features)
}

/// Two dense ReLU layers; graph structure is ignored.
pub fn mlp_forward(params: &MlpParams, features: &Tensor) -> Result<Tensor> {
    let n = features.nrows();
    let sg = Subgraph {
        central: 0,
        nodes: (0..n).collect(),
        edges: Vec::new(),
        features: features.clone(),
    };
    single_view_forward(Encoder::Mlp(params.clone()), &sg, features)
}

pub fn projector_forward(params: &ProjectorParams, h: &Tensor, training: bool) -> Result<(Tensor, Option<BnStats>)> {
    let d = params.w1.nrows();
    let model = Model {
        encoder: Encoder::Mlp(MlpParams {
            w1: Array2::zeros((d, 1)),
            b1: Array2::zeros((1, 1)),
            w2: Array2::zeros((1, 1)),
            b2: Array2::zeros((1, 1)),
        }),
        projector: params.clone(),
    };
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let hv = tape.constant(h.clone());
    let (z, stats) = project(&mut tape, &model, &bound, hv, training)?;
    Ok((tape.value(z).clone(), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn sg(n: usize, edges: &[(usize, usize)], features: Array2<f64>) -> Subgraph {
        Subgraph {
            central: 0,
            nodes: (0..n).collect(),
            edges: edges.to_vec(),
            features,
        }
    }

    #[test]
    fn normalized_adjacency_small_cases() {
        assert_eq!(normalize_adjacency(&sg(1, &[], Array2::zeros((1, 1)))), array![[1.0]]);
        let two = normalize_adjacency(&sg(2, &[(0, 1)], Array2::zeros((2, 1))));
        for v in two.iter() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn mean_adjacency_rows_sum_to_one() {
        let m = mean_adjacency(&sg(4, &[(0, 1), (1, 2), (1, 3)], Array2::zeros((4, 1))));
        for row in m.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn gcn_single_node_identity() {
        let p = GcnParams {
            w1: Array2::eye(2),
            w2: Array2::eye(2),
        };
        let x = array![[0.3, 1.2]];
        assert_eq!(gcn_forward(&p, &sg(1, &[], x.clone()), &x).unwrap(), x);
    }

    #[test]
    fn gcn_zero_features_zero_output() {
        let p = match Encoder::init(EncoderKind::Gcn, 3, 4, 1).unwrap() {
            Encoder::Gcn(p) => p,
            _ => unreachable!(),
        };
        let x = Array2::zeros((3, 3));
        let out = gcn_forward(&p, &sg(3, &[(0, 1), (1, 2)], x.clone()), &x).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_two_nodes_hand_computed() {
        // N = [[.5,.5],[.5,.5]]; X W1 rows: [1,2]·W1, [3,-1]·W1.
        let p = GcnParams {
            w1: array![[1.0, 0.0], [0.5, -1.0]],
            w2: array![[1.0, 2.0], [-1.0, 1.0]],
        };
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        // X W1 = [[2, -2], [2.5, 1]]; N·XW1 = [[2.25, -0.5]; same]; relu -> [[2.25, 0]]x2
        // · W2 = [[2.25, 4.5]]x2; N· = same; relu -> same.
        let out = gcn_forward(&p, &sg(2, &[(0, 1)], x.clone()), &x).unwrap();
        let expected = array![[2.25, 4.5], [2.25, 4.5]];
        for (a, b) in out.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sage_single_node_concat() {
        let w = array![[1.0], [2.0]];
        let wp = array![[-1.0], [0.5]];
        let p = SageParams {
            layers: vec![SageLayer {
                w_msg: w.clone(),
                w_self: wp.clone(),
            }],
        };
        let x = array![[1.0, 1.0]];
        // self: 1*-1 + 1*.5 = -.5 -> relu 0; msg: 3
        assert_eq!(sage_forward(&p, &sg(1, &[], x.clone()), &x).unwrap(), array![[0.0, 3.0]]);
    }

    #[test]
    fn sage_path_one_layer_hand_computed() {
        let p = SageParams {
            layers: vec![SageLayer {
                w_msg: array![[1.0], [0.0]],
                w_self: array![[0.0], [1.0]],
            }],
        };
        let x = array![[3.0, 1.0], [6.0, 2.0], [0.0, 4.0]];
        // mean adjacency of path 0-1-2 with self loops: row0 (0,1)/2, row1 (0,1,2)/3, row2 (1,2)/2
        // msg col = [4.5, 3, 3]; self col = [1, 2, 4]
        let out = sage_forward(&p, &sg(3, &[(0, 1), (1, 2)], x.clone()), &x).unwrap();
        let expected = array![[1.0, 4.5], [2.0, 3.0], [4.0, 3.0]];
        for (a, b) in out.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mlp_identity_weights_is_relu() {
        let p = MlpParams {
            w1: Array2::eye(3),
            b1: Array2::zeros((1, 3)),
            w2: Array2::eye(3),
            b2: Array2::zeros((1, 3)),
        };
        let x = array![[1.0, -2.0, 0.5], [-1.0, 0.0, 3.0]];
        assert_eq!(mlp_forward(&p, &x).unwrap(), x.mapv(|v| v.max(0.0)));
    }

    #[test]
    fn mlp_hand_computed() {
        let p = MlpParams {
            w1: array![[1.0, -1.0], [2.0, 0.5]],
            b1: array![[0.1, 0.2]],
            w2: array![[1.0], [3.0]],
            b2: array![[-0.5]],
        };
        let x = array![[1.0, 1.0]];
        // layer1 = [3.1, -0.3] -> [3.1, 0]; layer2 = 3.1 - .5 = 2.6
        assert_abs_diff_eq!(mlp_forward(&p, &x).unwrap()[[0, 0]], 2.6, epsilon = 1e-12);
    }

    #[test]
    fn projector_batch_stats_normalize() {
        let mut p = ProjectorParams::init(3, 3, 0);
        p.w1 = Array2::eye(3);
        p.w2 = Array2::eye(3);
        let h = array![[1.0, 2.0, -1.0], [3.0, 0.0, 4.0], [-2.0, 5.0, 1.0], [0.5, 1.0, 0.0]];
        let (z, stats) = projector_forward(&p, &h, true).unwrap();
        assert_eq!(z.dim(), (4, 3));
        let stats = stats.unwrap();
        let mean = h.mean_axis(Axis(0)).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(stats.mean[[0, j]], mean[j], epsilon = 1e-12);
            let col = h.column(j);
            let var = col.mapv(|v| (v - mean[j]).powi(2)).sum() / 3.0;
            assert_abs_diff_eq!(stats.var[[0, j]], var, epsilon = 1e-12);
            // identity weights, unit scale: z = relu(normalized); normalized has mean 0, var ~1
            let biased = var * 3.0 / 4.0;
            let normed: Vec<f64> = col.iter().map(|v| (v - mean[j]) / (biased + BN_EPS).sqrt()).collect();
            let m: f64 = normed.iter().sum::<f64>() / 4.0;
            let v: f64 = normed.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-4);
            for (r, nv) in normed.iter().enumerate() {
                assert_abs_diff_eq!(z[[r, j]], nv.max(0.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projector_single_row_training_rejected() {
        let p = ProjectorParams::init(2, 2, 0);
        assert!(projector_forward(&p, &array![[1.0, 2.0]], true).is_err());
        assert_eq!(projector_forward(&p, &array![[1.0, 2.0]], false).unwrap().0.dim(), (1, 2));
    }

    #[test]
    fn projector_inference_identity_for_standard_stats() {
        let mut p = ProjectorParams::init(2, 2, 0);
        p.w1 = Array2::eye(2);
        p.w2 = Array2::eye(2);
        let h = array![[0.5, 2.0]];
        let (z, _) = projector_forward(&p, &h, false).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        assert_abs_diff_eq!(z[[0, 0]], 0.5 * k, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[0, 1]], 2.0 * k, epsilon = 1e-12);
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let w = glorot_init(30, 20, 5);
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
        assert_eq!(w, glorot_init(30, 20, 5));
        assert_ne!(w, glorot_init(30, 20, 6));
    }

    #[test]
    fn glorot_variance() {
        let w = glorot_init(400, 250, 11);
        let mean = w.mean().unwrap();
        let var = w.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        let expected = 2.0 / 650.0;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
    }

    #[test]
    fn sage_output_dim_matches_hidden() {
        let e = Encoder::init(EncoderKind::Sage, 5, 7, 0).unwrap();
        assert_eq!(e.output_dim(), 7);
        let x = Array2::from_elem((2, 5), 0.3);
        let p = match e {
            Encoder::Sage(p) => p,
            _ => unreachable!(),
        };
        assert_eq!(sage_forward(&p, &sg(2, &[(0, 1)], x.clone()), &x).unwrap().dim(), (2, 7));
    }
}
