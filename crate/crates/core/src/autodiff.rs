//! Dense reverse-mode differentiation over rank-2 `f64` tensors.
//!
//! Every value is an [`ndarray::Array2<f64>`]; vectors are `1×n` or `n×1`
//! and scalars are `1×1`. A [`Tape`] owns the forward values of every
//! recorded operation, and [`Tape::backward`] walks the records in reverse
//! insertion order (which is a reverse topological order, since operands
//! always precede their results) accumulating adjoints by summation.
//!
//! Binary elementwise operations broadcast their right operand when it is
//! `1×m` (a row), `n×1` (a column) or `1×1`.
//!
//! Conventions: the ReLU subgradient at zero is zero; `exp` clamps its input
//! at −700; `log` refuses non-positive inputs; row normalization clamps norms
//! below [`NORM_EPS`].

use std::collections::HashMap;
use std::ops::Range;
use std::rc::Rc;

use ndarray::{s, Array2, Axis};

use crate::error::{Result, RosaError};

pub type Tensor = Array2<f64>;

/// Lower clamp applied to row norms before dividing.
pub const NORM_EPS: f64 = 1e-12;
const EXP_FLOOR: f64 = -700.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// A fixed block-diagonal linear operator applied on the left: `out = P · x`.
#[derive(Debug, Clone)]
pub struct BlockDiag {
    blocks: Vec<(usize, Array2<f64>)>,
    dim: usize,
}

impl BlockDiag {
    /// Stacks square blocks along the diagonal in the given order.
    pub fn new(blocks: Vec<Array2<f64>>) -> Self {
        let mut offset = 0;
        let mut out = Vec::with_capacity(blocks.len());
        for b in blocks {
            assert_eq!(b.nrows(), b.ncols(), "block-diagonal blocks must be square");
            let n = b.nrows();
            out.push((offset, b));
            offset += n;
        }
        BlockDiag {
            blocks: out,
            dim: offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> impl Iterator<Item = (usize, &Array2<f64>)> {
        self.blocks.iter().map(|(o, b)| (*o, b))
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (offset, b) in &self.blocks {
            let n = b.nrows();
            let rows = x.slice(s![*offset..offset + n, ..]);
            out.slice_mut(s![*offset..offset + n, ..]).assign(&b.dot(&rows));
        }
        out
    }

    pub fn apply_transposed(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (offset, b) in &self.blocks {
            let n = b.nrows();
            let rows = x.slice(s![*offset..offset + n, ..]);
            out.slice_mut(s![*offset..offset + n, ..]).assign(&b.t().dot(&rows));
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for (offset, b) in &self.blocks {
            let n = b.nrows();
            out.slice_mut(s![*offset..offset + n, *offset..offset + n]).assign(b);
        }
        out
    }
}

/// One output entry of [`Tape::block_contract`]: `Σ weights ⊙ src[rows, cols]`.
#[derive(Debug, Clone)]
pub struct ContractBlock {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub weights: Array2<f64>,
    /// Flat row-major index into the output matrix.
    pub out: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Neg(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Transpose(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    RowNormalize(Var, Vec<f64>, Vec<bool>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Block(Var, usize, usize),
    MulConst(Var, Rc<Array2<f64>>),
    Propagate(Var, Rc<BlockDiag>),
    SegmentMean(Var, Rc<Vec<Range<usize>>>),
    BlockContract(Var, Rc<Vec<ContractBlock>>),
    Assemble(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Neg(..) => "neg",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::RowNormalize(..) => "row_normalize",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::Block(..) => "block",
            Op::MulConst(..) => "mul_const",
            Op::Propagate(..) => "propagate",
            Op::SegmentMean(..) => "segment_mean",
            Op::BlockContract(..) => "block_contract",
            Op::Assemble(..) => "assemble",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Adjoints of the tracked leaves after [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Array2<f64>>,
}

impl Gradients {
    /// `None` for values that were not marked as requiring a gradient.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let (r, c) = g.dim();
    match shape {
        s if s == (r, c) => g,
        (1, m) if m == c => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
        (n, 1) if n == r => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
        (1, 1) => Array2::from_elem((1, 1), g.sum()),
        _ => unreachable!("broadcast shapes are validated on record"),
    }
}

fn broadcastable(lhs: (usize, usize), rhs: (usize, usize)) -> bool {
    rhs == lhs || rhs == (1, lhs.1) || rhs == (lhs.0, 1) || rhs == (1, 1)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Var {
        let rg = self.grad_of(parents);
        self.push(value, op, rg)
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A tracked leaf; its adjoint is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(RosaError::shape("matmul", format!("{:?} x {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(RosaError::shape("matmul_t", format!("{:?} x {:?}ᵀ", va.dim(), vb.dim())));
        }
        let out = va.dot(&vb.t());
        Ok(self.record(out, Op::MatMulT(a, b), &[a, b]))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !broadcastable(va.dim(), vb.dim()) {
            return Err(RosaError::shape(name, format!("{:?} with {:?}", va.dim(), vb.dim())));
        }
        let out = f(va, vb);
        Ok(self.record(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).mapv(|x| scale * x + shift);
        self.record(out, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| -x);
        self.record(out, Op::Neg(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.record(out, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(EXP_FLOOR).exp());
        self.record(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(RosaError::LogDomain(bad));
        }
        let out = self.value(a).mapv(f64::ln);
        Ok(self.record(out, Op::Log(a), &[a]))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).iter().find(|&&x| !(x > 0.0)) {
            return Err(RosaError::shape("sqrt", format!("non-positive input {bad}")));
        }
        let out = self.value(a).mapv(f64::sqrt);
        Ok(self.record(out, Op::Sqrt(a), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.record(out, Op::Transpose(a), &[a])
    }

    /// Sum of all entries, as a `1×1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.record(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums: `n×m → 1×m`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.record(out, Op::SumRows(a), &[a])
    }

    /// Row sums: `n×m → n×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.record(out, Op::SumCols(a), &[a])
    }

    /// Column means: `n×m → 1×m`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).nrows().max(1) as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    /// Divides every row by its L2 norm, clamped below at [`NORM_EPS`].
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        let mut norms = Vec::with_capacity(va.nrows());
        let mut clamped = Vec::with_capacity(va.nrows());
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            let c = n < NORM_EPS;
            let d = if c { NORM_EPS } else { n };
            row.mapv_inplace(|x| x / d);
            norms.push(d);
            clamped.push(c);
        }
        self.record(out, Op::RowNormalize(a, norms, clamped), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).map_err(|e| RosaError::shape("concat_cols", e.to_string()))?;
        Ok(self.record(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).map_err(|e| RosaError::shape("concat_rows", e.to_string()))?;
        Ok(self.record(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, rows: Range<usize>) -> Result<Var> {
        let va = self.value(a);
        if rows.end > va.nrows() || rows.start > rows.end {
            return Err(RosaError::shape("slice_rows", format!("{rows:?} of {} rows", va.nrows())));
        }
        let out = va.slice(s![rows.clone(), ..]).to_owned();
        Ok(self.record(out, Op::SliceRows(a, rows.start), &[a]))
    }

    /// Rectangular sub-block `a[rows, cols]`.
    pub fn block(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let va = self.value(a);
        if rows.end > va.nrows() || cols.end > va.ncols() {
            return Err(RosaError::shape("block", format!("{rows:?}x{cols:?} of {:?}", va.dim())));
        }
        let out = va.slice(s![rows.clone(), cols.clone()]).to_owned();
        Ok(self.record(out, Op::Block(a, rows.start, cols.start), &[a]))
    }

    /// Hadamard product with a constant of identical shape.
    pub fn mul_const(&mut self, a: Var, k: Rc<Array2<f64>>) -> Result<Var> {
        let va = self.value(a);
        if va.dim() != k.dim() {
            return Err(RosaError::shape("mul_const", format!("{:?} with {:?}", va.dim(), k.dim())));
        }
        let out = va * &*k;
        Ok(self.record(out, Op::MulConst(a, k), &[a]))
    }

    /// Left-multiplies by a fixed block-diagonal operator.
    pub fn propagate(&mut self, op: Rc<BlockDiag>, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.nrows() != op.dim() {
            return Err(RosaError::shape("propagate", format!("operator dim {} vs {} rows", op.dim(), vx.nrows())));
        }
        let out = op.apply(vx);
        Ok(self.record(out, Op::Propagate(x, op), &[x]))
    }

    /// Mean of each row segment: `n×m → k×m`.
    pub fn segment_mean(&mut self, x: Var, segments: Rc<Vec<Range<usize>>>) -> Result<Var> {
        let vx = self.value(x);
        let mut out = Array2::zeros((segments.len(), vx.ncols()));
        for (k, seg) in segments.iter().enumerate() {
            if seg.is_empty() || seg.end > vx.nrows() {
                return Err(RosaError::shape("segment_mean", format!("segment {seg:?} of {} rows", vx.nrows())));
            }
            let m = vx.slice(s![seg.clone(), ..]).mean_axis(Axis(0)).expect("non-empty segment");
            out.row_mut(k).assign(&m);
        }
        Ok(self.record(out, Op::SegmentMean(x, segments), &[x]))
    }

    /// Output matrix of shape `shape` whose entry `b.out` is `Σ b.weights ⊙ x[b.rows, b.cols]`;
    /// entries not named by any block are zero.
    pub fn block_contract(&mut self, x: Var, blocks: Rc<Vec<ContractBlock>>, shape: (usize, usize)) -> Result<Var> {
        let vx = self.value(x);
        let mut out = Array2::zeros(shape);
        for b in blocks.iter() {
            if b.rows.end > vx.nrows() || b.cols.end > vx.ncols() || b.weights.dim() != (b.rows.len(), b.cols.len()) {
                return Err(RosaError::shape("block_contract", format!("block {:?}x{:?} of {:?}", b.rows, b.cols, vx.dim())));
            }
            if b.out >= shape.0 * shape.1 {
                return Err(RosaError::shape("block_contract", format!("output index {} out of {:?}", b.out, shape)));
            }
            let src = vx.slice(s![b.rows.clone(), b.cols.clone()]);
            let v: f64 = src.iter().zip(b.weights.iter()).map(|(a, w)| a * w).sum();
            out[[b.out / shape.1, b.out % shape.1]] += v;
        }
        Ok(self.record(out, Op::BlockContract(x, blocks), &[x]))
    }

    /// Packs `1×1` values row-major into a `rows×cols` matrix.
    pub fn assemble(&mut self, scalars: &[Var], rows: usize, cols: usize) -> Result<Var> {
        if scalars.len() != rows * cols {
            return Err(RosaError::shape("assemble", format!("{} scalars for {rows}x{cols}", scalars.len())));
        }
        let mut vals = Vec::with_capacity(scalars.len());
        for v in scalars {
            let val = self.value(*v);
            if val.dim() != (1, 1) {
                return Err(RosaError::shape("assemble", format!("entry of shape {:?}", val.dim())));
            }
            vals.push(val[[0, 0]]);
        }
        let out = Array2::from_shape_vec((rows, cols), vals).expect("length checked");
        Ok(self.record(out, Op::Assemble(scalars.to_vec()), scalars))
    }

    /// Adjoints of every tracked leaf with respect to the scalar `loss`.
    /// Tracked leaves that do not influence the loss get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(RosaError::NonScalarLoss(vec![shape.0, shape.1]));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Array2::ones((1, 1)));
        let mut grads = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else {
                if matches!(node.op, Op::Leaf) {
                    grads.grads.insert(Var(idx), Array2::zeros(node.value.raw_dim()));
                }
                continue;
            };
            let name = node.op.name();
            let mut contributions: Vec<(Var, Array2<f64>)> = Vec::new();
            let mut send = |v: Var, d: Array2<f64>| {
                if self.nodes[v.0].requires_grad {
                    contributions.push((v, d));
                }
            };
            let need = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads.grads.insert(Var(idx), g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if need(*a) {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if need(*b) {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if need(*a) {
                        send(*a, g.dot(self.value(*b)));
                    }
                    if need(*b) {
                        send(*b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if need(*b) {
                        send(*b, reduce_to(g.clone(), self.value(*b).dim()));
                    }
                    send(*a, g);
                }
                Op::Sub(a, b) => {
                    if need(*b) {
                        send(*b, reduce_to(-&g, self.value(*b).dim()));
                    }
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if need(*b) {
                        send(*b, reduce_to(&g * va, vb.dim()));
                    }
                    if need(*a) {
                        send(*a, &g * vb);
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if need(*b) {
                        let d = -(&g * va) / &(vb * vb);
                        send(*b, reduce_to(d, vb.dim()));
                    }
                    if need(*a) {
                        send(*a, &g / vb);
                    }
                }
                Op::Affine(a, k) => send(*a, g * *k),
                Op::Neg(a) => send(*a, -g),
                Op::Relu(a) => {
                    let mut d = g;
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send(*a, d);
                }
                Op::Exp(a) => {
                    let mut d = g * &node.value;
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x < EXP_FLOOR {
                            *d = 0.0
                        }
                    });
                    send(*a, d);
                }
                Op::Log(a) => send(*a, g / self.value(*a)),
                Op::Sqrt(a) => send(*a, g / &(&node.value * 2.0)),
                Op::Transpose(a) => send(*a, g.t().to_owned()),
                Op::Sum(a) => send(*a, Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]])),
                Op::SumRows(a) => {
                    let n = self.value(*a).nrows();
                    send(*a, g.broadcast((n, g.ncols())).expect("row broadcast").to_owned());
                }
                Op::SumCols(a) => {
                    let m = self.value(*a).ncols();
                    send(*a, g.broadcast((g.nrows(), m)).expect("column broadcast").to_owned());
                }
                Op::RowNormalize(a, norms, clamped) => {
                    let y = &node.value;
                    let mut d = g;
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        if clamped[i] {
                            row.mapv_inplace(|v| v / norms[i]);
                        } else {
                            let yr = y.row(i);
                            let proj = yr.dot(&row);
                            row.zip_mut_with(&yr, |gv, &yv| *gv = (*gv - yv * proj) / norms[i]);
                        }
                    }
                    send(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        if need(*p) {
                            send(*p, g.slice(s![.., offset..offset + w]).to_owned());
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        if need(*p) {
                            send(*p, g.slice(s![offset..offset + h, ..]).to_owned());
                        }
                        offset += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..start + g.nrows(), ..]).assign(&g);
                    send(*a, d);
                }
                Op::Block(a, r0, c0) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*r0..r0 + g.nrows(), *c0..c0 + g.ncols()]).assign(&g);
                    send(*a, d);
                }
                Op::MulConst(a, k) => send(*a, g * &**k),
                Op::Propagate(a, op) => send(*a, op.apply_transposed(&g)),
                Op::SegmentMean(a, segs) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (k, seg) in segs.iter().enumerate() {
                        let share = g.row(k).mapv(|v| v / seg.len() as f64);
                        for r in seg.clone() {
                            d.row_mut(r).assign(&share);
                        }
                    }
                    send(*a, d);
                }
                Op::BlockContract(a, blocks) => {
                    let cols = node.value.ncols();
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for b in blocks.iter() {
                        let gv = g[[b.out / cols, b.out % cols]];
                        if gv == 0.0 {
                            continue;
                        }
                        d.slice_mut(s![b.rows.clone(), b.cols.clone()]).scaled_add(gv, &b.weights);
                    }
                    send(*a, d);
                }
                Op::Assemble(parts) => {
                    for (p, &gv) in parts.iter().zip(g.iter()) {
                        send(*p, Array2::from_elem((1, 1), gv));
                    }
                }
            }
            for (v, d) in contributions {
                if d.iter().any(|x| !x.is_finite()) {
                    return Err(RosaError::NonFinite { op: name });
                }
                match &mut adj[v.0] {
                    Some(acc) => *acc += &d,
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(grads)
    }
}

/// Largest relative disagreement between [`Tape::backward`] and central
/// differences of `f` around `x`. The relative error of one coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn finite_diff_check<F>(f: F, x: &Array2<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(RosaError::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.take(xv).expect("tracked leaf");

    let eval = |x: Array2<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = f(&mut tape, xv)?;
        Ok(tape.scalar(out))
    };
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += step;
        let mut minus = x.clone();
        minus[[r, c]] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic[[r, c]];
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
