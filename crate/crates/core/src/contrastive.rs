//! InfoNCE over g-EMD similarities, and the free adversarial inner loop.
//!
//! A batch holds `B` view pairs. Similarities are gathered into a `B × 4B`
//! matrix laid out as `[inter12 | intra11 | inter21 | intra22]`, where
//! `inter12[i][k] = s(view1_i, view2_k)` and `intra11[i][k] = s(view1_i, view1_k)`.
//! Diagonals of the intra blocks are never read.

use std::fmt;
use std::ops::Range;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::{s, Array2, Axis};
use rand::Rng;

use crate::autodiff::{ContractBlock, Tape, Var};
use crate::encoder::{encode, project, BnStats, Model, ViewStack};
use crate::error::{Result, RosaError};
use crate::gemd::{emd_similarity, node_weights_from_gram, sinkhorn_plan, GemdConfig};
use crate::graph::{union_hop_distances, Graph, HopCache, Subgraph, DEFAULT_HOP_CAP};
use crate::rng::{self, Purpose};
use crate::sampling::ViewPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// `1 − g-EMD` between node sets.
    #[default]
    Emd,
    /// Cosine of mean-pooled view embeddings.
    MeanCosine,
}

/// Where hop distances between view nodes are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HopMode {
    #[default]
    FullGraph,
    /// Inside the subgraph induced by the two views' node union.
    Union,
}

impl FromStr for HopMode {
    type Err = RosaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(HopMode::FullGraph),
            "union" => Ok(HopMode::Union),
            other => Err(RosaError::Config(format!("unknown hop mode `{other}` (full, union)"))),
        }
    }
}

impl fmt::Display for HopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HopMode::FullGraph => "full",
            HopMode::Union => "union",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// InfoNCE temperature.
    pub temperature: f64,
    pub gemd: GemdConfig,
    pub similarity: Similarity,
    pub hop_mode: HopMode,
    pub hop_cap: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.4,
            gemd: GemdConfig::default(),
            similarity: Similarity::Emd,
            hop_mode: HopMode::FullGraph,
            hop_cap: DEFAULT_HOP_CAP,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(RosaError::Config(format!("infonce temperature must be positive, got {}", self.temperature)));
        }
        if self.hop_cap == 0 {
            return Err(RosaError::Config("hop_cap must be at least 1".into()));
        }
        self.gemd.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvConfig {
    pub ascent_steps: usize,
    pub step_size: f64,
    pub enabled: bool,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            ascent_steps: 3,
            step_size: 1e-3,
            enabled: true,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ascent_steps == 0 || !(self.step_size > 0.0) {
            return Err(RosaError::Config("adversarial training needs adv_steps >= 1 and adv_step_size > 0".into()));
        }
        Ok(())
    }
}

/// The four similarity families of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Inter12,
    Intra11,
    Inter21,
    Intra22,
}

impl PairKind {
    pub const ALL: [PairKind; 4] = [PairKind::Inter12, PairKind::Intra11, PairKind::Inter21, PairKind::Intra22];

    /// View sides (0 = first view, 1 = second view) of the row and column node.
    pub fn sides(self) -> (usize, usize) {
        match self {
            PairKind::Inter12 => (0, 1),
            PairKind::Intra11 => (0, 0),
            PairKind::Inter21 => (1, 0),
            PairKind::Intra22 => (1, 1),
        }
    }

    pub fn is_intra(self) -> bool {
        matches!(self, PairKind::Intra11 | PairKind::Intra22)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Hop matrices for every view pair a batch compares.
#[derive(Debug, Clone)]
pub struct BatchHops {
    batch: usize,
    blocks: Vec<Array2<f64>>,
}

impl BatchHops {
    pub fn compute(g: &Graph, first: &[&Subgraph], second: &[&Subgraph], mode: HopMode, cache: &mut HopCache) -> Result<Self> {
        let b = first.len();
        if second.len() != b {
            return Err(RosaError::shape("batch hops", format!("{} vs {} views", b, second.len())));
        }
        let sides = [first, second];
        let mut blocks = Vec::with_capacity(4 * b * b);
        for kind in PairKind::ALL {
            let (a, c) = kind.sides();
            for i in 0..b {
                for k in 0..b {
                    let (x, y) = (&sides[a][i].nodes, &sides[c][k].nodes);
                    if kind.is_intra() && i == k {
                        blocks.push(Array2::zeros((0, 0)));
                        continue;
                    }
                    blocks.push(match mode {
                        HopMode::FullGraph => cache.matrix(g, x, y),
                        HopMode::Union => union_hop_distances(g, x, y, cache.cap())?,
                    });
                }
            }
        }
        Ok(BatchHops { batch: b, blocks })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn get(&self, kind: PairKind, i: usize, k: usize) -> &Array2<f64> {
        &self.blocks[(kind.index() * self.batch + i) * self.batch + k]
    }
}

/// Similarity matrices of a batch, each `B × B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarities {
    pub inter12: Array2<f64>,
    pub intra11: Array2<f64>,
    pub inter21: Array2<f64>,
    pub intra22: Array2<f64>,
}

impl Similarities {
    fn from_wide(wide: &Array2<f64>) -> Self {
        let b = wide.nrows();
        let part = |k: usize| wide.slice(s![.., k * b..(k + 1) * b]).to_owned();
        Similarities {
            inter12: part(0),
            intra11: part(1),
            inter21: part(2),
            intra22: part(3),
        }
    }

    /// The four blocks side by side.
    pub fn wide(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.inter12.view(), self.intra11.view(), self.inter21.view(), self.intra22.view()])
            .expect("equal shapes")
    }
}

fn mean_cosine(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mx = x.mean_axis(Axis(0)).expect("non-empty view");
    let my = y.mean_axis(Axis(0)).expect("non-empty view");
    let nx = mx.dot(&mx).sqrt().max(crate::autodiff::NORM_EPS);
    let ny = my.dot(&my).sqrt().max(crate::autodiff::NORM_EPS);
    mx.dot(&my) / (nx * ny)
}

/// Every similarity a batch needs, one independent call per entry.
pub fn pairwise_similarities(z1: &[Array2<f64>], z2: &[Array2<f64>], hops: &BatchHops, cfg: &LossConfig) -> Result<Similarities> {
    let b = z1.len();
    if z2.len() != b || hops.batch_size() != b {
        return Err(RosaError::shape("pairwise_similarities", format!("{} / {} views, hops for {}", b, z2.len(), hops.batch_size())));
    }
    let sides = [z1, z2];
    let mut wide = Array2::zeros((b, 4 * b));
    for kind in PairKind::ALL {
        let (a, c) = kind.sides();
        for i in 0..b {
            for k in 0..b {
                if kind.is_intra() && i == k {
                    continue;
                }
                let (x, y) = (&sides[a][i], &sides[c][k]);
                wide[[i, kind.index() * b + k]] = match cfg.similarity {
                    Similarity::Emd => emd_similarity(x, y, hops.get(kind, i, k), &cfg.gemd)?,
                    Similarity::MeanCosine => mean_cosine(x, y),
                };
            }
        }
    }
    Ok(Similarities::from_wide(&wide))
}

/// `−log(e^{s_ii/τ} / (Σ_k e^{inter_ik/τ} + Σ_{k≠i} e^{intra_ik/τ}))`.
pub fn infonce_emd_loss(i: usize, inter: &Array2<f64>, intra: &Array2<f64>, temperature: f64) -> Result<f64> {
    let b = inter.nrows();
    if i >= b || inter.dim() != (b, b) || intra.dim() != (b, b) {
        return Err(RosaError::IndexOutOfRange { index: i, len: b });
    }
    let mut denom = 0.0;
    for k in 0..b {
        denom += (inter[[i, k]] / temperature).exp();
        if k != i {
            denom += (intra[[i, k]] / temperature).exp();
        }
    }
    Ok(denom.ln() - inter[[i, i]] / temperature)
}

/// `J = (1/2B) Σ_i [ℓ(Z₁ⁱ, Z₂ⁱ) + ℓ(Z₂ⁱ, Z₁ⁱ)]` from precomputed similarities.
pub fn total_loss(sims: &Similarities, temperature: f64) -> Result<f64> {
    let b = sims.inter12.nrows();
    let mut acc = 0.0;
    for i in 0..b {
        acc += infonce_emd_loss(i, &sims.inter12, &sims.intra11, temperature)?;
        acc += infonce_emd_loss(i, &sims.inter21, &sims.intra22, temperature)?;
    }
    Ok(acc / (2 * b) as f64)
}

/// Sum over `i` of the one-direction InfoNCE terms, on the tape.
fn infonce_sum_var(tape: &mut Tape, inter: Var, intra: Var, temperature: f64) -> Result<Var> {
    let b = tape.shape(inter).0;
    let inv = 1.0 / temperature;
    let a = tape.scale(inter, inv);
    let e_inter = tape.exp(a);
    let c = tape.scale(intra, inv);
    let e_intra = tape.exp(c);
    let off_diag = Rc::new(Array2::from_shape_fn((b, b), |(i, k)| if i == k { 0.0 } else { 1.0 }));
    let e_intra = tape.mul_const(e_intra, off_diag)?;
    let s1 = tape.sum_cols(e_inter);
    let s2 = tape.sum_cols(e_intra);
    let denom = tape.add(s1, s2)?;
    let logs = tape.log(denom)?;
    let log_sum = tape.sum(logs);
    let diag = tape.mul_const(inter, Rc::new(Array2::eye(b)))?;
    let diag_sum = tape.sum(diag);
    let pos = tape.scale(diag_sum, inv);
    tape.sub(log_sum, pos)
}

/// `J` on the tape from a `B × 4B` similarity matrix.
pub fn total_loss_var(tape: &mut Tape, wide: Var, temperature: f64) -> Result<Var> {
    let (b, w) = tape.shape(wide);
    if w != 4 * b || b == 0 {
        return Err(RosaError::shape("total_loss", format!("similarities {b}x{w}")));
    }
    let part = |tape: &mut Tape, k: usize| tape.block(wide, 0..b, k * b..(k + 1) * b);
    let inter12 = part(tape, 0)?;
    let intra11 = part(tape, 1)?;
    let inter21 = part(tape, 2)?;
    let intra22 = part(tape, 3)?;
    let l12 = infonce_sum_var(tape, inter12, intra11, temperature)?;
    let l21 = infonce_sum_var(tape, inter21, intra22, temperature)?;
    let both = tape.add(l12, l21)?;
    Ok(tape.scale(both, 1.0 / (2 * b) as f64))
}

/// Views of a batch stacked for one encoder pass per side, plus hop matrices.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub first: ViewStack,
    pub second: ViewStack,
    pub hops: BatchHops,
    pub centrals: Vec<usize>,
}

impl PreparedBatch {
    pub fn new(g: &Graph, pairs: &[ViewPair], cfg: &LossConfig, cache: &mut HopCache) -> Result<Self> {
        if pairs.is_empty() {
            return Err(RosaError::shape("batch", "no view pairs"));
        }
        let first: Vec<&Subgraph> = pairs.iter().map(|p| &p.first).collect();
        let second: Vec<&Subgraph> = pairs.iter().map(|p| &p.second).collect();
        if cache.cap() != cfg.hop_cap {
            *cache = HopCache::new(cfg.hop_cap);
        }
        Ok(PreparedBatch {
            first: ViewStack::new(&first)?,
            second: ViewStack::new(&second)?,
            hops: BatchHops::compute(g, &first, &second, cfg.hop_mode, cache)?,
            centrals: pairs.iter().map(ViewPair::central).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.centrals.len()
    }

    /// Row range of a view inside the concatenated `[Z1; Z2]`.
    fn rows(&self, side: usize, i: usize) -> Range<usize> {
        if side == 0 {
            self.first.ranges[i].clone()
        } else {
            let off = self.first.num_rows();
            let r = &self.second.ranges[i];
            r.start + off..r.end + off
        }
    }
}

/// Plan-derived weights `Γ ⊙ S` for every compared pair, in [`PairKind::ALL`] × `i` × `k` order
/// (intra diagonals skipped).
pub type FrozenPlans = Vec<Array2<f64>>;

#[derive(Debug, Clone)]
pub struct BatchForward {
    pub loss: Var,
    /// `B × 4B` similarity matrix.
    pub similarities: Var,
    pub z1: Var,
    pub z2: Var,
    pub stats: [BnStats; 2],
    /// Empty for the mean-cosine similarity and for unrolled plans.
    pub plans: FrozenPlans,
}

/// Encoder, projector, similarities and `J` for a prepared batch on one tape.
/// `x1`, `x2` are the (possibly perturbed) stacked input features of each side.
/// With `frozen`, transport plans are taken as given instead of solved.
#[allow(clippy::too_many_arguments)]
pub fn batch_forward(
    tape: &mut Tape,
    model: &Model,
    bound: &crate::encoder::BoundModel,
    batch: &PreparedBatch,
    x1: Var,
    x2: Var,
    cfg: &LossConfig,
    frozen: Option<&FrozenPlans>,
) -> Result<BatchForward> {
    let h1 = encode(tape, model, bound, &batch.first, x1)?;
    let (z1, s1) = project(tape, model, bound, h1, true)?;
    let h2 = encode(tape, model, bound, &batch.second, x2)?;
    let (z2, s2) = project(tape, model, bound, h2, true)?;
    let stats = [s1.expect("training mode"), s2.expect("training mode")];
    let z = tape.concat_rows(&[z1, z2])?;
    let (similarities, plans) = match cfg.similarity {
        Similarity::MeanCosine => (mean_cosine_wide(tape, batch, z)?, Vec::new()),
        Similarity::Emd if cfg.gemd.unrolled => (unrolled_wide(tape, batch, z, cfg)?, Vec::new()),
        Similarity::Emd => emd_wide(tape, batch, z, cfg, frozen)?,
    };
    let loss = total_loss_var(tape, similarities, cfg.temperature)?;
    Ok(BatchForward {
        loss,
        similarities,
        z1,
        z2,
        stats,
        plans,
    })
}

fn pair_index(batch: &PreparedBatch) -> Vec<(PairKind, usize, usize)> {
    let b = batch.batch_size();
    let mut out = Vec::with_capacity(4 * b * b);
    for kind in PairKind::ALL {
        for i in 0..b {
            for k in 0..b {
                if !(kind.is_intra() && i == k) {
                    out.push((kind, i, k));
                }
            }
        }
    }
    out
}

/// One Gram matrix of unit rows serves every pair: `s = 1 − Σ W + Σ W ⊙ G_block`.
fn emd_wide(tape: &mut Tape, batch: &PreparedBatch, z: Var, cfg: &LossConfig, frozen: Option<&FrozenPlans>) -> Result<(Var, FrozenPlans)> {
    let b = batch.batch_size();
    let zn = tape.row_l2_normalize(z);
    let gram = tape.matmul_t(zn, zn)?;
    let pairs = pair_index(batch);
    if let Some(f) = frozen {
        if f.len() != pairs.len() {
            return Err(RosaError::shape("frozen plans", format!("{} plans for {} pairs", f.len(), pairs.len())));
        }
    }
    let zv = tape.value(z);
    let cos = tape.value(gram);
    let mut blocks = Vec::with_capacity(pairs.len());
    let mut plans = Vec::with_capacity(pairs.len());
    let mut offset = Array2::<f64>::zeros((b, 4 * b));
    for (n, &(kind, i, k)) in pairs.iter().enumerate() {
        let (a, c) = kind.sides();
        let (rows, cols) = (batch.rows(a, i), batch.rows(c, k));
        let weights = match frozen {
            Some(f) => f[n].clone(),
            None => {
                let scale = cfg.gemd.scale_for(batch.hops.get(kind, i, k))?;
                let cost = &cos.slice(s![rows.clone(), cols.clone()]).mapv(|g| 1.0 - g) * &scale;
                let raw = zv.slice(s![rows.clone(), ..]).dot(&zv.slice(s![cols.clone(), ..]).t());
                let (t, r) = node_weights_from_gram(raw.view());
                let (gamma, _) = sinkhorn_plan(cost.view(), &t, &r, cfg.gemd.lambda, cfg.gemd.iters)?;
                gamma * scale
            }
        };
        let out = i * 4 * b + kind.index() * b + k;
        offset[[i, kind.index() * b + k]] = 1.0 - weights.sum();
        blocks.push(ContractBlock {
            rows,
            cols,
            weights: weights.clone(),
            out,
        });
        plans.push(weights);
    }
    let contracted = tape.block_contract(gram, Rc::new(blocks), (b, 4 * b))?;
    let offset = tape.constant(offset);
    Ok((tape.add(contracted, offset)?, plans))
}

/// Per-pair tape subgraphs with Sinkhorn rounds recorded; slow, used for the unrolled switch.
fn unrolled_wide(tape: &mut Tape, batch: &PreparedBatch, z: Var, cfg: &LossConfig) -> Result<Var> {
    let b = batch.batch_size();
    let zero = tape.scalar_const(0.0);
    let mut entries = vec![zero; 4 * b * b];
    for (kind, i, k) in pair_index(batch) {
        let (a, c) = kind.sides();
        let x = tape.slice_rows(z, batch.rows(a, i))?;
        let y = tape.slice_rows(z, batch.rows(c, k))?;
        entries[i * 4 * b + kind.index() * b + k] = crate::gemd::emd_similarity_var(tape, x, y, batch.hops.get(kind, i, k), &cfg.gemd)?;
    }
    tape.assemble(&entries, b, 4 * b)
}

fn mean_cosine_wide(tape: &mut Tape, batch: &PreparedBatch, z: Var) -> Result<Var> {
    let b = batch.batch_size();
    let segments: Vec<Range<usize>> = (0..2).flat_map(|side| (0..b).map(move |i| (side, i))).map(|(side, i)| batch.rows(side, i)).collect();
    let pooled = tape.segment_mean(z, Rc::new(segments))?;
    let unit = tape.row_l2_normalize(pooled);
    let p1 = tape.slice_rows(unit, 0..b)?;
    let p2 = tape.slice_rows(unit, b..2 * b)?;
    let inter12 = tape.matmul_t(p1, p2)?;
    let intra11 = tape.matmul_t(p1, p1)?;
    let inter21 = tape.matmul_t(p2, p1)?;
    let intra22 = tape.matmul_t(p2, p2)?;
    tape.concat_cols(&[inter12, intra11, inter21, intra22])
}

/// Record of one adversarial inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvTrace {
    /// `J` at each inner forward.
    pub losses: Vec<f64>,
    /// Frobenius norm of each δ update; zero when the δ gradient vanished or AT is off.
    pub step_norms: Vec<f64>,
    /// Steps whose δ gradient was exactly zero.
    pub zero_grad_steps: Vec<usize>,
    /// `‖δ‖_F` after the loop.
    pub delta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct AdvOutcome {
    /// Accumulated parameter gradients, in [`Model::named_params`] order.
    pub grads: Vec<Array2<f64>>,
    pub delta0: Array2<f64>,
    pub delta: Array2<f64>,
    pub trace: AdvTrace,
    /// Batch statistics of the last inner forward.
    pub stats: [BnStats; 2],
}

/// One gradient evaluation at perturbation `delta` (`None` for no perturbation leaf).
pub struct Evaluation {
    pub loss: f64,
    pub param_grads: Vec<Array2<f64>>,
    pub delta_grad: Option<Array2<f64>>,
    pub stats: [BnStats; 2],
}

pub fn evaluate_batch(model: &Model, batch: &PreparedBatch, cfg: &LossConfig, delta: Option<&Array2<f64>>, frozen: Option<&FrozenPlans>) -> Result<Evaluation> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let base = tape.constant(batch.first.features.clone());
    let (x1, dv) = match delta {
        Some(d) => {
            if d.dim() != batch.first.features.dim() {
                return Err(RosaError::shape("perturbation", format!("{:?} for features {:?}", d.dim(), batch.first.features.dim())));
            }
            let dv = tape.param(d.clone());
            (tape.add(base, dv)?, Some(dv))
        }
        None => (base, None),
    };
    let x2 = tape.constant(batch.second.features.clone());
    let fwd = batch_forward(&mut tape, model, &bound, batch, x1, x2, cfg, frozen)?;
    let loss = tape.scalar(fwd.loss);
    if !loss.is_finite() {
        return Err(RosaError::NonFinite { op: "loss" });
    }
    let mut grads = tape.backward(fwd.loss)?;
    let param_grads = bound.vars.iter().map(|&v| grads.take(v).expect("tracked parameter")).collect();
    let delta_grad = dv.map(|v| grads.take(v).expect("tracked perturbation"));
    Ok(Evaluation {
        loss,
        param_grads,
        delta_grad,
        stats: fwd.stats,
    })
}

/// Plain `J` at perturbation `delta`, parameters untouched.
pub fn batch_loss(model: &Model, batch: &PreparedBatch, cfg: &LossConfig, delta: Option<&Array2<f64>>) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let mut x1 = tape.constant(batch.first.features.clone());
    if let Some(d) = delta {
        let dv = tape.constant(d.clone());
        x1 = tape.add(x1, dv)?;
    }
    let x2 = tape.constant(batch.second.features.clone());
    let fwd = batch_forward(&mut tape, model, &bound, batch, x1, x2, cfg, None)?;
    Ok(tape.scalar(fwd.loss))
}

/// Transport weights the detached forward would use at `delta`; pass them back
/// as `frozen` to evaluate `J` with the plans held fixed.
pub fn solve_plans(model: &Model, batch: &PreparedBatch, cfg: &LossConfig, delta: Option<&Array2<f64>>) -> Result<FrozenPlans> {
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let mut x1 = tape.constant(batch.first.features.clone());
    if let Some(d) = delta {
        let dv = tape.constant(d.clone());
        x1 = tape.add(x1, dv)?;
    }
    let x2 = tape.constant(batch.second.features.clone());
    let fwd = batch_forward(&mut tape, model, &bound, batch, x1, x2, cfg, None)?;
    Ok(fwd.plans)
}

/// Uniform initial perturbation over the first side's stacked features.
pub fn initial_delta(shape: (usize, usize), alpha: f64, seed: u64, epoch: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, Purpose::Perturbation, &[epoch]);
    Array2::from_shape_fn(shape, |_| rng.random_range(-alpha..=alpha))
}

/// Free adversarial inner loop: `M` forwards, averaging parameter gradients
/// while δ climbs the loss by normalized steps of size α.
/// With AT disabled this is a single unperturbed gradient evaluation.
pub fn adversarial_epoch_step(model: &Model, batch: &PreparedBatch, adv: &AdvConfig, cfg: &LossConfig, seed: u64, epoch: u64) -> Result<AdvOutcome> {
    let shape = batch.first.features.dim();
    if !adv.enabled {
        let ev = evaluate_batch(model, batch, cfg, None, None)?;
        return Ok(AdvOutcome {
            grads: ev.param_grads,
            delta0: Array2::zeros(shape),
            delta: Array2::zeros(shape),
            trace: AdvTrace {
                losses: vec![ev.loss],
                step_norms: vec![0.0],
                zero_grad_steps: Vec::new(),
                delta_norm: 0.0,
            },
            stats: ev.stats,
        });
    }
    adv.validate()?;
    let m = adv.ascent_steps;
    let delta0 = initial_delta(shape, adv.step_size, seed, epoch);
    let mut delta = delta0.clone();
    let mut acc: Option<Vec<Array2<f64>>> = None;
    let mut trace = AdvTrace {
        losses: Vec::with_capacity(m),
        step_norms: Vec::with_capacity(m),
        zero_grad_steps: Vec::new(),
        delta_norm: 0.0,
    };
    let mut stats = None;
    for step in 0..m {
        let ev = evaluate_batch(model, batch, cfg, Some(&delta), None)?;
        trace.losses.push(ev.loss);
        let scaled = ev.param_grads.into_iter().map(|g| g / m as f64);
        acc = Some(match acc {
            None => scaled.collect(),
            Some(prev) => prev.into_iter().zip(scaled).map(|(a, g)| a + g).collect(),
        });
        let gd = ev.delta_grad.expect("perturbation tracked");
        let norm = gd.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let step_vec = gd * (adv.step_size / norm);
            trace.step_norms.push(step_vec.iter().map(|v| v * v).sum::<f64>().sqrt());
            delta += &step_vec;
        } else {
            trace.step_norms.push(0.0);
            trace.zero_grad_steps.push(step);
        }
        stats = Some(ev.stats);
    }
    trace.delta_norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(AdvOutcome {
        grads: acc.expect("at least one step"),
        delta0,
        delta,
        trace,
        stats: stats.expect("at least one step"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderKind;
    use crate::graph::generate_sbm;
    use crate::sampling::{sample_batch, SamplerConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn fixture(b: usize, cfg: &LossConfig) -> (Graph, Vec<ViewPair>, PreparedBatch, Model) {
        let g = generate_sbm(2, 8, 0.5, 0.1, 4, 0.3, 3).unwrap();
        let centrals: Vec<usize> = (0..b).map(|i| (i * 5) % 16).collect();
        let sampler = SamplerConfig {
            walk_length: 4,
            restart_prob: 0.3,
            ..Default::default()
        };
        let pairs = sample_batch(&g, &centrals, &sampler, 0).unwrap();
        let mut cache = HopCache::new(cfg.hop_cap);
        let batch = PreparedBatch::new(&g, &pairs, cfg, &mut cache).unwrap();
        let model = Model::init(EncoderKind::Gcn, 4, 6, 5, 1).unwrap();
        (g, pairs, batch, model)
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let s = array![[0.3]];
        assert_abs_diff_eq!(infonce_emd_loss(0, &s, &array![[0.0]], 0.4).unwrap(), 0.0, epsilon = 1e-15);
        let sims = Similarities {
            inter12: s.clone(),
            intra11: array![[0.0]],
            inter21: array![[0.9]],
            intra22: array![[0.0]],
        };
        assert_abs_diff_eq!(total_loss(&sims, 0.4).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn two_pair_loss_by_hand() {
        let inter = array![[0.9, 0.1], [0.2, 0.8]];
        let intra = array![[0.0, 0.3], [0.4, 0.0]];
        let tau = 0.5;
        // i = 0: denominator e^{1.8} + e^{0.2} + e^{0.6}
        let expected = -((1.8f64).exp() / ((1.8f64).exp() + (0.2f64).exp() + (0.6f64).exp())).ln();
        assert_abs_diff_eq!(infonce_emd_loss(0, &inter, &intra, tau).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn raising_positive_lowers_loss() {
        let intra = array![[0.0, 0.3], [0.4, 0.0]];
        let lo = infonce_emd_loss(1, &array![[0.9, 0.1], [0.2, 0.5]], &intra, 0.4).unwrap();
        let hi = infonce_emd_loss(1, &array![[0.9, 0.1], [0.2, 0.7]], &intra, 0.4).unwrap();
        assert!(hi < lo);
    }

    #[test]
    fn tape_loss_matches_scalar_formula() {
        let sims = Similarities {
            inter12: array![[0.9, 0.1, -0.2], [0.2, 0.8, 0.0], [0.5, 0.4, 0.7]],
            intra11: array![[0.0, 0.3, 0.1], [0.4, 0.0, -0.5], [0.2, 0.6, 0.0]],
            inter21: array![[0.85, 0.2, 0.1], [0.1, 0.75, 0.3], [0.4, 0.0, 0.6]],
            intra22: array![[0.0, 0.2, 0.2], [0.1, 0.0, 0.3], [0.9, 0.1, 0.0]],
        };
        let mut tape = Tape::new();
        let w = tape.param(sims.wide());
        let j = total_loss_var(&mut tape, w, 0.4).unwrap();
        assert_abs_diff_eq!(tape.scalar(j), total_loss(&sims, 0.4).unwrap(), epsilon = 1e-13);
    }

    #[test]
    fn fused_similarities_match_per_pair_calls() {
        let cfg = LossConfig::default();
        let (_, _, batch, model) = fixture(3, &cfg);
        let mut tape = Tape::new();
        let bound = model.bind_frozen(&mut tape);
        let x1 = tape.constant(batch.first.features.clone());
        let x2 = tape.constant(batch.second.features.clone());
        let fwd = batch_forward(&mut tape, &model, &bound, &batch, x1, x2, &cfg, None).unwrap();
        let (z1, z2) = (tape.value(fwd.z1).clone(), tape.value(fwd.z2).clone());
        let split = |z: &Array2<f64>, stack: &ViewStack| stack.ranges.iter().map(|r| z.slice(s![r.clone(), ..]).to_owned()).collect::<Vec<_>>();
        let reference = pairwise_similarities(&split(&z1, &batch.first), &split(&z2, &batch.second), &batch.hops, &cfg).unwrap();
        let fused = Similarities::from_wide(tape.value(fwd.similarities));
        for (a, b) in fused.wide().iter().zip(reference.wide().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(tape.scalar(fwd.loss), total_loss(&reference, cfg.temperature).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn unrolled_and_detached_share_values() {
        let mut cfg = LossConfig::default();
        let (_, _, batch, model) = fixture(2, &cfg);
        let a = batch_loss(&model, &batch, &cfg, None).unwrap();
        cfg.gemd.unrolled = true;
        let b = batch_loss(&model, &batch, &cfg, None).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn mean_cosine_mode_is_finite() {
        let cfg = LossConfig {
            similarity: Similarity::MeanCosine,
            ..Default::default()
        };
        let (_, _, batch, model) = fixture(3, &cfg);
        let ev = evaluate_batch(&model, &batch, &cfg, None, None).unwrap();
        assert!(ev.loss.is_finite());
        assert!(ev.param_grads.iter().all(|g| g.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn disabled_adversary_is_plain_gradient() {
        let cfg = LossConfig::default();
        let (_, _, batch, model) = fixture(3, &cfg);
        let adv = AdvConfig {
            enabled: false,
            ..Default::default()
        };
        let out = adversarial_epoch_step(&model, &batch, &adv, &cfg, 0, 0).unwrap();
        let plain = evaluate_batch(&model, &batch, &cfg, None, None).unwrap();
        assert_eq!(out.grads, plain.param_grads);
        assert_eq!(out.trace.delta_norm, 0.0);
    }

    #[test]
    fn ascent_steps_have_norm_alpha() {
        let cfg = LossConfig::default();
        let (_, _, batch, model) = fixture(3, &cfg);
        let adv = AdvConfig::default();
        let out = adversarial_epoch_step(&model, &batch, &adv, &cfg, 9, 2).unwrap();
        assert!(out.delta0.iter().all(|v| v.abs() <= adv.step_size));
        assert_eq!(out.trace.losses.len(), 3);
        for n in &out.trace.step_norms {
            assert_abs_diff_eq!(*n, adv.step_size, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_ascent_step() {
        let cfg = LossConfig::default();
        let (_, _, batch, model) = fixture(2, &cfg);
        let adv = AdvConfig {
            ascent_steps: 1,
            ..Default::default()
        };
        let out = adversarial_epoch_step(&model, &batch, &adv, &cfg, 1, 0).unwrap();
        let ev = evaluate_batch(&model, &batch, &cfg, Some(&out.delta0), None).unwrap();
        assert_eq!(out.grads, ev.param_grads);
        let moved = &out.delta - &out.delta0;
        assert_abs_diff_eq!(moved.iter().map(|v| v * v).sum::<f64>().sqrt(), adv.step_size, epsilon = 1e-15);
    }

    #[test]
    fn hop_blocks_follow_kinds() {
        let cfg = LossConfig::default();
        let (g, pairs, batch, _) = fixture(2, &cfg);
        let direct = crate::graph::hop_distances(&g, &pairs[0].first.nodes, &pairs[1].second.nodes, cfg.hop_cap).unwrap();
        assert_eq!(batch.hops.get(PairKind::Inter12, 0, 1), &direct);
        let back = crate::graph::hop_distances(&g, &pairs[1].second.nodes, &pairs[0].first.nodes, cfg.hop_cap).unwrap();
        assert_eq!(batch.hops.get(PairKind::Inter21, 1, 0), &back);
    }
}
