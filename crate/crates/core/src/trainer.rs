//! Optimizers and the pretraining loop.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::augment::{augment_batch, AugmentConfig};
use crate::contrastive::{adversarial_epoch_step, AdvConfig, LossConfig, PreparedBatch};
use crate::encoder::{EncoderKind, Model};
use crate::error::{Result, RosaError};
use crate::graph::{Graph, HopCache};
use crate::rng::{self, Purpose};
use crate::sampling::{sample_batch, SamplerConfig};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamW,
}

impl FromStr for OptimizerKind {
    type Err = RosaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(RosaError::Config(format!("unknown optimizer `{other}` (sgd, adamw)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub hidden_size: usize,
    /// Projector output size; `None` means `hidden_size`.
    pub proj_dim: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a lower training loss. `None` never stops early.
    pub patience: Option<usize>,
    pub optimizer: OptimizerKind,
    /// Root seed. Overrides `sampler.seed`.
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub adv: AdvConfig,
}

impl Default for TrainConfig {
    /// Cora settings.
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderKind::Gcn,
            hidden_size: 128,
            proj_dim: None,
            batch_size: 128,
            learning_rate: 1e-2,
            weight_decay: 5e-4,
            epochs: 500,
            patience: None,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            sampler: SamplerConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            adv: AdvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_size == 0 || self.proj_dim == Some(0) {
            return Err(RosaError::Config("epochs, batch_size, hidden_size and proj_dim must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(RosaError::Config("learning_rate and weight_decay must be non-negative".into()));
        }
        self.sampler.validate()?;
        self.augment.validate()?;
        self.loss.validate()?;
        if self.adv.enabled {
            self.adv.validate()?;
        }
        Ok(())
    }
}

fn check_shapes(params: &[&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(RosaError::shape("optimizer", format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.dim() != g.dim() {
            return Err(RosaError::shape("optimizer", format!("parameter {:?}, gradient {:?}", p.dim(), g.dim())));
        }
    }
    Ok(())
}

/// `θ ← θ − lr · (g + wd · θ)`.
pub fn sgd_step(params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], lr: f64, weight_decay: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        p.zip_mut_with(g, |w, &gw| *w -= lr * (gw + weight_decay * *w));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

/// Adam with decoupled weight decay: `θ ← θ − lr·wd·θ − lr · m̂ / (√v̂ + ε)`.
pub fn adamw_step(params: &mut [&mut Array2<f64>], grads: &[Array2<f64>], state: &mut OptimizerState, lr: f64, weight_decay: f64) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != grads.len() {
        return Err(RosaError::shape("adamw", "optimizer state does not match parameters"));
    }
    state.step += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        m.zip_mut_with(g, |mi, &gi| *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi);
        v.zip_mut_with(g, |vi, &gi| *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi);
        ndarray::Zip::from(&mut **p).and(&*m).and(&*v).for_each(|w, &mi, &vi| {
            *w -= lr * weight_decay * *w;
            *w -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean `J` over the epoch's inner forwards.
    pub loss: f64,
    /// `‖δ‖_F` after the inner loop; zero without adversarial training.
    pub delta_norm: f64,
    pub ascent_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters that produced the lowest training loss.
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss\n");
    for r in history {
        out.push_str(&format!("{},{:?}\n", r.epoch, r.loss));
    }
    out
}

pub fn trace_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,delta_norm,ascent_steps\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?},{}\n", r.epoch, r.loss, r.delta_norm, r.ascent_steps));
    }
    out
}

pub fn pretrain(g: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    pretrain_with(g, cfg, |_| {})
}

/// Pretraining with a per-epoch callback.
pub fn pretrain_with(g: &Graph, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if g.num_nodes() == 0 {
        return Err(RosaError::Config("cannot pretrain on an empty graph".into()));
    }
    let proj = cfg.proj_dim.unwrap_or(cfg.hidden_size);
    let mut model = Model::init(cfg.encoder, g.feature_dim(), cfg.hidden_size, proj, cfg.seed)?;
    let sampler = SamplerConfig {
        seed: rng::stream_seed(cfg.seed, Purpose::Walk, &[]),
        ..cfg.sampler.clone()
    };
    let mut cache = HopCache::new(cfg.loss.hop_cap);
    let mut state = OptimizerState::default();
    let mut nodes: Vec<usize> = (0..g.num_nodes()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut stagnant = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let e = epoch as u64;
        nodes.sort_unstable();
        nodes.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, &[e]));
        let centrals = &nodes[..cfg.batch_size.min(nodes.len())];
        let pairs = sample_batch(g, centrals, &sampler, e)?;
        let pairs = augment_batch(&pairs, &cfg.augment, rng::stream_seed(cfg.seed, Purpose::EdgeDrop, &[e]));
        let batch = PreparedBatch::new(g, &pairs, &cfg.loss, &mut cache)?;
        let out = adversarial_epoch_step(&model, &batch, &cfg.adv, &cfg.loss, cfg.seed, e)?;
        let loss = out.trace.losses.iter().sum::<f64>() / out.trace.losses.len() as f64;
        if !loss.is_finite() {
            return Err(RosaError::NonFiniteLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            loss,
            delta_norm: out.trace.delta_norm,
            ascent_steps: out.trace.step_norms.iter().filter(|&&n| n > 0.0).count(),
        };
        on_epoch(&record);
        history.push(record);

        if loss < best.0 {
            best = (loss, model.clone(), epoch);
            stagnant = 0;
        } else {
            stagnant += 1;
        }

        {
            let mut params = model.params_mut();
            match cfg.optimizer {
                OptimizerKind::Sgd => sgd_step(&mut params, &out.grads, cfg.learning_rate, cfg.weight_decay)?,
                OptimizerKind::AdamW => adamw_step(&mut params, &out.grads, &mut state, cfg.learning_rate, cfg.weight_decay)?,
            }
        }
        for s in &out.stats {
            model.projector.update_running(s);
        }

        if cfg.patience.is_some_and(|p| stagnant >= p) {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.1,
        best_epoch: best.2,
        last: model,
        history,
        stopped_early,
    })
}
