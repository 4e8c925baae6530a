//! `key = value` run configuration and ablation switches.
//!
//! Blank lines and anything after `#` are ignored. Keys not listed in
//! [`KEYS`] are rejected. [`render`] writes every key, so its output parses
//! back to the same settings.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::contrastive::Similarity;
use crate::error::{Result, RosaError};
use crate::eval::ProbeConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Mean-pooled cosine similarity instead of g-EMD.
    NoEmd,
    /// No hop-distance rescale of the cost.
    NoTd,
    /// No adversarial perturbation.
    NoAt,
    /// Both views share one node set.
    Aligned,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Full, Ablation::NoEmd, Ablation::NoTd, Ablation::NoAt, Ablation::Aligned];

    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Ablation::Full => {}
            Ablation::NoEmd => cfg.loss.similarity = Similarity::MeanCosine,
            Ablation::NoTd => cfg.loss.gemd.rescale = false,
            Ablation::NoAt => cfg.adv.enabled = false,
            Ablation::Aligned => cfg.sampler.aligned = true,
        }
    }
}

impl FromStr for Ablation {
    type Err = RosaError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| RosaError::Config(format!("unknown ablation `{s}` (full, no-emd, no-td, no-at, aligned)")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoEmd => "no-emd",
            Ablation::NoTd => "no-td",
            Ablation::NoAt => "no-at",
            Ablation::Aligned => "aligned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

pub const KEYS: &[&str] = &[
    "encoder",
    "hidden_size",
    "proj_dim",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "epochs",
    "patience",
    "optimizer",
    "seed",
    "walk_length",
    "restart_prob",
    "p_edge_1",
    "p_edge_2",
    "p_feat_1",
    "p_feat_2",
    "infonce_temperature",
    "lambda",
    "sinkhorn_iters",
    "tau_sig",
    "hop_cap",
    "hop_mode",
    "topology_rescale",
    "emd_similarity",
    "unrolled_sinkhorn",
    "adv_enabled",
    "adv_steps",
    "adv_step_size",
    "aligned_views",
    "probe_l2",
    "probe_epochs",
    "probe_lr",
    "probe_runs",
    "eval_seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| RosaError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn optional(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "-" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let p = &mut self.probe;
        match key {
            "encoder" => t.encoder = value.parse()?,
            "hidden_size" => t.hidden_size = parse(key, value)?,
            "proj_dim" => t.proj_dim = optional(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "patience" => t.patience = optional(key, value)?,
            "optimizer" => t.optimizer = value.parse()?,
            "seed" => t.seed = parse(key, value)?,
            "walk_length" => t.sampler.walk_length = parse(key, value)?,
            "restart_prob" => t.sampler.restart_prob = parse(key, value)?,
            "p_edge_1" => t.augment.p_edge[0] = parse(key, value)?,
            "p_edge_2" => t.augment.p_edge[1] = parse(key, value)?,
            "p_feat_1" => t.augment.p_feat[0] = parse(key, value)?,
            "p_feat_2" => t.augment.p_feat[1] = parse(key, value)?,
            "infonce_temperature" => t.loss.temperature = parse(key, value)?,
            "lambda" => t.loss.gemd.lambda = parse(key, value)?,
            "sinkhorn_iters" => t.loss.gemd.iters = parse(key, value)?,
            "tau_sig" => t.loss.gemd.tau_sig = parse(key, value)?,
            "hop_cap" => t.loss.hop_cap = parse(key, value)?,
            "hop_mode" => t.loss.hop_mode = value.parse()?,
            "topology_rescale" => t.loss.gemd.rescale = parse(key, value)?,
            "emd_similarity" => {
                t.loss.similarity = if parse(key, value)? {
                    Similarity::Emd
                } else {
                    Similarity::MeanCosine
                }
            }
            "unrolled_sinkhorn" => t.loss.gemd.unrolled = parse(key, value)?,
            "adv_enabled" => t.adv.enabled = parse(key, value)?,
            "adv_steps" => t.adv.ascent_steps = parse(key, value)?,
            "adv_step_size" => t.adv.step_size = parse(key, value)?,
            "aligned_views" => t.sampler.aligned = parse(key, value)?,
            "probe_l2" => p.l2_strength = parse(key, value)?,
            "probe_epochs" => p.epochs = parse(key, value)?,
            "probe_lr" => p.lr = parse(key, value)?,
            "probe_runs" => p.runs = parse(key, value)?,
            "eval_seed" => p.seed = parse(key, value)?,
            other => return Err(RosaError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| RosaError::Parse {
                path: origin.to_path_buf(),
                line: no + 1,
                message,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                RosaError::Config(m) => err(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RosaError::io(path, e))?;
        let mut s = Settings::default();
        s.apply_text(&text, path)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.probe.validate()
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |n| n.to_string())
}

/// Every key with its current value.
pub fn render(s: &Settings) -> String {
    let t = &s.train;
    let p = &s.probe;
    let rows: Vec<(&str, String)> = vec![
        ("encoder", t.encoder.to_string()),
        ("hidden_size", t.hidden_size.to_string()),
        ("proj_dim", opt(t.proj_dim)),
        ("batch_size", t.batch_size.to_string()),
        ("learning_rate", format!("{:?}", t.learning_rate)),
        ("weight_decay", format!("{:?}", t.weight_decay)),
        ("epochs", t.epochs.to_string()),
        ("patience", opt(t.patience)),
        ("optimizer", t.optimizer.to_string()),
        ("seed", t.seed.to_string()),
        ("walk_length", t.sampler.walk_length.to_string()),
        ("restart_prob", format!("{:?}", t.sampler.restart_prob)),
        ("p_edge_1", format!("{:?}", t.augment.p_edge[0])),
        ("p_edge_2", format!("{:?}", t.augment.p_edge[1])),
        ("p_feat_1", format!("{:?}", t.augment.p_feat[0])),
        ("p_feat_2", format!("{:?}", t.augment.p_feat[1])),
        ("infonce_temperature", format!("{:?}", t.loss.temperature)),
        ("lambda", format!("{:?}", t.loss.gemd.lambda)),
        ("sinkhorn_iters", t.loss.gemd.iters.to_string()),
        ("tau_sig", format!("{:?}", t.loss.gemd.tau_sig)),
        ("hop_cap", t.loss.hop_cap.to_string()),
        ("hop_mode", t.loss.hop_mode.to_string()),
        ("topology_rescale", t.loss.gemd.rescale.to_string()),
        ("emd_similarity", (t.loss.similarity == Similarity::Emd).to_string()),
        ("unrolled_sinkhorn", t.loss.gemd.unrolled.to_string()),
        ("adv_enabled", t.adv.enabled.to_string()),
        ("adv_steps", t.adv.ascent_steps.to_string()),
        ("adv_step_size", format!("{:?}", t.adv.step_size)),
        ("aligned_views", t.sampler.aligned.to_string()),
        ("probe_l2", format!("{:?}", p.l2_strength)),
        ("probe_epochs", p.epochs.to_string()),
        ("probe_lr", format!("{:?}", p.lr)),
        ("probe_runs", p.runs.to_string()),
        ("eval_seed", p.seed.to_string()),
    ];
    debug_assert_eq!(rows.len(), KEYS.len());
    rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
