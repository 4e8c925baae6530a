//! Frozen-encoder embeddings and the linear-probe protocol.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::autodiff::Tape;
use crate::encoder::{encode, Model, ViewStack};
use crate::error::{Result, RosaError};
use crate::graph::{random_splits, Graph, Split};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Penalty weight; the objective is mean cross-entropy plus `l2 / n_train · ½‖W‖²`.
    pub l2_strength: f64,
    pub epochs: usize,
    pub lr: f64,
    pub runs: usize,
    /// Seed for random splits.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_strength: 1.0,
            epochs: 100,
            lr: 0.01,
            runs: 20,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(RosaError::Config("probe runs must be at least 1".into()));
        }
        if !(self.l2_strength >= 0.0) || !(self.lr >= 0.0) {
            return Err(RosaError::Config("probe l2 and lr must be non-negative".into()));
        }
        Ok(())
    }
}

/// Encoder output on the full graph; no projector, no augmentation.
pub fn extract_embeddings(model: &Model, g: &Graph) -> Result<Array2<f64>> {
    if g.feature_dim() != model.encoder.input_dim() {
        return Err(RosaError::shape(
            "extract_embeddings",
            format!("graph has {} features, encoder expects {}", g.feature_dim(), model.encoder.input_dim()),
        ));
    }
    let whole = g.as_subgraph();
    let stack = ViewStack::new(&[&whole])?;
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let x = tape.constant(stack.features.clone());
    let h = encode(&mut tape, model, &bound, &stack, x)?;
    Ok(tape.value(h).clone())
}

/// Multinomial logistic regression weights; the last row of `w` is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub w: Array2<f64>,
}

impl Probe {
    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        let d = self.w.nrows() - 1;
        x.dot(&self.w.slice(ndarray::s![..d, ..])) + self.w.row(d)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| {
                // First index wins ties.
                r.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best }).0
            })
            .collect()
    }
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

/// Full-batch gradient descent from zero on the rows selected by `train_mask`
/// that carry a label.
pub fn train_probe(embeddings: &Array2<f64>, labels: &[Option<usize>], train_mask: &[bool], num_classes: usize, cfg: &ProbeConfig) -> Result<Probe> {
    let n = embeddings.nrows();
    if labels.len() != n || train_mask.len() != n {
        return Err(RosaError::shape("train_probe", format!("{n} rows, {} labels, {} mask entries", labels.len(), train_mask.len())));
    }
    let rows: Vec<(usize, usize)> = (0..n).filter(|&i| train_mask[i]).filter_map(|i| labels[i].map(|y| (i, y))).collect();
    let mut classes: Vec<usize> = rows.iter().map(|r| r.1).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(RosaError::SingleClass(classes.len()));
    }
    let k = num_classes.max(classes.last().copied().unwrap_or(0) + 1);
    let d = embeddings.ncols();
    let m = rows.len();
    let mut x = Array2::<f64>::ones((m, d + 1));
    let mut y = Array2::<f64>::zeros((m, k));
    for (r, &(i, label)) in rows.iter().enumerate() {
        x.slice_mut(ndarray::s![r, ..d]).assign(&embeddings.row(i));
        y[[r, label]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d + 1, k));
    let penalty = cfg.l2_strength / m as f64;
    for _ in 0..cfg.epochs {
        let p = softmax_rows(x.dot(&w));
        let mut grad = x.t().dot(&(p - &y)) / m as f64;
        // Bias row is not penalized.
        grad.slice_mut(ndarray::s![..d, ..]).scaled_add(penalty, &w.slice(ndarray::s![..d, ..]));
        w.scaled_add(-cfg.lr, &grad);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(RosaError::NonFinite { op: "train_probe" });
    }
    Ok(Probe { w })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(RosaError::shape("accuracy", format!("{} predictions, {} labels", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// F1 from true positives, false positives and false negatives pooled over classes.
pub fn micro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(RosaError::shape("micro_f1", format!("{} predictions, {} labels", pred.len(), truth.len())));
    }
    let k = pred.iter().chain(truth).max().copied().unwrap_or(0) + 1;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for c in 0..k {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    /// Test accuracy of each run, as a fraction.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
}

/// Redraws allowed when a random split's training part holds fewer than two classes.
pub const SPLIT_REDRAWS: u64 = 100;

fn train_classes(g: &Graph, splits: &[Split]) -> usize {
    let mut seen: Vec<usize> = (0..g.num_nodes()).filter(|&i| splits[i] == Split::Train).filter_map(|i| g.labels()[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Splits for run `run`: the graph's stored splits if any, else a fresh 10/10/80 split.
/// A random split whose training part has a single class is redrawn from the
/// next sub-stream `(run, attempt)`, so small graphs stay usable.
pub fn run_splits(g: &Graph, cfg: &ProbeConfig, run: usize) -> Vec<Split> {
    if g.has_splits() {
        return g.splits().to_vec();
    }
    let draw = |idx: &[u64]| random_splits(g.num_nodes(), 0.1, 0.1, rng::stream_seed(cfg.seed, Purpose::Split, idx));
    let first = draw(&[run as u64]);
    if train_classes(g, &first) >= 2 || g.num_classes() < 2 {
        return first;
    }
    (1..=SPLIT_REDRAWS)
        .map(|attempt| draw(&[run as u64, attempt]))
        .find(|s| train_classes(g, s) >= 2)
        .unwrap_or(first)
}

/// Linear-probe protocol on fixed embeddings.
pub fn evaluate_embeddings(embeddings: &Array2<f64>, g: &Graph, cfg: &ProbeConfig) -> Result<ProtocolResult> {
    cfg.validate()?;
    if embeddings.nrows() != g.num_nodes() {
        return Err(RosaError::shape("evaluate", format!("{} embedding rows for {} nodes", embeddings.nrows(), g.num_nodes())));
    }
    let labels = g.labels();
    let mut accuracies = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let splits = run_splits(g, cfg, run);
        let train: Vec<bool> = splits.iter().map(|&s| s == Split::Train).collect();
        let probe = train_probe(embeddings, labels, &train, g.num_classes(), cfg)?;
        let test: Vec<usize> = (0..g.num_nodes()).filter(|&i| splits[i] == Split::Test && labels[i].is_some()).collect();
        let x = embeddings.select(Axis(0), &test);
        let truth: Vec<usize> = test.iter().map(|&i| labels[i].expect("filtered")).collect();
        accuracies.push(accuracy(&probe.predict(&x), &truth)?);
    }
    let a = Array1::from(accuracies.clone());
    let mean = a.mean().expect("runs >= 1");
    let std = a.mapv(|v| (v - mean).powi(2)).mean().expect("runs >= 1").sqrt();
    Ok(ProtocolResult { accuracies, mean, std })
}

pub fn evaluate_protocol(model: &Model, g: &Graph, cfg: &ProbeConfig) -> Result<ProtocolResult> {
    evaluate_embeddings(&extract_embeddings(model, g)?, g, cfg)
}

/// `node_id,dim_0,…` header, one row per node, shortest round-trip decimals.
pub fn embeddings_csv(embeddings: &Array2<f64>) -> String {
    let mut out = String::from("node_id");
    for j in 0..embeddings.ncols() {
        out.push_str(&format!(",dim_{j}"));
    }
    out.push('\n');
    for (i, row) in embeddings.rows().into_iter().enumerate() {
        out.push_str(&i.to_string());
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(embeddings: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, embeddings_csv(embeddings)).map_err(|e| RosaError::io(path, e))
}
