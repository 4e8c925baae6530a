//! Reverse-mode gradients of the batch loss against five-point central differences,
//! over every parameter tensor and the input perturbation, with transport
//! plans held fixed.

use ndarray::Array2;
use rosa::autodiff::relative_error;
use rosa::contrastive::{evaluate_batch, solve_plans, LossConfig, PreparedBatch};
use rosa::encoder::{EncoderKind, Model};
use rosa::graph::{generate_sbm, HopCache};
use rosa::sampling::{sample_batch, SamplerConfig};

const STEP: f64 = 1e-4;

/// Five-point central difference.
fn derivative(f: impl Fn(f64) -> rosa::Result<f64>) -> rosa::Result<f64> {
    Ok((8.0 * (f(STEP)? - f(-STEP)?) - (f(2.0 * STEP)? - f(-2.0 * STEP)?)) / (12.0 * STEP))
}

fn main() -> rosa::Result<()> {
    let g = generate_sbm(2, 6, 0.6, 0.1, 3, 0.3, 5)?;
    let sampler = SamplerConfig { walk_length: 3, ..Default::default() };
    let pairs = sample_batch(&g, &[0, 7], &sampler, 0)?;
    let cfg = LossConfig::default();
    let batch = PreparedBatch::new(&g, &pairs, &cfg, &mut HopCache::new(cfg.hop_cap))?;
    let model = Model::init(EncoderKind::Gcn, g.feature_dim(), 4, 4, 2)?;
    let delta = Array2::from_elem(batch.first.features.dim(), 0.01);

    let plans = solve_plans(&model, &batch, &cfg, Some(&delta))?;
    let ev = evaluate_batch(&model, &batch, &cfg, Some(&delta), Some(&plans))?;
    let loss_at = |m: &Model, d: &Array2<f64>| evaluate_batch(m, &batch, &cfg, Some(d), Some(&plans)).map(|e| e.loss);

    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    for (p, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for idx in 0..ev.param_grads[p].len() {
            let bump = |h: f64| {
                let mut m = model.clone();
                let t = &mut m.params_mut()[p];
                let c = t.ncols();
                t[[idx / c, idx % c]] += h;
                loss_at(&m, &delta)
            };
            let numeric = derivative(bump)?;
            let c = ev.param_grads[p].ncols();
            worst = worst.max(relative_error(ev.param_grads[p][[idx / c, idx % c]], numeric));
        }
        println!("{name:<22} max relative error {worst:.2e}");
    }

    let gd = ev.delta_grad.expect("perturbation tracked");
    let mut worst: f64 = 0.0;
    for ((r, c), &a) in gd.indexed_iter() {
        let numeric = derivative(|h| {
            let mut d = delta.clone();
            d[[r, c]] += h;
            loss_at(&model, &d)
        })?;
        worst = worst.max(relative_error(a, numeric));
    }
    println!("{:<22} max relative error {worst:.2e}", "delta");
    Ok(())
}
