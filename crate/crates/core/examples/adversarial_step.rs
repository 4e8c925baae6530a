//! One free adversarial inner loop on a fixed batch: the perturbation starts
//! uniform in [−α, α] and climbs the loss by normalized steps of size α.

use rosa::contrastive::{adversarial_epoch_step, batch_loss, AdvConfig, LossConfig, PreparedBatch};
use rosa::encoder::Model;
use rosa::fixture::{sbm_config, sbm_graph};
use rosa::graph::HopCache;
use rosa::sampling::sample_batch;

fn main() -> rosa::Result<()> {
    let g = sbm_graph(7)?;
    let cfg = sbm_config(1);
    let loss_cfg: LossConfig = cfg.loss.clone();
    let pairs = sample_batch(&g, &[1, 12, 33, 48], &cfg.sampler, 0)?;
    let batch = PreparedBatch::new(&g, &pairs, &loss_cfg, &mut HopCache::new(loss_cfg.hop_cap))?;
    let model = Model::init(cfg.encoder, g.feature_dim(), 32, 32, 0)?;

    for steps in [1, 3, 10] {
        let adv = AdvConfig { ascent_steps: steps, step_size: 0.05, enabled: true };
        let out = adversarial_epoch_step(&model, &batch, &adv, &loss_cfg, 0, 1)?;
        let before = batch_loss(&model, &batch, &loss_cfg, Some(&out.delta0))?;
        let after = batch_loss(&model, &batch, &loss_cfg, Some(&out.delta))?;
        println!("M = {steps:>2}: loss at delta0 {before:.6}, at delta_M {after:.6}, |delta_M| {:.4}", out.trace.delta_norm);
        let norms: Vec<String> = out.trace.step_norms.iter().map(|n| format!("{n:.4}")).collect();
        println!("        step norms [{}]", norms.join(", "));
    }
    Ok(())
}
