//! Pretrain on the planted-partition fixture and compare linear probes on raw
//! features and on learned embeddings.
//!
//! cargo run --release --example pretrain_sbm -- [epochs] [seed]

use rosa::eval::{evaluate_embeddings, extract_embeddings, ProbeConfig};
use rosa::fixture::{sbm_config, sbm_graph};
use rosa::trainer::pretrain_with;

fn main() -> rosa::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(50) as usize;
    let seed = args.get(1).copied().unwrap_or(0);

    let g = sbm_graph(7)?;
    let cfg = rosa::trainer::TrainConfig { seed, ..sbm_config(epochs) };
    let out = pretrain_with(&g, &cfg, |r| {
        if r.epoch == 1 || r.epoch % 10 == 0 {
            println!("epoch {:>3}  loss {:.4}  |delta| {:.2e}", r.epoch, r.loss, r.delta_norm);
        }
    })?;
    let losses = out.losses();
    let drop = 1.0 - losses[losses.len() - 1] / losses[0];
    println!("loss drop since epoch 1: {:.1}%", 100.0 * drop);

    let probe = ProbeConfig { runs: 1, ..Default::default() };
    let raw = evaluate_embeddings(g.features(), &g, &probe)?;
    let learned = evaluate_embeddings(&extract_embeddings(&out.last, &g)?, &g, &probe)?;
    println!("raw features probe: {:.1}%", 100.0 * raw.mean);
    println!("pretrained probe:   {:.1}%", 100.0 * learned.mean);
    Ok(())
}
