//! Each ablation switch on the planted-partition fixture: loss trace summary
//! and probe accuracy.

use rosa::config::Ablation;
use rosa::eval::{evaluate_protocol, ProbeConfig};
use rosa::fixture::{sbm_config, sbm_graph};
use rosa::trainer::pretrain;

fn main() -> rosa::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(30);
    let g = sbm_graph(7)?;
    let probe = ProbeConfig { runs: 1, ..Default::default() };
    println!("{:<8} {:>10} {:>10} {:>10} {:>9}", "mode", "epoch 1", "final", "|delta|", "probe %");
    for mode in Ablation::ALL {
        let mut cfg = sbm_config(epochs);
        mode.apply(&mut cfg);
        let out = pretrain(&g, &cfg)?;
        let (first, last) = (&out.history[0], out.history.last().expect("epochs > 0"));
        let acc = evaluate_protocol(&out.last, &g, &probe)?.mean;
        println!("{:<8} {:>10.4} {:>10.4} {:>10.2e} {:>9.1}", mode.to_string(), first.loss, last.loss, last.delta_norm, 100.0 * acc);
    }
    Ok(())
}
