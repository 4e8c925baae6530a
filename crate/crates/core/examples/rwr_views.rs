//! Random-walk-with-restart view pairs and their augmentations.

use rosa::augment::{augment_batch, AugmentConfig};
use rosa::graph::{generate_sbm, homophily_ratio};
use rosa::sampling::{sample_batch, SamplerConfig};

fn main() -> rosa::Result<()> {
    let g = generate_sbm(2, 30, 0.2, 0.02, 4, 0.5, 11)?;
    println!("{} nodes, {} edges, homophily {:.3}", g.num_nodes(), g.num_edges(), homophily_ratio(&g)?);

    for aligned in [false, true] {
        let cfg = SamplerConfig { aligned, ..Default::default() };
        let pairs = sample_batch(&g, &[0, 17, 42], &cfg, 1)?;
        let augmented = augment_batch(&pairs, &AugmentConfig::default(), 99);
        println!("aligned = {aligned}");
        for (p, q) in pairs.iter().zip(&augmented) {
            println!(
                "  central {:>2}: view 1 {:?} ({} -> {} edges), view 2 {:?} ({} -> {} edges)",
                p.central(),
                p.first.nodes,
                p.first.edges.len(),
                q.first.edges.len(),
                p.second.nodes,
                p.second.edges.len(),
                q.second.edges.len()
            );
        }
    }
    Ok(())
}
