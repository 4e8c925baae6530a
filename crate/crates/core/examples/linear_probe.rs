//! Linear-probe protocol on raw features: repeated random 10/10/80 splits,
//! mean and standard deviation of test accuracy, and the embedding export.

use rosa::eval::{embeddings_csv, evaluate_embeddings, train_probe, ProbeConfig};
use rosa::graph::generate_sbm;

fn main() -> rosa::Result<()> {
    let g = generate_sbm(3, 40, 0.15, 0.02, 6, 1.2, 21)?;
    for l2 in [0.0, 1.0, 10.0] {
        let cfg = ProbeConfig { l2_strength: l2, runs: 10, ..Default::default() };
        let r = evaluate_embeddings(g.features(), &g, &cfg)?;
        println!("l2 {l2:>4}: accuracy {:.2} ± {:.2} over {} runs", 100.0 * r.mean, 100.0 * r.std, r.accuracies.len());
    }

    // A single probe on an explicit mask.
    let train: Vec<bool> = (0..g.num_nodes()).map(|i| i % 2 == 0).collect();
    let probe = train_probe(g.features(), g.labels(), &train, g.num_classes(), &ProbeConfig::default())?;
    let pred = probe.predict(g.features());
    let held_out: Vec<usize> = (0..g.num_nodes()).filter(|i| !train[*i]).collect();
    let correct = held_out.iter().filter(|&&i| Some(pred[i]) == g.labels()[i]).count();
    println!("even/odd split: {correct}/{} held-out nodes correct", held_out.len());

    let head: String = embeddings_csv(g.features()).lines().take(3).collect::<Vec<_>>().join("\n");
    println!("{head}");
    Ok(())
}
