//! g-EMD between two non-aligned views of a graph: the cost, the topology
//! rescale, the plan, and the effect of reordering one view's nodes.

use ndarray::Axis;
use rosa::gemd::{g_emd, g_emd_report, rectify_cost, GemdConfig};
use rosa::graph::{generate_sbm, union_hop_distances};
use rosa::sampling::{sample_view_pair, SamplerConfig};

fn main() -> rosa::Result<()> {
    let g = generate_sbm(2, 20, 0.3, 0.03, 8, 0.3, 3)?;
    let pair = sample_view_pair(&g, 5, &SamplerConfig { walk_length: 6, ..Default::default() }, 1)?;
    let (a, b) = (&pair.first, &pair.second);
    println!("view A nodes {:?}", a.nodes);
    println!("view B nodes {:?}", b.nodes);

    let psi = union_hop_distances(&g, &a.nodes, &b.nodes, 6)?;
    let cfg = GemdConfig { lambda: 50.0, iters: 100, ..Default::default() };
    let report = g_emd_report(&a.features, &b.features, &psi, &cfg)?;
    println!("hop distances\n{psi}");
    println!("rectified cost\n{:.3}", rectify_cost(&report.cost, &report.scale)?);
    println!("plan\n{:.3}", report.plan.gamma);
    println!("g-EMD {:.6}", report.plan.value);

    // Reverse view A's node order together with the hop rows.
    let order: Vec<usize> = (0..a.nodes.len()).rev().collect();
    let permuted = g_emd(&a.features.select(Axis(0), &order), &b.features, &psi.select(Axis(0), &order), &cfg)?;
    println!("after reordering view A {permuted:.6} (difference {:.1e})", (permuted - report.plan.value).abs());

    let flat = GemdConfig { rescale: false, ..cfg };
    println!("without topology rescale {:.6}", g_emd(&a.features, &b.features, &psi, &flat)?);
    Ok(())
}
