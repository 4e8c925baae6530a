//! Entropic transport against the exact linear program on one small instance,
//! for a range of λ.

use ndarray::array;
use rosa::gemd::{exact_emd_plan, sinkhorn, TransportProblem};

fn main() -> rosa::Result<()> {
    let cost = array![[0.1, 1.2, 0.8], [0.9, 0.2, 1.5], [1.1, 0.7, 0.3], [0.4, 1.9, 0.6]];
    let t = array![0.4, 0.3, 0.2, 0.1];
    let r = array![0.5, 0.25, 0.25];

    let (plan, exact) = exact_emd_plan(&cost, &t, &r)?;
    println!("exact optimum {exact:.6}");
    println!("exact plan\n{plan:.3}");

    for lambda in [1.0, 5.0, 20.0, 50.0, 200.0] {
        let problem = TransportProblem::new(cost.clone(), t.clone(), r.clone(), lambda, 200)?;
        let p = sinkhorn(&problem)?;
        println!(
            "lambda {lambda:>5}: value {:.6}  gap {:.2e}  row violation {:.1e}  col violation {:.1e}",
            p.value,
            p.value - exact,
            p.row_violation.last().copied().unwrap_or(0.0),
            p.col_violation(&r)
        );
    }
    Ok(())
}
