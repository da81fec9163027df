//! Cubic B-spline basis on equal segments and its difference penalty.

use lpsmc::spline::{bspline_eval, difference_matrix, penalty_matrix, KnotGrid};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let grid = KnotGrid::new(11.0, 10)?;
    println!("knots: {:?}", grid.knots().iter().map(|k| format!("{k:.3}")).collect::<Vec<_>>());

    for t in [0.0, 1.7, 5.5, 9.9, 11.0] {
        let b = bspline_eval(&grid, t)?;
        let nonzero: Vec<String> = b
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| format!("b{}={v:.4}", k + 1))
            .collect();
        println!("t = {t:>4}: sum {:.12}  {}", b.sum(), nonzero.join(" "));
    }

    let d = difference_matrix(6, 3)?;
    println!("third-order differences for K = 6:\n{d}");
    let p = penalty_matrix(6, 3, 1e-6)?;
    println!("penalty D'D + 1e-6 I:\n{}", p.matrix());
    Ok(())
}
