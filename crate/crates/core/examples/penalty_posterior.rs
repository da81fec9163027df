//! The approximate posterior of the log penalty on a fine grid, next to the
//! value picked by the bracketing walk.

use lpsmc::laplace::{fit, profile_for_fit, FitOptions, Hyperparameters};
use lpsmc::simulation::{generate_dataset, ScenarioConfig};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let scenario = ScenarioConfig::scenario2(300);
    let sim = generate_dataset(&scenario, 3)?;
    let options = FitOptions {
        t_upper: Some(scenario.tau1),
        ..FitOptions::default()
    };
    let fitted = fit(&sim.data, &Hyperparameters::default(), &options)?;

    let grid: Vec<f64> = (0..=800).map(|i| fitted.v_star - 4.0 + 0.01 * i as f64).collect();
    let profile = profile_for_fit(&sim.data, &fitted, &grid)?;
    let (v_max, density_max) = profile
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");

    println!("walk: v* = {:.3} after {} evaluations", fitted.v_star, fitted.bracket.evaluations.len());
    println!("grid: argmax v = {v_max:.3}, density {density_max:.4}");
    for (v, density) in profile.iter().step_by(50) {
        let bar = "#".repeat((60.0 * density / density_max).round() as usize);
        println!("{v:>7.2} {density:>8.4} {bar}");
    }
    Ok(())
}
