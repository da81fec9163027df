use std::time::Instant;

use lpsmc::laplace::{fit, FitOptions, Hyperparameters};
use lpsmc::simulation::{generate_dataset, ScenarioConfig};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let scenario = ScenarioConfig::scenario1(300);
    let sim = generate_dataset(&scenario, 2024)?;
    println!(
        "n = {}, events = {}, cured (hidden) = {:.1}%, plateau = {:.1}%",
        sim.data.n(),
        sim.data.num_events(),
        100.0 * sim.cure_fraction(),
        100.0 * sim.plateau_fraction()
    );

    let hyper = Hyperparameters::default();
    let options = FitOptions {
        t_upper: Some(scenario.tau1),
        ..FitOptions::default()
    };
    let start = Instant::now();
    let fitted = fit(&sim.data, &hyper, &options)?;
    let elapsed = start.elapsed();

    println!(
        "v* = {:.2} after {} objective evaluations ({:.3} s)",
        fitted.v_star,
        fitted.bracket.evaluations.len(),
        elapsed.as_secs_f64()
    );
    println!(
        "final Newton: {} iterations, gradient max-norm {:.2e}",
        fitted.posterior.iterations, fitted.posterior.grad_norm
    );

    let truth = [0.70, -1.15, 0.95, -0.10, 0.25];
    let names = ["beta0", "beta1", "beta2", "gamma1", "gamma2"];
    let layout = fitted.layout;
    for (j, idx) in layout.beta().chain(layout.gamma()).enumerate() {
        println!(
            "{:<7} truth {:>6.2}  estimate {:>7.3}  sd {:.3}",
            names[j],
            truth[j],
            fitted.mean()[idx],
            fitted.sd(idx)
        );
    }
    Ok(())
}
