//! Delta-method intervals from one fit: regression effects, cure rate,
//! baseline and latency survival, and survival quantiles.

use lpsmc::intervals::{IncidenceTarget, IntervalEngine, QuantileProfile};
use lpsmc::laplace::{fit, FitOptions, Hyperparameters};
use lpsmc::simulation::{generate_dataset, ScenarioConfig};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let scenario = ScenarioConfig::scenario1(300);
    let sim = generate_dataset(&scenario, 7)?;
    let options = FitOptions {
        t_upper: Some(scenario.tau1),
        ..FitOptions::default()
    };
    let fitted = fit(&sim.data, &Hyperparameters::default(), &options)?;
    let engine = IntervalEngine::new(&fitted)?;
    let layout = fitted.layout;

    for (name, h) in ["beta1", "beta2"].iter().zip(layout.beta().skip(1)) {
        let ci = engine.latent(h, 0.05)?;
        println!("{name:<6} {:>7.3}  95% [{:.3}; {:.3}]", ci.point, ci.lower, ci.upper);
    }

    let profile = [1.0, 0.0, 0.5];
    let cure = engine.incidence(&profile, 0.10, IncidenceTarget::Cured)?;
    println!(
        "cure rate at x = (1, 0, 0.5): {:.3}  90% [{:.3}; {:.3}]  (truth {:.3})",
        cure.point,
        cure.lower,
        cure.upper,
        1.0 - scenario.incidence(0.0, 0.5)
    );

    let z = [0.0, 0.4];
    println!("{:>5} {:>22} {:>22}", "t", "S0(t) 95%", "Su(t | z) 95%");
    for t in [1.0, 2.0, 4.0, 6.0] {
        let s0 = engine.baseline_survival(t, 0.05)?;
        let su = engine.latency_survival(&z, t, 0.05)?;
        println!(
            "{t:>5.1} {:>6.3} [{:.3}; {:.3}] {:>6.3} [{:.3}; {:.3}]",
            s0.point, s0.lower, s0.upper, su.point, su.lower, su.upper
        );
    }

    for q in [0.2, 0.5, 0.9] {
        let tq = engine.quantile(q, &QuantileProfile::Latency(z.to_vec()))?;
        let truth = scenario.latency_quantile(q, z);
        println!("t_{q:.2} at z: fitted {:.3}, generating {truth:.3}", tq.time);
    }
    Ok(())
}
