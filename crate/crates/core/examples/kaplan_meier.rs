use lpsmc::cli::kaplan_meier;
use lpsmc::simulation::{generate_dataset, ScenarioConfig};

fn main() -> Result<(), lpsmc::LpsmcError> {
    for scenario in [ScenarioConfig::scenario1(300), ScenarioConfig::scenario2(300)] {
        let sim = generate_dataset(&scenario, 11)?;
        let km = kaplan_meier(&sim.data);
        println!(
            "{}: plateau {:.3}, hidden cure share {:.3}, {:.1}% of units beyond the last event",
            scenario.name,
            km.plateau,
            sim.cure_fraction(),
            100.0 * sim.plateau_fraction()
        );
        for t in [1.0, 2.0, 4.0, 6.0, 8.0, 10.0] {
            println!("  S_km({t:>4.1}) = {:.3}", km.at(t));
        }
    }
    Ok(())
}
