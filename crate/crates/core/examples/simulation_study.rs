//! Replication study on a preset scenario.
//!
//! `cargo run --release --example simulation_study -- scenario2 300 100 7`
//! runs S = 100 replications of n = 300 for scenario 2 from seed 7.

use std::time::Instant;

use lpsmc::laplace::Hyperparameters;
use lpsmc::simulation::{run_study, ScenarioConfig, StudyOptions};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("scenario1", String::as_str);
    let n = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(300);
    let replications = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(20);
    let seed = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(1);

    let scenario = ScenarioConfig::preset(name, n)?;
    let start = Instant::now();
    let summary = run_study(
        &scenario,
        replications,
        seed,
        &Hyperparameters::default(),
        &StudyOptions::default(),
    )?;
    print!("{}", summary.text_table());
    println!("wall time {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
