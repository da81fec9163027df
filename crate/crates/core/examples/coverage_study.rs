//! Coverage of the S0 and S_u intervals at the generating quantiles `t_q`.
//!
//! `cargo run --release --example coverage_study -- scenario1 100 30`

use lpsmc::simulation::{coverage_survival, ScenarioConfig, SURVIVAL_QUANTILES};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("scenario1", String::as_str);
    let replications = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(50);
    let num_basis = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(30);

    let scenario = ScenarioConfig::preset(name, 300)?;
    let table = coverage_survival(&scenario, replications, 1, num_basis, &SURVIVAL_QUANTILES)?;
    print!("{:<8}", "");
    for q in &table.quantiles {
        print!(" {:>6}", format!("t{q:.2}"));
    }
    println!();
    for (label, row) in [
        ("S0 90", &table.baseline90),
        ("S0 95", &table.baseline95),
        ("Su 90", &table.uncured90),
        ("Su 95", &table.uncured95),
    ] {
        print!("{label:<8}");
        for v in row {
            print!(" {v:>6.1}");
        }
        println!();
    }
    Ok(())
}
