//! Simulated data written to CSV, read back with a column mapping, fitted,
//! and the fit saved and reloaded for interval queries.

use lpsmc::cli::csv_io::{read_csv, write_dataset_csv, ColumnMapping};
use lpsmc::cli::fit_file::FitFile;
use lpsmc::cli::interval_rows;
use lpsmc::laplace::{fit, FitOptions, Hyperparameters};
use lpsmc::simulation::{generate_dataset, ScenarioConfig};

fn main() -> Result<(), lpsmc::LpsmcError> {
    let sim = generate_dataset(&ScenarioConfig::scenario1(300), 5)?;
    let names = vec!["x1".to_string(), "x2".to_string()];
    let latency = vec!["z1".to_string(), "z2".to_string()];
    let mut bytes = Vec::new();
    write_dataset_csv(&mut bytes, &sim.data, &names, &latency)?;
    let text = String::from_utf8(bytes).expect("utf-8 output");
    println!("{}", text.lines().take(4).collect::<Vec<_>>().join("\n"));

    let mapping = ColumnMapping {
        time: "time".into(),
        status: "status".into(),
        incidence: names,
        latency,
        center: vec!["x1".into()],
    };
    let loaded = read_csv(text.as_bytes(), &mapping)?;
    let fitted = fit(&loaded.dataset, &Hyperparameters::default(), &FitOptions::default())?;
    let z = loaded.dataset.z();
    let latency_mean = (0..z.ncols()).map(|j| z.column(j).mean()).collect();
    let file = FitFile::new(fitted, loaded.incidence_names, loaded.latency_names, loaded.centers, latency_mean, 5);

    let dir = std::env::temp_dir().join("lpsmc_csv_workflow");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("fit.json");
    file.write(&path)?;
    let reloaded = FitFile::read(&path)?;
    println!("fit file {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let targets = ["cure x=1,0,1", "S0 q=0.5", "Su z=0,0.4 t=3"].map(String::from);
    for row in interval_rows(&reloaded, &targets, &[0.05])? {
        println!("{:<16} {:.4} [{:.4}; {:.4}]", row.target, row.point, row.lower, row.upper);
    }
    Ok(())
}
