#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Trial-shaped survival CSV: `FAILTIME, FAILCENS, TRT, SEX, AGE` with a cure
/// fraction around 30%, uncentered ages and two rows with missing cells.
pub fn trial_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age = Normal::new(47.0, 13.0).unwrap();
    let censor = Exp::new(0.12).unwrap();
    let mut out = String::from("FAILTIME,FAILCENS,TRT,SEX,AGE\n");
    for i in 0..n {
        let trt = u8::from(rng.random::<f64>() < 0.5);
        let sex = u8::from(rng.random::<f64>() < 0.4);
        let a: f64 = age.sample(&mut rng);
        let lp = 1.1 - 0.6 * f64::from(trt) + 0.1 * f64::from(sex) + 0.01 * (a - 47.0);
        let susceptible = rng.random::<f64>() < 1.0 / (1.0 + (-lp).exp());
        let event = if susceptible {
            let rate = (0.2 * f64::from(trt) - 0.1 * f64::from(sex)).exp();
            -rng.random::<f64>().ln() / (0.6 * rate)
        } else {
            f64::INFINITY
        };
        let c: f64 = censor.sample(&mut rng);
        let c = c.min(9.0);
        let (time, status) = if event <= c { (event, 1) } else { (c, 0) };
        if i == 3 {
            writeln!(out, "{time:.4},{status},{trt},,{a:.1}").unwrap();
        } else if i == 7 {
            writeln!(out, "{time:.4},{status},{trt},{sex},NA").unwrap();
        } else {
            writeln!(out, "{time:.4},{status},{trt},{sex},{a:.1}").unwrap();
        }
    }
    out
}

pub fn write_trial_csv(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("trial.csv");
    std::fs::write(&path, trial_csv(n, seed)).unwrap();
    path
}

pub fn fit_args(input: &Path, out: &Path) -> Vec<String> {
    [
        "lpsmc",
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--time-col",
        "FAILTIME",
        "--status-col",
        "FAILCENS",
        "--incidence-cols",
        "TRT,SEX,AGE",
        "--latency-cols",
        "TRT,SEX,AGE",
        "--center",
        "AGE",
        "--alpha",
        "0.05,0.10",
        "--seed",
        "11",
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}
