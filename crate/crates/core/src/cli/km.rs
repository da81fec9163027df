//! Kaplan-Meier product-limit estimator.

use serde::{Deserialize, Serialize};

use crate::model::SurvivalDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmStep {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierCurve {
    /// One step per distinct observed time.
    pub steps: Vec<KmStep>,
    /// Times of censored observations, with the curve height there.
    pub censor_marks: Vec<(f64, f64)>,
    /// Last value of the curve.
    pub plateau: f64,
}

impl KaplanMeierCurve {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }

    pub fn survival(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.survival).collect()
    }

    /// Curve height at `t` (right-continuous steps).
    pub fn at(&self, t: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s.time <= t)
            .last()
            .map_or(1.0, |s| s.survival)
    }
}

pub fn kaplan_meier(data: &SurvivalDataset) -> KaplanMeierCurve {
    product_limit(data.times(), data.events())
}

/// Product-limit estimate; at tied times events are counted before censorings.
pub fn product_limit(times: &[f64], events: &[bool]) -> KaplanMeierCurve {
    assert_eq!(times.len(), events.len(), "times and events differ in length");
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut survival = 1.0;
    let mut steps = Vec::new();
    let mut censor_marks = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut deaths = 0;
        let mut censored = 0;
        while i < order.len() && times[order[i]] == t {
            if events[order[i]] {
                deaths += 1;
            } else {
                censored += 1;
            }
            i += 1;
        }
        if deaths > 0 {
            survival *= 1.0 - deaths as f64 / at_risk as f64;
        }
        steps.push(KmStep {
            time: t,
            survival,
            at_risk,
            events: deaths,
            censored,
        });
        if censored > 0 {
            censor_marks.push((t, survival));
        }
        at_risk -= deaths + censored;
    }
    KaplanMeierCurve {
        plateau: survival,
        steps,
        censor_marks,
    }
}
