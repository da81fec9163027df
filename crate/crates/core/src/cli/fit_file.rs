//! Versioned JSON fit file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LpsmcError, Result};
use crate::laplace::FitResult;

pub const FORMAT: &str = "lpsmc-fit";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub num_basis: usize,
    pub num_incidence: usize,
    pub num_latency: usize,
    pub latent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub format: String,
    pub version: u32,
    pub dimensions: Dimensions,
    /// Incidence covariate names (intercept excluded).
    pub incidence_names: Vec<String>,
    pub latency_names: Vec<String>,
    /// `(column, mean)` subtracted before fitting.
    pub centers: Vec<(String, f64)>,
    /// Column means of the latency design, the default profile for `S_u`.
    pub latency_mean: Vec<f64>,
    pub seed: u64,
    pub fit: FitResult,
}

impl FitFile {
    pub fn new(
        fit: FitResult,
        incidence_names: Vec<String>,
        latency_names: Vec<String>,
        centers: Vec<(String, f64)>,
        latency_mean: Vec<f64>,
        seed: u64,
    ) -> Self {
        let layout = fit.layout;
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            dimensions: Dimensions {
                num_basis: layout.num_basis,
                num_incidence: layout.num_incidence,
                num_latency: layout.num_latency,
                latent: layout.dim(),
            },
            incidence_names,
            latency_names,
            centers,
            latency_mean,
            seed,
            fit,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FitFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(LpsmcError::Config(format!(
                "unsupported fit file: format '{}' version {}",
                file.format, file.version
            )));
        }
        let layout = file.fit.layout;
        let dim = layout.dim();
        if file.dimensions.latent != dim
            || file.fit.posterior.mean.len() != dim
            || file.fit.posterior.covariance.nrows() != dim
            || file.fit.posterior.covariance.ncols() != dim
        {
            return Err(LpsmcError::Config("fit file dimensions are inconsistent".into()));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
