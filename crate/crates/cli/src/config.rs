//! Effective configuration: model and class documents plus command-line overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spectral_interp::minimax::{ClassSpec, SaddleOptions};
use spectral_interp::model::{ModelDocument, SimulationSettings};

use crate::error::CliError;

/// Numeric knobs that may replace values from the model file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Frequency cutoff Λ, in [1, 4096]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    /// Number of frequency nodes (odd)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    /// Time step on S instead of the matched lattice
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    /// Tikhonov parameter instead of the automatic choice
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tikhonov: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_replications: Option<usize>,
    /// Duality-gap tolerance of the saddle iteration
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

fn range_error(name: &str, value: impl std::fmt::Display, rule: &str) -> CliError {
    CliError::Input(format!("--{name} {value}: {rule}"))
}

impl Overrides {
    pub fn check(&self) -> Result<(), CliError> {
        if let Some(l) = self.lambda_max {
            if !(1.0..=4096.0).contains(&l) {
                return Err(range_error("lambda-max", l, "must lie in [1, 4096]"));
            }
        }
        if let Some(n) = self.n_points {
            if n < 3 || n % 2 == 0 {
                return Err(range_error("n-points", n, "must be odd and at least 3"));
            }
        }
        if let Some(t) = self.time_step {
            if !(t > 0.0 && t.is_finite()) {
                return Err(range_error("time-step", t, "must be positive"));
            }
        }
        if let Some(t) = self.tikhonov {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(range_error("tikhonov", t, "must be nonnegative"));
            }
        }
        if self.n_replications == Some(0) {
            return Err(range_error("n-replications", 0, "must be positive"));
        }
        if let Some(t) = self.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(range_error("tol", t, "must be positive"));
            }
        }
        if self.max_iter == Some(0) {
            return Err(range_error("max-iter", 0, "must be positive"));
        }
        Ok(())
    }

    pub fn apply_model(&self, doc: &mut ModelDocument) {
        if let Some(l) = self.lambda_max {
            doc.grid.lambda_max = l;
        }
        if let Some(n) = self.n_points {
            doc.grid.n_points = n;
        }
        if self.time_step.is_some() {
            doc.time_step = self.time_step;
        }
        if self.tikhonov.is_some() {
            doc.tikhonov = self.tikhonov;
        }
        if self.seed.is_some() || self.n_replications.is_some() {
            let mut sim = doc.simulation.unwrap_or_default();
            if let Some(s) = self.seed {
                sim.seed = s;
            }
            if let Some(n) = self.n_replications {
                sim.n_replications = n;
            }
            doc.simulation = Some(sim);
        }
    }

    pub fn apply_saddle(&self, options: &mut SaddleOptions) {
        if let Some(t) = self.tol {
            options.tol = t;
        }
        if let Some(m) = self.max_iter {
            options.max_iter = m;
        }
        if let Some(s) = self.seed {
            options.seed = s;
        }
    }
}

/// The two classes of a minimax run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassesDocument {
    #[serde(rename = "F")]
    pub f: ClassSpec,
    #[serde(rename = "G")]
    pub g: ClassSpec,
}

/// Reads and parses a JSON file, reporting the field path and line of any error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        CliError::Input(format!(
            "{}: line {}, column {}, at '{}': {}",
            path.display(),
            inner.line(),
            inner.column(),
            e.path(),
            inner
        ))
    })
}

pub fn simulation_settings(doc: &ModelDocument) -> SimulationSettings {
    doc.simulation.unwrap_or_default()
}
