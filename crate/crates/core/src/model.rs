//! JSON model document tying densities, missing set and weight together.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::SpectralDensity;
use crate::error::{Error, Result};
use crate::estimator::{EstimateOptions, Problem};
use crate::family::DensitySpec;
use crate::grid::{FrequencyGrid, GridParams};
use crate::missing::{Interval, MissingSet, TimeStep};
use crate::operators::{Mode, Regularization};
use crate::weight::{WeightFunction, WeightSpec};

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dim: usize,
    pub grid: GridParams,
    /// Fold Lorentzian tails of analytic families back into [−Λ, Λ].
    #[serde(default = "default_true")]
    pub alias_folding: bool,
    #[serde(rename = "F")]
    pub f: DensitySpec,
    #[serde(rename = "G")]
    pub g: DensitySpec,
    #[serde(rename = "S")]
    pub s: Vec<Interval>,
    pub a: WeightSpec,
    /// Time step on S; the matched lattice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Tikhonov parameter; the automatic choice when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tikhonov: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSettings>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(default = "default_replications")]
    pub n_replications: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_replications() -> usize {
    10_000
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            window: None,
            time_step: None,
            n_replications: default_replications(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    #[serde(default = "default_fine_step")]
    pub fine_step: f64,
}

fn default_fine_step() -> f64 {
    0.01
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            window: None,
            fine_step: default_fine_step(),
        }
    }
}

/// Concrete objects built from a [`ModelDocument`].
#[derive(Clone, Debug)]
pub struct Model {
    pub document: ModelDocument,
    pub grid: FrequencyGrid,
    pub f: SpectralDensity,
    pub g: SpectralDensity,
    pub set: MissingSet,
    pub a: WeightFunction,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn content_hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        Sha256::digest(&bytes).into()
    }

    pub fn time_step_rule(&self) -> TimeStep {
        self.time_step.map_or(TimeStep::Matched, TimeStep::Fixed)
    }

    pub fn regularization(&self) -> Regularization {
        self.tikhonov.map_or(Regularization::Auto, Regularization::Fixed)
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions {
            mode: self.mode,
            regularization: self.regularization(),
            ..EstimateOptions::default()
        }
    }

    /// The same model with Λ and the number of frequency nodes doubled.
    pub fn refined(&self) -> Self {
        let mut out = self.clone();
        out.grid = GridParams {
            lambda_max: 2.0 * self.grid.lambda_max,
            n_points: 2 * self.grid.n_points - 1,
        };
        out
    }

    pub fn build(&self) -> Result<Model> {
        if self.dim == 0 {
            return Err(Error::Model("dim must be positive".into()));
        }
        let grid = FrequencyGrid::new(self.grid.lambda_max, self.grid.n_points)?;
        let f = self.f.build(&grid, self.dim, self.alias_folding)?;
        let g = self.g.build(&grid, self.dim, self.alias_folding)?;
        let set = MissingSet::new(self.s.clone(), &grid, self.time_step_rule())?;
        let a = self.a.build(&set, self.dim)?;
        Ok(Model {
            document: self.clone(),
            grid,
            f,
            g,
            set,
            a,
        })
    }
}

impl Model {
    pub fn problem(&self) -> Problem<'_> {
        Problem {
            grid: &self.grid,
            f: &self.f,
            g: &self.g,
            set: &self.set,
            a: &self.a,
        }
    }

    pub fn simulation_settings(&self) -> SimulationSettings {
        self.document.simulation.unwrap_or_default()
    }

    pub fn oracle_settings(&self) -> OracleSettings {
        self.document.oracle.unwrap_or_default()
    }

    /// Default observation window: five time units beyond S on each side.
    pub fn default_window(&self) -> (f64, f64) {
        let (lo, hi) = self.set.span();
        (lo - crate::simulation::DEFAULT_MARGIN, hi + crate::simulation::DEFAULT_MARGIN)
    }
}
