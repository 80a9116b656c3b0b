use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniform symmetric frequency grid on [−Λ, Λ] with trapezoid weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridParams", into = "GridParams")]
pub struct FrequencyGrid {
    lambda_max: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub lambda_max: f64,
    pub n_points: usize,
}

impl TryFrom<GridParams> for FrequencyGrid {
    type Error = Error;
    fn try_from(p: GridParams) -> Result<Self> {
        FrequencyGrid::new(p.lambda_max, p.n_points)
    }
}

impl From<FrequencyGrid> for GridParams {
    fn from(g: FrequencyGrid) -> Self {
        GridParams {
            lambda_max: g.lambda_max,
            n_points: g.len(),
        }
    }
}

/// A group of grid nodes that a real process must treat together: λ = 0 alone, or the pair ±λ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub positive: usize,
    pub negative: Option<usize>,
    /// Σ of the spectral weights ω/2π of the member nodes.
    pub measure: f64,
}

impl Bin {
    pub fn members(&self) -> impl Iterator<Item = usize> {
        std::iter::once(self.positive).chain(self.negative)
    }
}

impl FrequencyGrid {
    pub const DEFAULT_LAMBDA_MAX: f64 = 64.0;
    pub const DEFAULT_POINTS: usize = 4097;

    pub fn new(lambda_max: f64, n_points: usize) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda_max must be positive, got {lambda_max}"
            )));
        }
        if n_points < 3 || n_points % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "n_points must be odd and at least 3, got {n_points}"
            )));
        }
        let half = (n_points - 1) / 2;
        let step = lambda_max / half as f64;
        let nodes = (0..n_points)
            .map(|j| (j as f64 - half as f64) * step)
            .collect();
        let mut weights = vec![step; n_points];
        weights[0] = 0.5 * step;
        weights[n_points - 1] = 0.5 * step;
        Ok(FrequencyGrid {
            lambda_max,
            nodes,
            weights,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.lambda_max / (self.len() - 1) as f64
    }

    /// Weight of node `j` in (1/2π)∫ · dλ.
    pub fn measure(&self, j: usize) -> f64 {
        self.weights[j] / (2.0 * PI)
    }

    pub fn measures(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / (2.0 * PI)).collect()
    }

    pub fn zero_index(&self) -> usize {
        (self.len() - 1) / 2
    }

    /// Index of −λ_j.
    pub fn mirror(&self, j: usize) -> usize {
        self.len() - 1 - j
    }

    /// Bins ordered by increasing |λ|.
    pub fn bins(&self) -> Vec<Bin> {
        let z = self.zero_index();
        (z..self.len())
            .map(|j| {
                if j == z {
                    Bin {
                        positive: j,
                        negative: None,
                        measure: self.measure(j),
                    }
                } else {
                    let m = self.mirror(j);
                    Bin {
                        positive: j,
                        negative: Some(m),
                        measure: self.measure(j) + self.measure(m),
                    }
                }
            })
            .collect()
    }

    /// Period in time of the discrete frequency model; lags beyond half of it alias.
    pub fn time_period(&self) -> f64 {
        2.0 * PI / self.spacing()
    }

    pub fn refined(&self) -> Result<Self> {
        FrequencyGrid::new(2.0 * self.lambda_max, 2 * self.len() - 1)
    }

    pub fn params(&self) -> GridParams {
        GridParams {
            lambda_max: self.lambda_max,
            n_points: self.len(),
        }
    }

    pub fn same_as(&self, other: &FrequencyGrid) -> bool {
        self.len() == other.len() && (self.lambda_max - other.lambda_max).abs() <= 1e-12 * self.lambda_max
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid::new(Self::DEFAULT_LAMBDA_MAX, Self::DEFAULT_POINTS).expect("valid default grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_width() {
        let g = FrequencyGrid::new(64.0, 4097).unwrap();
        let s: f64 = g.weights().iter().sum();
        assert!((s - 128.0).abs() < 1e-9);
        assert_eq!(g.nodes()[g.zero_index()], 0.0);
        assert!((g.spacing() - 128.0 / 4096.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_nodes() {
        let g = FrequencyGrid::new(3.0, 31).unwrap();
        for j in 0..g.len() {
            assert!((g.nodes()[j] + g.nodes()[g.mirror(j)]).abs() < 1e-12);
        }
        let total: f64 = g.bins().iter().map(|b| b.measure).sum();
        assert!((total - 6.0 / (2.0 * PI)).abs() < 1e-12);
        assert_eq!(g.bins().len(), 16);
    }

    #[test]
    fn rejects_even_point_count() {
        assert!(FrequencyGrid::new(1.0, 10).is_err());
        assert!(FrequencyGrid::new(-1.0, 11).is_err());
    }
}
