//! Built-in density families and their JSON description.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::density::{Interpolation, SpectralDensity};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{dense_from_pairs, re, CMatrix, CVector};
use num_complex::Complex64;

/// Description of a spectral density, either analytic or sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum DensitySpec {
    Zero,
    /// Ornstein–Uhlenbeck: covariance variance·e^{−rate|τ|}, density 2·rate·variance/(λ² + rate²).
    Ou { variance: f64, rate: f64 },
    /// scale/(λ² + c²).
    Rational { scale: f64, c: f64 },
    /// Constant level (white noise).
    White { level: f64 },
    /// Constant matrix, entries as [re, im].
    Constant { matrix: Vec<Vec<[f64; 2]>> },
    /// Diagonal matrix of scalar components.
    Diag(Vec<DensitySpec>),
    /// M·diag(f_k)·Mᵀ with a real mixing matrix.
    Mixed {
        mixing: Vec<Vec<f64>>,
        components: Vec<DensitySpec>,
    },
    Scaled {
        factor: f64,
        density: Box<DensitySpec>,
    },
    Sum(Vec<DensitySpec>),
    /// Rescaled so that (1/2π)∫Tr F dλ on the grid equals `trace_integral`.
    Normalized {
        trace_integral: f64,
        density: Box<DensitySpec>,
    },
    /// Grid samples; `lambda` defaults to the model grid nodes.
    Samples {
        values: Vec<Vec<Vec<[f64; 2]>>>,
        #[serde(default)]
        lambda: Option<Vec<f64>>,
        #[serde(default)]
        interpolation: Interpolation,
    },
}

/// Alias-folded Lorentzian: Σₙ amp/((λ + nP)² + c²) with period P.
pub fn folded_lorentzian(lambda: f64, amp: f64, c: f64, period: f64) -> f64 {
    let x = 2.0 * PI * c / period;
    let y = 2.0 * PI * lambda / period;
    let e1 = (-x).exp();
    let e2 = e1 * e1;
    amp * (PI / (c * period)) * (1.0 - e2) / (1.0 + e2 - 2.0 * e1 * y.cos())
}

fn lorentzian(lambda: f64, amp: f64, c: f64, fold: Option<f64>) -> f64 {
    match fold {
        Some(period) => folded_lorentzian(lambda, amp, c, period),
        None => amp / (lambda * lambda + c * c),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Model(format!("{name} must be positive, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Model(format!("{name} must be nonnegative, got {v}")))
    }
}

impl DensitySpec {
    pub fn ou(variance: f64, rate: f64) -> Self {
        DensitySpec::Ou { variance, rate }
    }

    pub fn scaled(self, factor: f64) -> Self {
        DensitySpec::Scaled {
            factor,
            density: Box::new(self),
        }
    }

    /// Evaluates the family on the grid. With `fold`, Lorentzian tails beyond ±Λ are folded back
    /// so that the discrete covariance matches the continuous one on the Nyquist lattice.
    pub fn build(&self, grid: &FrequencyGrid, dim: usize, fold: bool) -> Result<SpectralDensity> {
        let period = if fold { Some(2.0 * grid.lambda_max()) } else { None };
        self.build_inner(grid, dim, period)
    }

    fn build_inner(&self, grid: &FrequencyGrid, dim: usize, fold: Option<f64>) -> Result<SpectralDensity> {
        match self {
            DensitySpec::Zero => Ok(SpectralDensity::zeros(grid, dim)),
            DensitySpec::Ou { variance, rate } => {
                nonnegative("variance", *variance)?;
                positive("rate", *rate)?;
                let amp = 2.0 * rate * variance;
                Ok(SpectralDensity::isotropic(grid, dim, |l| lorentzian(l, amp, *rate, fold)))
            }
            DensitySpec::Rational { scale, c } => {
                nonnegative("scale", *scale)?;
                positive("c", *c)?;
                Ok(SpectralDensity::isotropic(grid, dim, |l| lorentzian(l, *scale, *c, fold)))
            }
            DensitySpec::White { level } => {
                nonnegative("level", *level)?;
                Ok(SpectralDensity::isotropic(grid, dim, |_| *level))
            }
            DensitySpec::Constant { matrix } => {
                let m = dense_from_pairs(matrix)
                    .ok_or_else(|| Error::Model("constant matrix must be square".into()))?;
                if m.nrows() != dim {
                    return Err(Error::Model(format!(
                        "constant matrix is {}x{}, expected {dim}x{dim}",
                        m.nrows(),
                        m.nrows()
                    )));
                }
                SpectralDensity::constant(grid, &m)
            }
            DensitySpec::Diag(parts) => {
                if parts.len() != dim {
                    return Err(Error::Model(format!(
                        "diag has {} components, expected {dim}",
                        parts.len()
                    )));
                }
                let built = parts
                    .iter()
                    .map(|p| p.build_inner(grid, 1, fold))
                    .collect::<Result<Vec<_>>>()?;
                SpectralDensity::from_fn_indexed(grid, dim, |j| {
                    CMatrix::from_diagonal(&CVector::from_iterator(
                        dim,
                        built.iter().map(|b| b.sample(j)[(0, 0)]),
                    ))
                })
            }
            DensitySpec::Mixed { mixing, components } => {
                let mix = mixing_matrix(mixing, dim, components.len())?;
                let built = components
                    .iter()
                    .map(|p| p.build_inner(grid, 1, fold))
                    .collect::<Result<Vec<_>>>()?;
                SpectralDensity::from_fn_indexed(grid, dim, |j| {
                    let d = CMatrix::from_diagonal(&CVector::from_iterator(
                        built.len(),
                        built.iter().map(|b| b.sample(j)[(0, 0)]),
                    ));
                    &mix * d * mix.transpose()
                })
            }
            DensitySpec::Scaled { factor, density } => {
                nonnegative("factor", *factor)?;
                Ok(density.build_inner(grid, dim, fold)?.scaled(*factor))
            }
            DensitySpec::Sum(parts) => {
                let mut acc = SpectralDensity::zeros(grid, dim);
                for p in parts {
                    acc = acc.add(&p.build_inner(grid, dim, fold)?)?;
                }
                Ok(acc)
            }
            DensitySpec::Normalized {
                trace_integral,
                density,
            } => {
                nonnegative("trace_integral", *trace_integral)?;
                let built = density.build_inner(grid, dim, fold)?;
                let current: f64 = (0..grid.len()).map(|j| grid.measure(j) * built.trace(j)).sum();
                if !(current > 0.0) {
                    return Err(Error::Model("cannot normalize a density with zero integral".into()));
                }
                Ok(built.scaled(trace_integral / current))
            }
            DensitySpec::Samples {
                values,
                lambda,
                interpolation,
            } => {
                let mats = values
                    .iter()
                    .enumerate()
                    .map(|(j, rows)| {
                        dense_from_pairs(rows)
                            .filter(|m| m.nrows() == dim)
                            .ok_or_else(|| Error::Model(format!("sample {j} is not {dim}x{dim}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                match lambda {
                    None => {
                        if mats.len() != grid.len() {
                            return Err(Error::GridMismatch(format!(
                                "{} samples given for a grid of {} nodes",
                                mats.len(),
                                grid.len()
                            )));
                        }
                        Ok(SpectralDensity::new(dim, mats)?.with_interpolation(*interpolation))
                    }
                    Some(nodes) => {
                        if nodes.len() != mats.len() || nodes.len() < 2 {
                            return Err(Error::Model(
                                "lambda and values must have equal length of at least 2".into(),
                            ));
                        }
                        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
                            return Err(Error::Model("lambda must be strictly increasing".into()));
                        }
                        SpectralDensity::from_fn(grid, dim, |l| {
                            interpolate(nodes, &mats, l, *interpolation, dim)
                        })
                        .map(|d| d.with_interpolation(*interpolation))
                    }
                }
            }
        }
    }

    /// Covariance R(τ) = (1/2π)∫e^{iτλ}F(λ)dλ of the continuous family, excluding any white part.
    /// `None` when the family has no closed form (sampled densities).
    pub fn covariance(&self, tau: f64, dim: usize) -> Option<CMatrix> {
        let id = CMatrix::identity(dim, dim);
        match self {
            DensitySpec::Zero | DensitySpec::White { .. } | DensitySpec::Constant { .. } => {
                Some(CMatrix::zeros(dim, dim))
            }
            DensitySpec::Ou { variance, rate } => Some(id.scale(variance * (-rate * tau.abs()).exp())),
            DensitySpec::Rational { scale, c } => {
                Some(id.scale(scale / (2.0 * c) * (-c * tau.abs()).exp()))
            }
            DensitySpec::Diag(parts) => {
                let vals = parts
                    .iter()
                    .map(|p| p.covariance(tau, 1).map(|m| m[(0, 0)]))
                    .collect::<Option<Vec<Complex64>>>()?;
                Some(CMatrix::from_diagonal(&CVector::from_vec(vals)))
            }
            DensitySpec::Mixed { mixing, components } => {
                let mix = mixing_matrix(mixing, dim, components.len()).ok()?;
                let vals = components
                    .iter()
                    .map(|p| p.covariance(tau, 1).map(|m| m[(0, 0)]))
                    .collect::<Option<Vec<Complex64>>>()?;
                let d = CMatrix::from_diagonal(&CVector::from_vec(vals));
                Some(&mix * d * mix.transpose())
            }
            DensitySpec::Scaled { factor, density } => {
                density.covariance(tau, dim).map(|m| m.scale(*factor))
            }
            DensitySpec::Sum(parts) => {
                let mut acc = CMatrix::zeros(dim, dim);
                for p in parts {
                    acc += p.covariance(tau, dim)?;
                }
                Some(acc)
            }
            DensitySpec::Samples { .. } | DensitySpec::Normalized { .. } => None,
        }
    }

    /// Coefficient of δ(τ) in the covariance (constant part of the density).
    pub fn white_part(&self, dim: usize) -> Option<CMatrix> {
        match self {
            DensitySpec::Zero
            | DensitySpec::Ou { .. }
            | DensitySpec::Rational { .. } => Some(CMatrix::zeros(dim, dim)),
            DensitySpec::White { level } => Some(CMatrix::identity(dim, dim).scale(*level)),
            DensitySpec::Constant { matrix } => dense_from_pairs(matrix),
            DensitySpec::Diag(parts) => {
                let vals = parts
                    .iter()
                    .map(|p| p.white_part(1).map(|m| m[(0, 0)]))
                    .collect::<Option<Vec<Complex64>>>()?;
                Some(CMatrix::from_diagonal(&CVector::from_vec(vals)))
            }
            DensitySpec::Mixed { mixing, components } => {
                let mix = mixing_matrix(mixing, dim, components.len()).ok()?;
                let vals = components
                    .iter()
                    .map(|p| p.white_part(1).map(|m| m[(0, 0)]))
                    .collect::<Option<Vec<Complex64>>>()?;
                let d = CMatrix::from_diagonal(&CVector::from_vec(vals));
                Some(&mix * d * mix.transpose())
            }
            DensitySpec::Scaled { factor, density } => density.white_part(dim).map(|m| m.scale(*factor)),
            DensitySpec::Sum(parts) => {
                let mut acc = CMatrix::zeros(dim, dim);
                for p in parts {
                    acc += p.white_part(dim)?;
                }
                Some(acc)
            }
            DensitySpec::Samples { .. } | DensitySpec::Normalized { .. } => None,
        }
    }

    /// Slowest exponential decay rate among the components, if analytic.
    pub fn slowest_rate(&self) -> Option<f64> {
        match self {
            DensitySpec::Zero | DensitySpec::White { .. } | DensitySpec::Constant { .. } => {
                Some(f64::INFINITY)
            }
            DensitySpec::Ou { rate, .. } => Some(*rate),
            DensitySpec::Rational { c, .. } => Some(*c),
            DensitySpec::Diag(parts) | DensitySpec::Sum(parts) => parts
                .iter()
                .map(|p| p.slowest_rate())
                .try_fold(f64::INFINITY, |acc, r| r.map(|r| acc.min(r))),
            DensitySpec::Mixed { components, .. } => components
                .iter()
                .map(|p| p.slowest_rate())
                .try_fold(f64::INFINITY, |acc, r| r.map(|r| acc.min(r))),
            DensitySpec::Scaled { density, .. } | DensitySpec::Normalized { density, .. } => {
                density.slowest_rate()
            }
            DensitySpec::Samples { .. } => None,
        }
    }
}

fn mixing_matrix(rows: &[Vec<f64>], dim: usize, n_components: usize) -> Result<CMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != n_components) {
        return Err(Error::Model(format!(
            "mixing matrix must be {dim}x{n_components}"
        )));
    }
    Ok(CMatrix::from_fn(dim, n_components, |i, k| re(rows[i][k])))
}

fn interpolate(nodes: &[f64], mats: &[CMatrix], l: f64, mode: Interpolation, dim: usize) -> CMatrix {
    let n = nodes.len();
    if l < nodes[0] || l > nodes[n - 1] {
        return CMatrix::zeros(dim, dim);
    }
    let hi = nodes.partition_point(|&x| x < l).clamp(1, n - 1);
    let lo = hi - 1;
    let t = (l - nodes[lo]) / (nodes[hi] - nodes[lo]);
    match mode {
        Interpolation::Nearest => {
            if t < 0.5 {
                mats[lo].clone()
            } else {
                mats[hi].clone()
            }
        }
        Interpolation::PiecewiseLinear => mats[lo].scale(1.0 - t) + mats[hi].scale(t),
    }
}

impl SpectralDensity {
    pub(crate) fn from_fn_indexed(
        grid: &FrequencyGrid,
        dim: usize,
        f: impl Fn(usize) -> CMatrix,
    ) -> Result<Self> {
        SpectralDensity::new(dim, (0..grid.len()).map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folded_sum_matches_direct_series() {
        let period = 10.0;
        for &l in &[0.0, 1.3, 4.9, -3.0] {
            let direct: f64 = (-20000..=20000)
                .map(|n| 2.0 / ((l + n as f64 * period).powi(2) + 1.0))
                .sum();
            let folded = folded_lorentzian(l, 2.0, 1.0, period);
            assert!((direct - folded).abs() < 2e-5 * folded, "{direct} vs {folded}");
        }
    }

    #[test]
    fn folded_covariance_is_exact_at_lag_zero() {
        let grid = FrequencyGrid::new(8.0, 401).unwrap();
        let f = DensitySpec::ou(1.0, 1.0).build(&grid, 1, true).unwrap();
        let var = f.integral(&grid)[(0, 0)].re;
        assert!((var - 1.0).abs() < 1e-4, "{var}");
    }

    #[test]
    fn json_round_trip() {
        let spec = DensitySpec::Diag(vec![DensitySpec::ou(1.0, 2.0), DensitySpec::White { level: 0.5 }]);
        let text = serde_json::to_string(&spec).unwrap();
        let back: DensitySpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let zero: DensitySpec = serde_json::from_str(r#"{"kind":"zero"}"#).unwrap();
        assert_eq!(zero, DensitySpec::Zero);
    }

    #[test]
    fn mixed_density_is_hermitian_psd() {
        let grid = FrequencyGrid::new(8.0, 101).unwrap();
        let spec = DensitySpec::Mixed {
            mixing: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
            components: vec![DensitySpec::ou(1.0, 1.0), DensitySpec::ou(0.5, 3.0)],
        };
        let f = spec.build(&grid, 2, true).unwrap();
        assert!(f.validate(&grid).pass);
        let r0 = spec.covariance(0.0, 2).unwrap();
        assert!((r0[(0, 0)].re - 1.125).abs() < 1e-12);
        assert!((r0[(0, 1)].re - 0.5 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn samples_with_lambda_interpolate() {
        let grid = FrequencyGrid::new(2.0, 5).unwrap();
        let spec = DensitySpec::Samples {
            values: vec![vec![vec![[1.0, 0.0]]], vec![vec![[3.0, 0.0]]]],
            lambda: Some(vec![-2.0, 2.0]),
            interpolation: Interpolation::PiecewiseLinear,
        };
        let f = spec.build(&grid, 1, true).unwrap();
        assert!((f.sample(2)[(0, 0)].re - 2.0).abs() < 1e-12);
    }
}
