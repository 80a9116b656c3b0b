//! Finite-dimensional Gaussian conditioning on a fine time lattice.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::SpectralDensity;
use crate::error::{Error, Result};
use crate::family::DensitySpec;
use crate::grid::FrequencyGrid;
use crate::linalg::{cis, CMatrix};
use crate::missing::MissingSet;
use crate::weight::WeightFunction;

/// Where covariances come from.
#[derive(Clone, Copy, Debug)]
pub enum CovarianceSource<'a> {
    /// Closed-form covariance of a built-in family; white parts become σ²/step on the diagonal.
    Analytic { spec: &'a DensitySpec, dim: usize },
    /// Frequency quadrature (1/2π)∫e^{iτλ}F(λ)dλ of a sampled density.
    Sampled {
        density: &'a SpectralDensity,
        grid: &'a FrequencyGrid,
    },
}

impl CovarianceSource<'_> {
    fn dim(&self) -> usize {
        match self {
            CovarianceSource::Analytic { dim, .. } => *dim,
            CovarianceSource::Sampled { density, .. } => density.dim(),
        }
    }

    /// R(k·step), real part, for k = 0..=n.
    fn table(&self, step: f64, n: usize) -> Result<Vec<DMatrix<f64>>> {
        let dim = self.dim();
        match self {
            CovarianceSource::Analytic { spec, dim } => {
                let white = spec
                    .white_part(*dim)
                    .ok_or_else(|| Error::Model("density has no closed-form covariance".into()))?;
                (0..=n)
                    .map(|k| {
                        let mut r = spec
                            .covariance(k as f64 * step, *dim)
                            .ok_or_else(|| Error::Model("density has no closed-form covariance".into()))?;
                        if k == 0 {
                            r += white.scale(1.0 / step);
                        }
                        Ok(r.map(|z| z.re))
                    })
                    .collect()
            }
            CovarianceSource::Sampled { density, grid } => Ok(crate::par::map_indices(n + 1, |k| {
                let tau = k as f64 * step;
                let mut acc = CMatrix::zeros(dim, dim);
                for j in 0..grid.len() {
                    acc += density.sample(j) * (cis(grid.nodes()[j] * tau) * grid.measure(j));
                }
                acc.map(|z| z.re)
            })),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub mse: f64,
    /// Variance of the discretized target.
    pub variance: f64,
    pub n_observations: usize,
    /// Diagonal jitter added when the covariance factorization failed, zero otherwise.
    pub jitter: f64,
}

/// MSE of the best linear predictor of Σ w_s a(t_s)ᵀξ(t_s) over S from ξ + η on the lattice
/// k·fine_step in the window, excluding points interior to S.
pub fn gaussian_oracle(
    signal: CovarianceSource,
    noise: CovarianceSource,
    set: &MissingSet,
    a: &WeightFunction,
    window: (f64, f64),
    fine_step: f64,
) -> Result<OracleResult> {
    let dim = signal.dim();
    if noise.dim() != dim || a.dim() != dim {
        return Err(Error::GridMismatch("oracle inputs differ in dimension".into()));
    }
    if !(fine_step > 0.0) {
        return Err(Error::InvalidArgument("fine_step must be positive".into()));
    }
    let idx = |t: f64| (t / fine_step).round() as i64;
    let k0 = (window.0 / fine_step - 1e-9).ceil() as i64;
    let k1 = (window.1 / fine_step + 1e-9).floor() as i64;
    let obs: Vec<i64> = (k0..=k1)
        .filter(|&k| !set.contains_interior(k as f64 * fine_step))
        .collect();

    let mut targets: Vec<(i64, f64, Vec<f64>)> = Vec::new();
    for iv in set.intervals() {
        let panels = (iv.length() / fine_step).round().max(1.0) as usize;
        let h = iv.length() / panels as f64;
        for i in 0..=panels {
            let t = iv.left + i as f64 * h;
            let w = if i == 0 || i == panels { 0.5 * h } else { h };
            let k = idx(t);
            if ((k as f64 * fine_step) - t).abs() > 1e-6 * fine_step.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "missing-set node {t} is not on the oracle lattice of step {fine_step}"
                )));
            }
            targets.push((k, w, a.eval_at(set, t)));
        }
    }
    if a.is_zero() {
        return Ok(OracleResult {
            mse: 0.0,
            variance: 0.0,
            n_observations: obs.len() * dim,
            jitter: 0.0,
        });
    }

    let kmin = obs.iter().chain(targets.iter().map(|t| &t.0)).min().copied().unwrap_or(0);
    let kmax = obs.iter().chain(targets.iter().map(|t| &t.0)).max().copied().unwrap_or(0);
    let span = (kmax - kmin) as usize;
    let rx = signal.table(fine_step, span)?;
    let re_ = noise.table(fine_step, span)?;
    // R(τ) for τ = d·step; R(−τ) = R(τ)ᵀ.
    let lag = |table: &Vec<DMatrix<f64>>, d: i64| -> DMatrix<f64> {
        if d >= 0 {
            table[d as usize].clone()
        } else {
            table[(-d) as usize].transpose()
        }
    };

    let n = obs.len() * dim;
    let mut sigma = DMatrix::<f64>::zeros(n, n);
    for (i, &ki) in obs.iter().enumerate() {
        for (k, &kk) in obs.iter().enumerate().skip(i) {
            let block = lag(&rx, ki - kk) + lag(&re_, ki - kk);
            for p in 0..dim {
                for q in 0..dim {
                    sigma[(i * dim + p, k * dim + q)] = block[(p, q)];
                    sigma[(k * dim + q, i * dim + p)] = block[(p, q)];
                }
            }
        }
    }
    let mut b = DVector::<f64>::zeros(n);
    for (i, &ki) in obs.iter().enumerate() {
        for (ks, w, av) in &targets {
            let r = lag(&rx, ki - ks);
            let v = r * DVector::from_column_slice(av);
            for p in 0..dim {
                b[i * dim + p] += w * v[p];
            }
        }
    }
    let mut variance = 0.0;
    for (ks, ws, avs) in &targets {
        let avs = DVector::from_column_slice(avs);
        for (kt, wt, avt) in &targets {
            let r = lag(&rx, ks - kt);
            variance += ws * wt * (avs.transpose() * r * DVector::from_column_slice(avt))[(0, 0)];
        }
    }

    let trace: f64 = sigma.diagonal().sum();
    let mut jitter = 0.0;
    let mut attempt = sigma.clone();
    let chol = loop {
        if let Some(c) = Cholesky::new(attempt.clone()) {
            break c;
        }
        jitter = if jitter == 0.0 { 1e-10 * trace } else { jitter * 10.0 };
        if jitter > 1e-4 * trace {
            return Err(Error::IllConditioned {
                condition_number: f64::INFINITY,
            });
        }
        attempt = sigma.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
    };
    let x = chol.solve(&b);
    let explained = b.dot(&x);
    Ok(OracleResult {
        mse: (variance - explained).max(0.0),
        variance,
        n_observations: n,
        jitter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missing::Interval;

    fn set() -> MissingSet {
        MissingSet::with_step(vec![Interval::new(-1.0, 0.0)], 0.05).unwrap()
    }

    #[test]
    fn markov_signal_matches_closed_form() {
        let s = set();
        let spec = DensitySpec::ou(1.0, 1.0);
        let zero = DensitySpec::Zero;
        let a = WeightFunction::ones(&s, 1);
        let r = gaussian_oracle(
            CovarianceSource::Analytic { spec: &spec, dim: 1 },
            CovarianceSource::Analytic { spec: &zero, dim: 1 },
            &s,
            &a,
            (-3.0, 2.0),
            0.05,
        )
        .unwrap();
        let exact = 2.0 - 4.0 * 0.5f64.tanh();
        assert!((r.mse - exact).abs() < 5e-3 * exact, "{}", r.mse);
    }

    #[test]
    fn zero_weight_and_huge_noise() {
        let s = set();
        let spec = DensitySpec::ou(1.0, 1.0);
        let loud = DensitySpec::ou(1.0, 1.0).scaled(1e6);
        let z = WeightFunction::zeros(&s, 1);
        let src = CovarianceSource::Analytic { spec: &spec, dim: 1 };
        let noise = CovarianceSource::Analytic { spec: &loud, dim: 1 };
        assert_eq!(gaussian_oracle(src, noise, &s, &z, (-3.0, 2.0), 0.05).unwrap().mse, 0.0);
        let a = WeightFunction::ones(&s, 1);
        let r = gaussian_oracle(src, noise, &s, &a, (-3.0, 2.0), 0.05).unwrap();
        assert!((r.mse - r.variance).abs() < 0.01 * r.variance);
    }
}
