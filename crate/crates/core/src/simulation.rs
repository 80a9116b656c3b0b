//! Gaussian path synthesis from spectral densities and Monte Carlo checks of the error.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::SpectralDensity;
use crate::error::{Error, Result};
use crate::estimator::time_weights;
use crate::grid::FrequencyGrid;
use crate::linalg::{cis, pairwise_sum, psd_factor, CMatrix, CVector};
use crate::missing::MissingSet;

pub mod oracle;

pub use oracle::{gaussian_oracle, CovarianceSource, OracleResult};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub window: (f64, f64),
    pub time_step: f64,
    pub n_replications: usize,
    pub seed: u64,
}

pub const DEFAULT_MARGIN: f64 = 5.0;
pub const MARGIN_FACTOR: f64 = 4.0;

impl SimulationConfig {
    /// Window extending `DEFAULT_MARGIN` beyond S on both sides.
    pub fn around(set: &MissingSet, time_step: f64, n_replications: usize, seed: u64) -> Self {
        let (lo, hi) = set.span();
        SimulationConfig {
            window: (lo - DEFAULT_MARGIN, hi + DEFAULT_MARGIN),
            time_step,
            n_replications,
            seed,
        }
    }

    pub fn check(&self, set: &MissingSet) -> Result<()> {
        let (lo, hi) = set.span();
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(Error::InvalidArgument("time_step must be positive".into()));
        }
        if self.n_replications == 0 {
            return Err(Error::InvalidArgument("n_replications must be positive".into()));
        }
        if !(self.window.0 < lo && self.window.1 > hi) {
            return Err(Error::InvalidArgument(format!(
                "window [{}, {}] must strictly contain the missing set [{lo}, {hi}]",
                self.window.0, self.window.1
            )));
        }
        Ok(())
    }

    /// Smallest distance from S to an end of the window.
    pub fn margin(&self, set: &MissingSet) -> f64 {
        let (lo, hi) = set.span();
        (lo - self.window.0).min(self.window.1 - hi)
    }

    /// Lattice points k·time_step inside the window.
    pub fn times(&self) -> Vec<f64> {
        let k0 = (self.window.0 / self.time_step - 1e-9).ceil() as i64;
        let k1 = (self.window.1 / self.time_step + 1e-9).floor() as i64;
        (k0..=k1).map(|k| k as f64 * self.time_step).collect()
    }
}

/// Correlation scales of a density, read off its sampled covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDecay {
    /// First lag where ‖R(τ)‖ falls below ‖R(0)‖/e.
    pub efold_scale: f64,
    /// First lag after which ‖R(τ)‖ stays below 1e−3·‖R(0)‖.
    pub decay_length: f64,
}

pub fn covariance_decay(f: &SpectralDensity, grid: &FrequencyGrid) -> CovarianceDecay {
    let step = 0.01;
    let limit = (0.5 * grid.time_period()).min(100.0);
    let n = (limit / step) as usize;
    let norms: Vec<f64> = crate::par::map_indices(n + 1, |k| {
        let tau = k as f64 * step;
        let mut acc = CMatrix::zeros(f.dim(), f.dim());
        for j in 0..grid.len() {
            acc += f.sample(j) * (cis(grid.nodes()[j] * tau) * grid.measure(j));
        }
        acc.norm()
    });
    let r0 = norms[0];
    if r0 == 0.0 {
        return CovarianceDecay {
            efold_scale: 0.0,
            decay_length: 0.0,
        };
    }
    let efold = norms
        .iter()
        .position(|&v| v < r0 / std::f64::consts::E)
        .map_or(limit, |k| k as f64 * step);
    let last_big = norms.iter().rposition(|&v| v >= 1e-3 * r0).unwrap_or(0);
    CovarianceDecay {
        efold_scale: efold,
        decay_length: ((last_big + 1) as f64 * step).min(limit),
    }
}

/// Independent spectral increments Z(dλ) of one path, one T-vector per grid frequency.
pub type Increments = Vec<CVector>;

/// Square-root factors of μ_j F_j used by the synthesis.
pub struct SpectralFactors {
    factors: Vec<CMatrix>,
    zero: DMatrix<f64>,
    zero_index: usize,
    dim: usize,
}

impl SpectralFactors {
    pub fn new(f: &SpectralDensity, grid: &FrequencyGrid) -> Result<Self> {
        f.check_grid(grid)?;
        let z = grid.zero_index();
        let factors = crate::par::map_indices(grid.len(), |j| {
            if j > z {
                psd_factor(&f.sample(j).scale(grid.measure(j)))
            } else {
                CMatrix::zeros(0, 0)
            }
        });
        let f0 = f.sample(z).map(|c| c.re).scale(grid.measure(z));
        let f0 = (&f0 + f0.transpose()).scale(0.5);
        let eig = SymmetricEigen::new(f0);
        let mut zero = eig.eigenvectors.clone();
        for (k, v) in eig.eigenvalues.iter().enumerate() {
            let s = v.max(0.0).sqrt();
            zero.column_mut(k).scale_mut(s);
        }
        Ok(SpectralFactors {
            factors,
            zero,
            zero_index: z,
            dim: f.dim(),
        })
    }

    /// Circular Gaussian increments with E[Z Zᴴ] = μF, Z(−λ) = conj Z(λ), real at λ = 0.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Increments {
        let n = self.factors.len();
        let t = self.dim;
        let mut out = vec![CVector::zeros(t); n];
        let u = CVector::from_fn(t, |_, _| {
            let x: f64 = rng.sample(StandardNormal);
            Complex64::new(x, 0.0)
        });
        let z0 = self.zero.map(|v| Complex64::new(v, 0.0)) * u;
        out[self.zero_index] = z0;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for j in self.zero_index + 1..n {
            let v = CVector::from_fn(t, |_, _| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                Complex64::new(a * s, b * s)
            });
            let z = &self.factors[j] * v;
            out[n - 1 - j] = z.conjugate();
            out[j] = z;
        }
        out
    }
}

fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Real path t ↦ Σ_j e^{iλ_j t} Z_j at the given times, one T-vector per time.
pub fn path_values(z: &Increments, grid: &FrequencyGrid, times: &[f64]) -> Vec<Vec<f64>> {
    let dim = z.first().map_or(0, |v| v.len());
    times
        .iter()
        .map(|&t| {
            let mut acc = vec![0.0; dim];
            for (j, zj) in z.iter().enumerate() {
                let e = cis(grid.nodes()[j] * t);
                for c in 0..dim {
                    acc[c] += (zj[c] * e).re;
                }
            }
            acc
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPaths {
    pub times: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

/// One replication of the signal and noise paths on the window lattice.
pub fn simulate_pair(
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
    cfg: &SimulationConfig,
    replication: u64,
) -> Result<(SimulatedPaths, Increments, Increments)> {
    f.check_compatible(g)?;
    let (zx, ze) = draw_pair(&SpectralFactors::new(f, grid)?, &SpectralFactors::new(g, grid)?, cfg.seed, replication);
    let times = cfg.times();
    Ok((
        SimulatedPaths {
            xi: path_values(&zx, grid, &times),
            eta: path_values(&ze, grid, &times),
            times,
        },
        zx,
        ze,
    ))
}

fn draw_pair(fx: &SpectralFactors, fe: &SpectralFactors, seed: u64, replication: u64) -> (Increments, Increments) {
    let mut rng = replication_rng(seed, replication);
    let zx = fx.draw(&mut rng);
    let ze = fe.draw(&mut rng);
    (zx, ze)
}

/// Input of the linear estimate.
pub enum EstimateInput<'a> {
    /// Spectral increments of signal and noise.
    Spectral { xi: &'a [CVector], eta: &'a [CVector] },
    /// Observed values ξ + η on a uniform lattice; lattice points inside S are ignored.
    Time {
        times: &'a [f64],
        step: f64,
        observed: &'a [Vec<f64>],
        set: &'a MissingSet,
    },
}

/// Â = ∫hᵀ(Z_ξ + Z_η)(dλ), or its time-domain form Σ_t step·v(t)ᵀ(ξ+η)(t) with v the inverse transform of h.
pub fn apply_estimate(h: &[CVector], grid: &FrequencyGrid, input: &EstimateInput) -> Result<f64> {
    if h.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "characteristic has {} frequencies, grid has {}",
            h.len(),
            grid.len()
        )));
    }
    match input {
        EstimateInput::Spectral { xi, eta } => {
            if xi.len() != h.len() || eta.len() != h.len() {
                return Err(Error::GridMismatch("increments do not match the characteristic".into()));
            }
            let terms: Vec<f64> = (0..h.len())
                .map(|j| (h[j].transpose() * (&xi[j] + &eta[j]))[(0, 0)].re)
                .collect();
            Ok(pairwise_sum(&terms))
        }
        EstimateInput::Time {
            times,
            step,
            observed,
            set,
        } => {
            if times.len() != observed.len() {
                return Err(Error::GridMismatch("times and observations differ in length".into()));
            }
            let weights = time_domain_weights(h, grid, times, set);
            let terms: Vec<f64> = weights
                .iter()
                .zip(observed.iter())
                .map(|(w, x)| match w {
                    Some(v) => step * v.iter().zip(x).map(|(a, b)| a.re * b).sum::<f64>(),
                    None => 0.0,
                })
                .collect();
            Ok(pairwise_sum(&terms))
        }
    }
}

/// Inverse transform of h at each observed time; `None` inside S.
pub fn time_domain_weights(h: &[CVector], grid: &FrequencyGrid, times: &[f64], set: &MissingSet) -> Vec<Option<CVector>> {
    crate::par::map_indices(times.len(), |i| {
        let t = times[i];
        if set.contains_interior(t) {
            None
        } else {
            Some(time_weights(h, grid, t))
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub empirical_mse: f64,
    pub std_error: f64,
    pub theoretical_delta: f64,
    pub z_score: f64,
    pub n_replications: usize,
}

/// Mean of |A_sξ − Â|² over seeded replications in spectral mode; A_sξ = Σ_j A(λ_j)ᵀZ_ξ(λ_j),
/// which equals the node quadrature of aᵀξ over S applied to the synthesized path.
pub fn empirical_mse(
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
    h: &[CVector],
    a_transform: &[CVector],
    theoretical_delta: f64,
    cfg: &SimulationConfig,
) -> Result<EnsembleResult> {
    if cfg.n_replications == 0 {
        return Err(Error::InvalidArgument("n_replications must be positive".into()));
    }
    if a_transform.len() != grid.len() {
        return Err(Error::GridMismatch("transform does not match the grid".into()));
    }
    let fx = SpectralFactors::new(f, grid)?;
    let fe = SpectralFactors::new(g, grid)?;
    let errors: Vec<Result<f64>> = crate::par::map_indices(cfg.n_replications, |r| {
        let (zx, ze) = draw_pair(&fx, &fe, cfg.seed, r as u64);
        let target = pairwise_sum(
            &(0..grid.len())
                .map(|j| (a_transform[j].transpose() * &zx[j])[(0, 0)].re)
                .collect::<Vec<_>>(),
        );
        let est = apply_estimate(h, grid, &EstimateInput::Spectral { xi: &zx, eta: &ze })?;
        Ok((target - est).powi(2))
    });
    let sq: Vec<f64> = errors.into_iter().collect::<Result<_>>()?;
    Ok(summarize(&sq, theoretical_delta))
}

pub fn summarize(squared_errors: &[f64], theoretical_delta: f64) -> EnsembleResult {
    let n = squared_errors.len();
    let mean = pairwise_sum(squared_errors) / n as f64;
    let var = if n > 1 {
        pairwise_sum(&squared_errors.iter().map(|e| (e - mean).powi(2)).collect::<Vec<_>>()) / (n - 1) as f64
    } else {
        0.0
    };
    let std_error = (var / n as f64).sqrt();
    EnsembleResult {
        empirical_mse: mean,
        std_error,
        theoretical_delta,
        z_score: if std_error > 0.0 {
            (mean - theoretical_delta) / std_error
        } else {
            f64::NAN
        },
        n_replications: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::DensitySpec;
    use crate::linalg::re;

    #[test]
    fn same_seed_same_paths() {
        let grid = FrequencyGrid::new(16.0, 513).unwrap();
        let f = DensitySpec::ou(1.0, 1.0).build(&grid, 1, true).unwrap();
        let g = f.scaled(0.5);
        let set = MissingSet::with_step(vec![crate::missing::Interval::new(-1.0, 0.0)], 0.1).unwrap();
        let cfg = SimulationConfig::around(&set, 0.1, 1, 7);
        let (a, _, _) = simulate_pair(&f, &g, &grid, &cfg, 0).unwrap();
        let (b, _, _) = simulate_pair(&f, &g, &grid, &cfg, 0).unwrap();
        assert_eq!(a, b);
        let (c, _, _) = simulate_pair(&f, &g, &grid, &cfg, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_characteristic_gives_zero_estimate() {
        let grid = FrequencyGrid::new(8.0, 65).unwrap();
        let h = vec![CVector::zeros(1); grid.len()];
        let z = vec![CVector::from_element(1, re(1.0)); grid.len()];
        let v = apply_estimate(&h, &grid, &EstimateInput::Spectral { xi: &z, eta: &z }).unwrap();
        assert_eq!(v, 0.0);
        let short = vec![CVector::zeros(1); 3];
        assert!(matches!(
            apply_estimate(&short, &grid, &EstimateInput::Spectral { xi: &z, eta: &z }),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn ou_decay_scales() {
        let grid = FrequencyGrid::default();
        let f = DensitySpec::ou(1.0, 1.0).build(&grid, 1, true).unwrap();
        let d = covariance_decay(&f, &grid);
        assert!((d.efold_scale - 1.0).abs() < 0.02, "{d:?}");
        assert!((d.decay_length - 1000f64.ln()).abs() < 0.05, "{d:?}");
    }
}
