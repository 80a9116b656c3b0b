use serde::{Deserialize, Serialize};

use crate::density::{inverse_sum, SpectralDensity};
use crate::error::Result;
use crate::grid::FrequencyGrid;
use crate::linalg::{cis, re, CVector};
use crate::missing::MissingSet;
use crate::weight::WeightFunction;
use num_complex::Complex64;

/// A(λ) = Σ_l ∫ a(t) e^{itλ} dt by the node quadrature, one T-vector per grid frequency.
pub fn exponential_transform(a: &WeightFunction, set: &MissingSet, grid: &FrequencyGrid) -> Result<Vec<CVector>> {
    a.check_set(set)?;
    let values: Vec<Complex64> = a.values().iter().map(|&v| re(v)).collect();
    Ok(transform_nodes(&values, a.dim(), set, grid))
}

/// Same transform for complex node values (node-major, `dim` per node).
pub fn transform_nodes(values: &[Complex64], dim: usize, set: &MissingSet, grid: &FrequencyGrid) -> Vec<CVector> {
    let times = set.times();
    let weights = set.weights();
    crate::par::map_indices(grid.len(), |j| {
        let lambda = grid.nodes()[j];
        let mut acc = CVector::zeros(dim);
        for (k, (&t, &w)) in times.iter().zip(weights).enumerate() {
            let e = cis(t * lambda) * w;
            for c in 0..dim {
                acc[c] += values[k * dim + c] * e;
            }
        }
        acc
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    /// ∫ bᵀ(F+G)⁻¹ b̄ dλ over the truncated grid.
    pub value: f64,
    pub divergence_flag: bool,
    /// Mean integrand over |λ| > 0.8Λ.
    pub tail_average: f64,
    pub peak: f64,
}

pub const TAIL_FRACTION: f64 = 0.2;
pub const TAIL_RATIO: f64 = 1e-3;

/// Minimality integral for a probe on S; flags integrands whose tail does not decay.
pub fn minimality_check(
    f_plus_g: &SpectralDensity,
    probe: &WeightFunction,
    set: &MissingSet,
    grid: &FrequencyGrid,
) -> Result<MinimalityReport> {
    let zero = SpectralDensity::zeros(grid, f_plus_g.dim());
    let inv = inverse_sum(f_plus_g, &zero, grid)?;
    let b = exponential_transform(probe, set, grid)?;
    let integrand: Vec<f64> = (0..grid.len())
        .map(|j| (b[j].transpose() * &inv[j] * b[j].conjugate())[(0, 0)].re)
        .collect();
    let value = integrand.iter().zip(grid.weights()).map(|(v, w)| v * w).sum();
    let cut = (1.0 - TAIL_FRACTION) * grid.lambda_max();
    let tail: Vec<f64> = grid
        .nodes()
        .iter()
        .zip(&integrand)
        .filter(|(l, _)| l.abs() > cut)
        .map(|(_, v)| v.abs())
        .collect();
    let tail_average = if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let peak = integrand.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(MinimalityReport {
        value,
        divergence_flag: peak > 0.0 && tail_average > TAIL_RATIO * peak,
        tail_average,
        peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missing::Interval;
    use crate::weight::Expression;
    use std::f64::consts::PI;

    fn setup(lambda_max: f64, n: usize) -> (FrequencyGrid, MissingSet) {
        let g = FrequencyGrid::new(lambda_max, n).unwrap();
        let s = MissingSet::with_step(vec![Interval::new(-1.0, 0.0)], 1.0 / 256.0).unwrap();
        (g, s)
    }

    #[test]
    fn transform_of_constant() {
        let g = FrequencyGrid::new(PI, 3).unwrap();
        let s = MissingSet::with_step(vec![Interval::new(-1.0, 0.0)], 1.0 / 2048.0).unwrap();
        let a = WeightFunction::ones(&s, 1);
        let t = exponential_transform(&a, &s, &g).unwrap();
        assert!((t[1][0] - re(1.0)).norm() < 1e-12);
        let expect = Complex64::new(0.0, -2.0 / PI);
        assert!((t[2][0] - expect).norm() < 1e-6, "{}", t[2][0]);
        let z = exponential_transform(&WeightFunction::zeros(&s, 1), &s, &g).unwrap();
        assert!(z.iter().all(|v| v[0].norm() == 0.0));
    }

    #[test]
    fn smooth_probe_converges_and_constant_probe_diverges() {
        let f = |g: &FrequencyGrid| SpectralDensity::scalar(g, |l| 1.0 / (l * l + 1.0));
        let (g, s) = setup(64.0, 4097);
        let smooth = WeightFunction::from_expression(&s, Expression::Sin2, &[1.0]);
        let r = minimality_check(&f(&g), &smooth, &s, &g).unwrap();
        assert!(!r.divergence_flag);
        let (g2, _) = setup(128.0, 8193);
        let r2 = minimality_check(&f(&g2), &smooth, &s, &g2).unwrap();
        assert!((r.value - r2.value).abs() < 1e-3 * r.value);

        let flat = WeightFunction::ones(&s, 1);
        let r = minimality_check(&f(&g), &flat, &s, &g).unwrap();
        assert!(r.divergence_flag);
        let r2 = minimality_check(&f(&g2), &flat, &s, &g2).unwrap();
        assert!(r2.value > 1.8 * r.value);
    }

    #[test]
    fn identity_gives_parseval_integral() {
        let (g, s) = setup(16.0, 1025);
        let probe = WeightFunction::from_expression(&s, Expression::Sin2, &[1.0]);
        let id = SpectralDensity::identity(&g, 1);
        let r = minimality_check(&id, &probe, &s, &g).unwrap();
        let b = exponential_transform(&probe, &s, &g).unwrap();
        let direct: f64 = (0..g.len()).map(|j| b[j][0].norm_sqr() * g.weights()[j]).sum();
        assert!((r.value - direct).abs() < 1e-12 * direct);
        assert!(!r.divergence_flag);
    }
}
