use serde::{Deserialize, Serialize};

use crate::density::{invert_checked, SpectralDensity};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{cis, CVector};
use crate::missing::MissingSet;
use crate::operators::{assemble_system, solve_c, Mode, OperatorSystem, Regularization, SolutionC};
use crate::transform::{exponential_transform, transform_nodes};
use crate::weight::WeightFunction;

/// Borrowed inputs of one interpolation problem.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub grid: &'a FrequencyGrid,
    pub f: &'a SpectralDensity,
    pub g: &'a SpectralDensity,
    pub set: &'a MissingSet,
    pub a: &'a WeightFunction,
}

impl Problem<'_> {
    pub fn check(&self) -> Result<()> {
        self.f.check_grid(self.grid)?;
        self.f.check_compatible(self.g)?;
        self.a.check_set(self.set)?;
        if self.a.dim() != self.f.dim() {
            return Err(Error::GridMismatch(format!(
                "weight dimension {} differs from density dimension {}",
                self.a.dim(),
                self.f.dim()
            )));
        }
        Ok(())
    }

    /// Noise-free observations are assumed when G vanishes identically.
    pub fn default_mode(&self) -> Mode {
        if self.g.is_zero() {
            Mode::Noiseless
        } else {
            Mode::Noisy
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// `None` picks noiseless mode exactly when G ≡ 0.
    pub mode: Option<Mode>,
    pub regularization: Regularization,
    /// Relative tolerance for the agreement of the two error forms.
    pub dual_tolerance: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            mode: None,
            regularization: Regularization::Auto,
            dual_tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimateSolution {
    pub mode: Mode,
    /// Spectral characteristic h(λ) per grid frequency.
    pub h: Vec<CVector>,
    /// C(λ), the exponential transform of c.
    pub c_transform: Vec<CVector>,
    pub a_transform: Vec<CVector>,
    pub c: SolutionC,
    /// Δ(h; F, G) of the returned characteristic (the spectral form).
    pub delta: f64,
    pub delta_operator_form: f64,
    pub delta_spectral_form: f64,
    pub condition_number: f64,
    /// Var(A_s ξ), the error of the zero estimate.
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseForms {
    pub operator_form: f64,
    pub spectral_form: f64,
}

/// h = conj((F+G)⁻¹)(conj(F)A − C), or A − conj(F⁻¹)C without noise.
pub fn spectral_characteristic(
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
    a_transform: &[CVector],
    c_transform: &[CVector],
    mode: Mode,
) -> Result<Vec<CVector>> {
    f.check_grid(grid)?;
    f.check_compatible(g)?;
    if a_transform.len() != grid.len() || c_transform.len() != grid.len() {
        return Err(Error::GridMismatch("transforms do not match the grid".into()));
    }
    let out: Vec<Result<CVector>> = crate::par::map_indices(grid.len(), |j| {
        let fj = f.sample(j);
        let lambda = grid.nodes()[j];
        match mode {
            Mode::Noisy => {
                let p = invert_checked(&(fj + g.sample(j)), j, lambda)?;
                Ok(p.conjugate() * (fj.conjugate() * &a_transform[j] - &c_transform[j]))
            }
            Mode::Noiseless => {
                let p = invert_checked(fj, j, lambda)?;
                Ok(&a_transform[j] - p.conjugate() * &c_transform[j])
            }
        }
    });
    out.into_iter().collect()
}

/// Δ(h; F, G) = (1/2π)∫(A−h)ᵀF conj(A−h) + hᵀG conj(h) dλ.
pub fn cross_mse(
    h: &[CVector],
    a_transform: &[CVector],
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
) -> Result<f64> {
    f.check_grid(grid)?;
    f.check_compatible(g)?;
    if h.len() != grid.len() || a_transform.len() != grid.len() {
        return Err(Error::GridMismatch("characteristic does not match the grid".into()));
    }
    let terms: Vec<f64> = (0..grid.len())
        .map(|j| grid.measure(j) * cross_mse_term(&h[j], &a_transform[j], f.sample(j), g.sample(j)))
        .collect();
    Ok(crate::linalg::pairwise_sum(&terms))
}

pub(crate) fn cross_mse_term(
    h: &CVector,
    a: &CVector,
    f: &crate::linalg::CMatrix,
    g: &crate::linalg::CMatrix,
) -> f64 {
    let e = a - h;
    let fe = (e.transpose() * f * e.conjugate())[(0, 0)].re;
    let gh = (h.transpose() * g * h.conjugate())[(0, 0)].re;
    fe + gh
}

/// Both evaluations of the error for a solved system.
pub fn mse(
    sys: &OperatorSystem,
    sol: &SolutionC,
    a: &WeightFunction,
    h: &[CVector],
    a_transform: &[CVector],
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
) -> Result<MseForms> {
    let av = CVector::from_iterator(a.values().len(), a.values().iter().map(|&v| crate::linalg::re(v)));
    let solved = sol.rhs.dotc(&sol.dual).re;
    let operator_form = match sys.mode() {
        Mode::Noisy => (av.transpose() * sys.q() * &av)[(0, 0)].re + solved,
        Mode::Noiseless => solved,
    };
    let spectral_form = cross_mse(h, a_transform, f, g, grid)?;
    Ok(MseForms {
        operator_form,
        spectral_form,
    })
}

/// Runs assembly, solve, characteristic and both error forms.
pub fn estimate(problem: &Problem, options: &EstimateOptions) -> Result<EstimateSolution> {
    problem.check()?;
    let mode = options.mode.unwrap_or_else(|| problem.default_mode());
    let sys = assemble_system(problem.f, problem.g, problem.set, problem.grid, mode)?;
    estimate_with_system(problem, &sys, options)
}

pub fn estimate_with_system(
    problem: &Problem,
    sys: &OperatorSystem,
    options: &EstimateOptions,
) -> Result<EstimateSolution> {
    problem.check()?;
    let mode = sys.mode();
    let sol = solve_c(sys, problem.a, options.regularization)?;
    let a_transform = exponential_transform(problem.a, problem.set, problem.grid)?;
    let c_transform = transform_nodes(&sol.c, problem.a.dim(), problem.set, problem.grid);
    let g_used = match mode {
        Mode::Noisy => problem.g.clone(),
        Mode::Noiseless => SpectralDensity::zeros(problem.grid, problem.f.dim()),
    };
    let h = spectral_characteristic(problem.f, &g_used, problem.grid, &a_transform, &c_transform, mode)?;
    let forms = mse(sys, &sol, problem.a, &h, &a_transform, problem.f, &g_used, problem.grid)?;
    let scale = forms.operator_form.abs().max(forms.spectral_form.abs());
    if (forms.operator_form - forms.spectral_form).abs() > options.dual_tolerance * scale {
        return Err(Error::DualFormMismatch {
            operator_form: forms.operator_form,
            spectral_form: forms.spectral_form,
        });
    }
    let zero: Vec<CVector> = vec![CVector::zeros(problem.a.dim()); problem.grid.len()];
    let variance = cross_mse(&zero, &a_transform, problem.f, &g_used, problem.grid)?;
    Ok(EstimateSolution {
        mode,
        h,
        c_transform,
        a_transform,
        delta: forms.spectral_form.max(0.0),
        delta_operator_form: forms.operator_form,
        delta_spectral_form: forms.spectral_form,
        condition_number: sys.condition_number_b(),
        c: sol,
        variance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Norm of (1/2π)∫[AᵀF − hᵀ(F+G)]e^{−itλ}dλ at each sample time outside S.
pub fn verify_orthogonality(
    h: &[CVector],
    a_transform: &[CVector],
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
    set: &MissingSet,
    times: &[f64],
) -> Result<OrthogonalityReport> {
    f.check_grid(grid)?;
    f.check_compatible(g)?;
    if h.len() != grid.len() || a_transform.len() != grid.len() {
        return Err(Error::GridMismatch("characteristic does not match the grid".into()));
    }
    if let Some(&t) = times.iter().find(|&&t| set.contains_interior(t)) {
        return Err(Error::SampleInsideMissingSet(t));
    }
    let dim = f.dim();
    let rows: Vec<CVector> = (0..grid.len())
        .map(|j| {
            let s = f.sample(j) + g.sample(j);
            (a_transform[j].transpose() * f.sample(j) - h[j].transpose() * s).transpose()
        })
        .collect();
    let residuals: Vec<f64> = times
        .iter()
        .map(|&t| {
            let mut acc = CVector::zeros(dim);
            for (j, row) in rows.iter().enumerate() {
                acc += row * (cis(-t * grid.nodes()[j]) * grid.measure(j));
            }
            acc.norm()
        })
        .collect();
    Ok(OrthogonalityReport {
        times: times.to_vec(),
        max_residual: residuals.iter().fold(0.0, |m: f64, &r| m.max(r)),
        residuals,
    })
}

/// Evaluates a per-frequency characteristic h at time t: (1/2π)∫h(λ)e^{−itλ}dλ.
pub fn time_weights(h: &[CVector], grid: &FrequencyGrid, t: f64) -> CVector {
    let dim = h.first().map_or(0, |v| v.len());
    let mut acc = CVector::zeros(dim);
    for (j, hj) in h.iter().enumerate() {
        acc += hj * (cis(-t * grid.nodes()[j]) * grid.measure(j));
    }
    acc
}

#[cfg(test)]
fn zero_characteristic(grid: &FrequencyGrid, dim: usize) -> Vec<CVector> {
    vec![CVector::zeros(dim); grid.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::DensitySpec;
    use crate::missing::{Interval, TimeStep};

    struct Setup {
        grid: FrequencyGrid,
        set: MissingSet,
        f: SpectralDensity,
        a: WeightFunction,
    }

    fn ou() -> Setup {
        let grid = FrequencyGrid::default();
        let set = MissingSet::new(vec![Interval::new(-1.0, 0.0)], &grid, TimeStep::Matched).unwrap();
        let f = DensitySpec::ou(1.0, 1.0).build(&grid, 1, true).unwrap();
        let a = WeightFunction::ones(&set, 1);
        Setup { grid, set, f, a }
    }

    #[test]
    fn noiseless_ou_matches_closed_form() {
        let s = ou();
        let g = SpectralDensity::zeros(&s.grid, 1);
        let p = Problem { grid: &s.grid, f: &s.f, g: &g, set: &s.set, a: &s.a };
        let sol = estimate(&p, &EstimateOptions::default()).unwrap();
        let exact = 2.0 - 4.0 * 0.5f64.tanh();
        assert_eq!(sol.mode, Mode::Noiseless);
        assert!((sol.delta - exact).abs() < 5e-3 * exact, "{}", sol.delta);
        assert!((sol.variance - 2.0 * (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn zero_functional_gives_zero() {
        let s = ou();
        let g = s.f.scaled(0.5);
        let a = WeightFunction::zeros(&s.set, 1);
        let p = Problem { grid: &s.grid, f: &s.f, g: &g, set: &s.set, a: &a };
        let sol = estimate(&p, &EstimateOptions::default()).unwrap();
        assert_eq!(sol.delta_operator_form, 0.0);
        assert_eq!(sol.delta_spectral_form, 0.0);
        assert!(sol.h.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn self_consistent_cross_mse() {
        let s = ou();
        let g = s.f.scaled(0.5);
        let p = Problem { grid: &s.grid, f: &s.f, g: &g, set: &s.set, a: &s.a };
        let sol = estimate(&p, &EstimateOptions::default()).unwrap();
        let x = cross_mse(&sol.h, &sol.a_transform, &s.f, &g, &s.grid).unwrap();
        assert!((x - sol.delta).abs() < 1e-8 * sol.delta);
        assert!(sol.delta <= sol.variance);
    }

    #[test]
    fn zero_estimate_is_not_orthogonal() {
        let s = ou();
        let g = SpectralDensity::zeros(&s.grid, 1);
        let at = exponential_transform(&s.a, &s.set, &s.grid).unwrap();
        let zero = zero_characteristic(&s.grid, 1);
        let r = verify_orthogonality(&zero, &at, &s.f, &g, &s.grid, &s.set, &[0.5, 1.0]).unwrap();
        assert!(r.max_residual > 0.1);
        let za = zero_characteristic(&s.grid, 1);
        let r0 = verify_orthogonality(&zero, &za, &s.f, &g, &s.grid, &s.set, &[0.5]).unwrap();
        assert_eq!(r0.max_residual, 0.0);
        assert!(verify_orthogonality(&zero, &at, &s.f, &g, &s.grid, &s.set, &[-0.5]).is_err());
    }
}
