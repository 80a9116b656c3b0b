//! Conditional-gradient search for the saddle point (F⁰, G⁰, h⁰).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::class::DensityClass;
use super::kkt::{kkt_residuals, KktInput, KktResiduals};
use super::linear::maximize_linear;
use crate::density::SpectralDensity;
use crate::error::{Error, Result};
use crate::estimator::{cross_mse, estimate, EstimateOptions, Problem};
use crate::grid::FrequencyGrid;
use crate::linalg::CVector;
use crate::missing::MissingSet;
use crate::operators::Mode;
use crate::weight::WeightFunction;
use num_complex::Complex64;

/// Relative reduction of the best gap that counts as progress.
const STALL_PROGRESS: f64 = 0.01;
const MIN_STEP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleOptions {
    /// Stop once the duality gap Δ(h; F*, G*) − Δ(h; F, G) is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations without a new best gap before giving up.
    pub stall_window: usize,
    pub n_probes: usize,
    pub n_perturbations: usize,
    pub seed: u64,
    pub estimate: EstimateOptions,
    /// Keep every `trace_every`-th iterate in the returned trace (0 keeps none).
    pub trace_every: usize,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        SaddleOptions {
            tol: 1e-4,
            max_iter: 100_000,
            stall_window: 5000,
            n_probes: 32,
            n_perturbations: 10,
            seed: 0,
            estimate: EstimateOptions::default(),
            trace_every: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta: f64,
    pub gap: f64,
}

/// Sampled saddle inequalities at the returned point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleVerification {
    pub n_members: usize,
    /// max over sampled members of Δ(h⁰; F, G) − Δ⁰; should not exceed the tolerance.
    pub max_member_excess: f64,
    pub n_perturbations: usize,
    /// min over admissibly perturbed characteristics of Δ(h; F⁰, G⁰) − Δ⁰; should not fall below −tolerance.
    pub min_perturbation_excess: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SaddlePoint {
    pub f0: SpectralDensity,
    pub g0: SpectralDensity,
    pub h0: Vec<CVector>,
    pub a_transform: Vec<CVector>,
    pub c_transform: Vec<CVector>,
    /// Node values of c at the saddle point.
    pub c: Vec<Complex64>,
    pub delta0: f64,
    pub mode: Mode,
    pub iterations: usize,
    /// Duality gap at the last iterate.
    pub gap: f64,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    pub verification: SaddleVerification,
    pub kkt: Option<KktResiduals>,
}

impl SaddlePoint {
    pub fn kkt_input<'a>(
        &'a self,
        class_f: &'a DensityClass,
        class_g: &'a DensityClass,
        grid: &'a FrequencyGrid,
    ) -> KktInput<'a> {
        KktInput {
            grid,
            a_transform: &self.a_transform,
            h: &self.h0,
            f0: &self.f0,
            g0: &self.g0,
            class_f,
            class_g,
        }
    }
}

fn require_member(class: &DensityClass, x: &SpectralDensity, grid: &FrequencyGrid, which: &str) -> Result<()> {
    let report = class.membership(x, grid);
    if report.member {
        Ok(())
    } else {
        let first = &report.violations[0];
        Err(Error::NotMember(format!(
            "{which} violates '{}' of class {} (defect {:e})",
            first.constraint,
            class.kind(),
            first.defect
        )))
    }
}

/// Alternates h ← h(F, G) with a step (F, G) ← (F, G) + γ_k((F*, G*) − (F, G)), γ_k = 2/(k + 2),
/// toward the maximizer of the linearized error.
#[allow(clippy::too_many_arguments)]
pub fn saddle_iterate(
    f_init: &SpectralDensity,
    g_init: &SpectralDensity,
    class_f: &DensityClass,
    class_g: &DensityClass,
    a: &WeightFunction,
    set: &MissingSet,
    grid: &FrequencyGrid,
    options: &SaddleOptions,
) -> Result<SaddlePoint> {
    if !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", options.tol)));
    }
    if options.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be positive".into()));
    }
    require_member(class_f, f_init, grid, "F_init")?;
    require_member(class_g, g_init, grid, "G_init")?;
    let mut est_options = options.estimate;
    if est_options.mode.is_none() {
        est_options.mode = Some(if class_g.is_zero() { Mode::Noiseless } else { Mode::Noisy });
    }
    let solve = |f: &SpectralDensity, g: &SpectralDensity, k: usize| {
        let problem = Problem { grid, f, g, set, a };
        estimate(&problem, &est_options).map_err(|e| match e {
            Error::SingularDensity { .. } | Error::IllConditioned { .. } => Error::MinimalityLost {
                iteration: k,
                reason: e.to_string(),
            },
            other => other,
        })
    };
    let mut f = f_init.clone();
    let mut g = g_init.clone();
    let mut sol = solve(&f, &g, 1)?;
    let mut delta = cross_mse(&sol.h, &sol.a_transform, &f, &g, grid)?;
    let mut best_gap = f64::INFINITY;
    let mut last_improvement = 0usize;
    let mut trace = Vec::new();
    let mut k = 1usize;
    loop {
        let (f_star, g_star) = maximize_linear(&sol.h, &sol.a_transform, class_f, class_g, grid)?;
        let gap = (cross_mse(&sol.h, &sol.a_transform, &f_star, &g_star, grid)? - delta).max(0.0);
        if options.trace_every > 0 && (k % options.trace_every == 0 || k == 1) {
            trace.push(IterationRecord {
                iteration: k,
                delta,
                gap,
            });
        }
        if gap < best_gap * (1.0 - STALL_PROGRESS) {
            best_gap = gap;
            last_improvement = k;
        }
        let converged = gap <= options.tol;
        if converged || k >= options.max_iter {
            let mut sp = SaddlePoint {
                f0: f,
                g0: g,
                h0: sol.h,
                a_transform: sol.a_transform,
                c_transform: sol.c_transform,
                c: sol.c.c,
                delta0: delta,
                mode: sol.mode,
                iterations: k,
                gap,
                converged,
                trace,
                verification: SaddleVerification {
                    n_members: 0,
                    max_member_excess: 0.0,
                    n_perturbations: 0,
                    min_perturbation_excess: 0.0,
                    passed: true,
                    skipped: None,
                },
                kkt: None,
            };
            sp.verification = verify_saddle(&sp, class_f, class_g, set, grid, options)?;
            sp.kkt = kkt_residuals(&sp.kkt_input(class_f, class_g, grid)).ok();
            return Ok(sp);
        }
        if k - last_improvement > options.stall_window {
            return Err(Error::Stalled {
                iterations: k,
                best_gap,
            });
        }
        // Halve the step while the minimal error would decrease; Δ is concave along the segment
        // and increasing at its start, so a short enough step always succeeds.
        let mut step = 2.0 / (k as f64 + 2.0);
        k += 1;
        loop {
            let f_next = f.lerp(&f_star, step)?;
            let g_next = g.lerp(&g_star, step)?;
            let sol_next = solve(&f_next, &g_next, k)?;
            let delta_next = cross_mse(&sol_next.h, &sol_next.a_transform, &f_next, &g_next, grid)?;
            if delta_next >= delta - 1e-12 * delta.abs() || step < MIN_STEP {
                f = f_next;
                g = g_next;
                sol = sol_next;
                delta = delta_next;
                break;
            }
            step *= 0.5;
        }
    }
}

/// Samples class members and perturbed characteristics around a computed saddle point.
pub fn verify_saddle(
    sp: &SaddlePoint,
    class_f: &DensityClass,
    class_g: &DensityClass,
    set: &MissingSet,
    grid: &FrequencyGrid,
    options: &SaddleOptions,
) -> Result<SaddleVerification> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut max_member_excess = f64::NEG_INFINITY;
    let mut skipped = None;
    let mut n_members = 0;
    for _ in 0..options.n_probes {
        let pair = class_f
            .random_member(grid, &mut rng)
            .and_then(|f| Ok((f, class_g.random_member(grid, &mut rng)?)));
        match pair {
            Ok((f, g)) => {
                let d = cross_mse(&sp.h0, &sp.a_transform, &f, &g, grid)?;
                max_member_excess = max_member_excess.max(d - sp.delta0);
                n_members += 1;
            }
            Err(Error::UnsupportedClass(why)) => {
                skipped = Some(why);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if n_members == 0 {
        max_member_excess = 0.0;
    }
    let dim = sp.f0.dim();
    let g_used = match sp.mode {
        Mode::Noisy => sp.g0.clone(),
        Mode::Noiseless => SpectralDensity::zeros(grid, dim),
    };
    // Admissible directions: exponentials at observed times just outside the span of S.
    let (lo, hi) = set.span();
    let step = set.time_step();
    let times: Vec<f64> = (1..=3)
        .flat_map(|k| [hi + k as f64 * step, lo - k as f64 * step])
        .filter(|&t| !set.contains(t))
        .collect();
    let mass: f64 = (0..grid.len())
        .map(|j| grid.measure(j) * (sp.f0.trace(j) + g_used.trace(j)))
        .sum();
    let scale = 0.1 * (sp.delta0.max(1e-12) / mass.max(1e-300)).sqrt();
    let mut min_perturbation_excess = f64::INFINITY;
    for _ in 0..options.n_perturbations {
        let coef: Vec<f64> = (0..times.len() * dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let h: Vec<CVector> = (0..grid.len())
            .map(|j| {
                let lambda = grid.nodes()[j];
                let mut v = sp.h0[j].clone();
                for (i, &t) in times.iter().enumerate() {
                    let e = crate::linalg::cis(t * lambda);
                    for comp in 0..dim {
                        v[comp] += e * coef[i * dim + comp];
                    }
                }
                v
            })
            .collect();
        let d = cross_mse(&h, &sp.a_transform, &sp.f0, &g_used, grid)?;
        min_perturbation_excess = min_perturbation_excess.min(d - sp.delta0);
    }
    if options.n_perturbations == 0 {
        min_perturbation_excess = 0.0;
    }
    Ok(SaddleVerification {
        n_members,
        max_member_excess,
        n_perturbations: options.n_perturbations,
        min_perturbation_excess,
        passed: max_member_excess <= options.tol && min_perturbation_excess >= -options.tol,
        skipped,
    })
}
