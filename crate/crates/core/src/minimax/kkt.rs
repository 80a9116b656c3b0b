//! Optimality relations of least favorable densities, evaluated as fitted residuals.
//!
//! For each side the relation reads S·W·S = S·M(θ, γ)·S with S = F⁰ + G⁰, W the error weight of
//! that side (conj(A − h)(A − h)ᵀ for F, conj(h)hᵀ for G) and M the multiplier structure of the
//! class. Global multipliers θ are fitted by weighted least squares on the frequencies where no
//! pointwise multiplier is free; pointwise multipliers are then fitted per frequency, projected
//! onto their sign cone, and whatever remains is the residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::class::{Constraint, DensityClass, Family, Shape};
use super::linear::error_weights;
use crate::density::SpectralDensity;
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{frobenius_inner, hermitian_eigen, hermitian_inverse, hermitian_part, re, CMatrix, CVector};
use num_complex::Complex64;

/// A frequency is active when the density there carries at least this fraction of the maximum.
pub const ACTIVE_FRACTION: f64 = 0.05;

pub struct KktInput<'a> {
    pub grid: &'a FrequencyGrid,
    pub a_transform: &'a [CVector],
    pub h: &'a [CVector],
    pub f0: &'a SpectralDensity,
    pub g0: &'a SpectralDensity,
    pub class_f: &'a DensityClass,
    pub class_g: &'a DensityClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResidual {
    pub lambda: f64,
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlacknessDefect {
    pub multiplier: String,
    /// Which frequencies were allowed a nonzero multiplier.
    pub variant: String,
    /// Frequencies where the multiplier was free.
    pub n_free: usize,
    /// Largest wrong-signed part, relative to the multiplier scale.
    pub sign_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideResidual {
    pub class: String,
    pub side: String,
    pub max_relative: f64,
    pub rms_relative: f64,
    pub n_evaluated: usize,
    pub multipliers: BTreeMap<String, Vec<f64>>,
    pub slackness: Vec<SlacknessDefect>,
    /// |(1/2π)∫|·|² − δ|/δ per radius, for L₂-ball classes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball_equality_defect: Option<Vec<f64>>,
    pub per_frequency: Vec<FrequencyResidual>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_side: Option<SideResidual>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_side: Option<SideResidual>,
    /// The same relations with alternative slackness sets.
    pub variants: Vec<SideResidual>,
    pub max_relative: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Sign {
    NonPositive,
    NonNegative,
    Free,
}

/// A pointwise multiplier: scalar times a basis matrix, or a full Hermitian matrix.
struct Local {
    name: String,
    sign: Sign,
    /// Basis per bin; `None` where the multiplier must vanish.
    basis: Vec<Option<CMatrix>>,
    /// Full Hermitian multiplier instead of a scalar one.
    matrix: bool,
}

struct Structure {
    global_names: Vec<String>,
    /// global[i][b]: basis matrix of global multiplier i at bin b.
    global: Vec<Vec<CMatrix>>,
    /// Fit a Hermitian matrix and keep its rank-one PSD part (vector multipliers αα*).
    rank_one: bool,
    locals: Vec<Local>,
    active: Vec<bool>,
    ball_defect: Option<Vec<f64>>,
}

fn unit(t: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(t, t);
    m[(k, k)] = re(1.0);
    m
}

fn hermitian_basis(t: usize) -> (Vec<CMatrix>, Vec<String>) {
    let mut out = Vec::new();
    let mut names = Vec::new();
    for i in 0..t {
        out.push(unit(t, i));
        names.push(format!("m{i}{i}"));
        for k in i + 1..t {
            let mut s = CMatrix::zeros(t, t);
            s[(i, k)] = re(1.0);
            s[(k, i)] = re(1.0);
            out.push(s);
            names.push(format!("re_m{i}{k}"));
            let mut a = CMatrix::zeros(t, t);
            a[(i, k)] = Complex64::new(0.0, 1.0);
            a[(k, i)] = Complex64::new(0.0, -1.0);
            out.push(a);
            names.push(format!("im_m{i}{k}"));
        }
    }
    (out, names)
}

/// Quantities compared against bounds: one per channel of the family.
fn channel_values(class: &DensityClass, x: &CMatrix) -> Vec<f64> {
    class.components(x)
}

fn structure(
    class: &DensityClass,
    x: &SpectralDensity,
    bins: &[usize],
    literal: Option<&SpectralDensity>,
    grid: &FrequencyGrid,
) -> Option<Structure> {
    let t = class.dim();
    let nb = bins.len();
    let family = class.kind().family();
    let traces: Vec<f64> = bins.iter().map(|&j| crate::linalg::real_trace(x.sample(j))).collect();
    let tmax = traces.iter().fold(0.0f64, |m, &v| m.max(v));
    let mass_active: Vec<bool> = traces.iter().map(|&v| v >= ACTIVE_FRACTION * tmax && v > 0.0).collect();
    let weight_t = class.weight().map(|b| b.transpose());
    // Basis of the per-family "unit" multiplier: I, Bᵀ, e_k e_kᵀ.
    let family_basis = |names: &str| -> (Vec<Vec<CMatrix>>, Vec<String>, bool) {
        match family {
            Family::Trace => (vec![vec![CMatrix::identity(t, t); nb]], vec![names.to_string()], false),
            Family::Weighted => (
                vec![vec![weight_t.clone().expect("weighted class"); nb]],
                vec![names.to_string()],
                false,
            ),
            Family::Component => (
                (0..t).map(|k| vec![unit(t, k); nb]).collect(),
                (0..t).map(|k| format!("{names}_{}", k + 1)).collect(),
                false,
            ),
            Family::Matrix => {
                let (basis, n) = hermitian_basis(t);
                (basis.into_iter().map(|m| vec![m; nb]).collect(), n, true)
            }
        }
    };
    let scalar_locals = |name: &str, sign: Sign, free: &dyn Fn(usize, usize) -> bool| -> Vec<Local> {
        match family {
            Family::Trace | Family::Weighted => {
                let e = match family {
                    Family::Trace => CMatrix::identity(t, t),
                    _ => weight_t.clone().expect("weighted class"),
                };
                vec![Local {
                    name: name.to_string(),
                    sign,
                    basis: (0..nb).map(|b| free(b, 0).then(|| e.clone())).collect(),
                    matrix: false,
                }]
            }
            Family::Component => (0..t)
                .map(|k| Local {
                    name: format!("{name}_{}", k + 1),
                    sign,
                    basis: (0..nb).map(|b| free(b, k).then(|| unit(t, k))).collect(),
                    matrix: false,
                })
                .collect(),
            Family::Matrix => vec![Local {
                name: name.to_string(),
                sign,
                basis: (0..nb).map(|b| free(b, 0).then(|| CMatrix::identity(t, t))).collect(),
                matrix: true,
            }],
        }
    };
    match class.constraint() {
        Constraint::Fixed(_) => None,
        Constraint::Moment { .. } => {
            let (global, global_names, rank_one) = family_basis(if family == Family::Matrix { "alpha" } else { "alpha2" });
            Some(Structure {
                global_names,
                global,
                rank_one,
                locals: Vec::new(),
                active: mass_active,
                ball_defect: None,
            })
        }
        Constraint::Contamination { epsilon, reference, .. } => {
            let subject = literal.unwrap_or(x);
            let floor: Vec<Vec<f64>> = bins
                .iter()
                .map(|&j| channel_values(class, &reference.sample(j).scale(1.0 - epsilon)))
                .collect();
            let above: Vec<Vec<f64>> = bins
                .iter()
                .enumerate()
                .map(|(b, &j)| {
                    if family == Family::Matrix {
                        let d = subject.sample(j) - reference.sample(j).scale(1.0 - epsilon);
                        vec![hermitian_eigen(&d).0[0]]
                    } else {
                        channel_values(class, subject.sample(j))
                            .iter()
                            .zip(&floor[b])
                            .map(|(v, f)| v - f)
                            .collect()
                    }
                })
                .collect();
            let n_ch = above[0].len();
            let max_above: Vec<f64> = (0..n_ch)
                .map(|k| above.iter().fold(0.0f64, |m, a| m.max(a[k])))
                .collect();
            let free = |b: usize, k: usize| -> bool {
                !(*epsilon > 0.0 && above[b][k] > ACTIVE_FRACTION * max_above[k] && max_above[k] > 0.0)
            };
            let (global, global_names, rank_one) = family_basis(if family == Family::Matrix { "beta" } else { "beta2" });
            let local_name = if family == Family::Matrix { "Gamma" } else { "gamma" };
            Some(Structure {
                global_names,
                global,
                rank_one,
                locals: scalar_locals(local_name, Sign::NonPositive, &free),
                active: vec![true; nb],
                ball_defect: None,
            })
        }
        Constraint::Strip { lower, upper, .. } => {
            let (at_lower, at_upper): (Vec<Vec<bool>>, Vec<Vec<bool>>) = bins
                .iter()
                .map(|&j| {
                    if family == Family::Matrix {
                        let lo = hermitian_eigen(&(x.sample(j) - lower.sample(j))).0[0];
                        let hi = hermitian_eigen(&(upper.sample(j) - x.sample(j))).0[0];
                        let range = hermitian_eigen(&(upper.sample(j) - lower.sample(j))).0[0].max(0.0);
                        let tol = ACTIVE_FRACTION * range;
                        (vec![lo <= tol], vec![hi <= tol])
                    } else {
                        let xv = channel_values(class, x.sample(j));
                        let lv = channel_values(class, lower.sample(j));
                        let uv = channel_values(class, upper.sample(j));
                        let tol: Vec<f64> = uv.iter().zip(&lv).map(|(u, l)| ACTIVE_FRACTION * (u - l)).collect();
                        (
                            (0..xv.len()).map(|k| xv[k] - lv[k] <= tol[k]).collect(),
                            (0..xv.len()).map(|k| uv[k] - xv[k] <= tol[k]).collect(),
                        )
                    }
                })
                .unzip();
            let (global, global_names, rank_one) = family_basis(if family == Family::Matrix { "alpha" } else { "alpha2" });
            let (n1, n2) = if family == Family::Matrix {
                ("Gamma1", "Gamma2")
            } else {
                ("gamma1", "gamma2")
            };
            let mut locals = scalar_locals(n1, Sign::NonPositive, &|b, k| at_lower[b][k] && !at_upper[b][k]);
            locals.extend(scalar_locals(n2, Sign::NonNegative, &|b, k| at_upper[b][k] && !at_lower[b][k]));
            locals.extend(scalar_locals(&format!("{n1}+{n2}"), Sign::Free, &|b, k| {
                at_upper[b][k] && at_lower[b][k]
            }));
            Some(Structure {
                global_names,
                global,
                rank_one,
                locals,
                active: vec![true; nb],
                ball_defect: None,
            })
        }
        Constraint::Ball { reference, radius } => {
            let diffs: Vec<CMatrix> = bins.iter().map(|&j| x.sample(j) - reference.sample(j)).collect();
            let (global, global_names) = match family {
                Family::Trace => (
                    vec![diffs.iter().map(|d| CMatrix::identity(t, t).scale(crate::linalg::real_trace(d))).collect()],
                    vec!["beta2".to_string()],
                ),
                Family::Weighted => {
                    let bt = weight_t.clone().expect("weighted class");
                    let b = class.weight().expect("weighted class");
                    (
                        vec![diffs.iter().map(|d| bt.scale(super::class::weighted_inner(b, d))).collect()],
                        vec!["beta2".to_string()],
                    )
                }
                Family::Component => (
                    (0..t)
                        .map(|k| diffs.iter().map(|d| unit(t, k).scale(d[(k, k)].re)).collect())
                        .collect(),
                    (0..t).map(|k| format!("beta2_{}", k + 1)).collect(),
                ),
                Family::Matrix => {
                    let mut g = Vec::new();
                    let mut n = Vec::new();
                    for i in 0..t {
                        for k in i..t {
                            g.push(
                                diffs
                                    .iter()
                                    .map(|d| {
                                        let mut m = CMatrix::zeros(t, t);
                                        m[(i, k)] = d[(i, k)];
                                        m[(k, i)] = d[(k, i)];
                                        m
                                    })
                                    .collect(),
                            );
                            n.push(format!("beta_{}{}", i + 1, k + 1));
                        }
                    }
                    (g, n)
                }
            };
            let dist = class.ball_distances(x, reference, grid);
            let radii: Vec<f64> = match radius {
                super::class::Radius::Scalar(d) => vec![*d],
                super::class::Radius::Vector(d) => d.clone(),
                super::class::Radius::Matrix(d) => d.iter().flatten().copied().collect(),
            };
            Some(Structure {
                global_names,
                global,
                rank_one: false,
                locals: Vec::new(),
                active: mass_active,
                ball_defect: Some(dist.iter().zip(&radii).map(|(d, r)| (d - r).abs() / r).collect()),
            })
        }
    }
}

/// Weighted least squares over real coefficients: min Σ w ‖L − Σ θ_i K_i‖².
fn least_squares(blocks: &[(f64, Vec<CMatrix>, CMatrix)], p: usize) -> Vec<f64> {
    if p == 0 {
        return Vec::new();
    }
    let mut n = DMatrix::<f64>::zeros(p, p);
    let mut r = DVector::<f64>::zeros(p);
    for (w, ks, l) in blocks {
        for i in 0..p {
            r[i] += w * frobenius_inner(&ks[i], l);
            for k in i..p {
                let v = w * frobenius_inner(&ks[i], &ks[k]);
                n[(i, k)] += v;
                if k != i {
                    n[(k, i)] += v;
                }
            }
        }
    }
    let scale = n.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return vec![0.0; p];
    }
    let svd = n.svd(true, true);
    match svd.solve(&r, 1e-13 * scale) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; p],
    }
}

fn project_sign(m: &CMatrix, sign: Sign) -> CMatrix {
    if sign == Sign::Free {
        return m.clone();
    }
    let (vals, vecs) = hermitian_eigen(m);
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for (i, &v) in vals.iter().enumerate() {
        let keep = match sign {
            Sign::NonPositive => v.min(0.0),
            Sign::NonNegative => v.max(0.0),
            Sign::Free => v,
        };
        let col = vecs.column(i);
        out += (&col * col.adjoint()).scale(keep);
    }
    out
}

fn wrong_part(m: &CMatrix, sign: Sign) -> f64 {
    let vals = hermitian_eigen(m).0;
    match sign {
        Sign::NonPositive => vals.iter().fold(0.0f64, |a, &v| a.max(v)),
        Sign::NonNegative => vals.iter().fold(0.0f64, |a, &v| a.max(-v)),
        Sign::Free => 0.0,
    }
}

fn evaluate_side(
    side: &str,
    class: &DensityClass,
    x: &SpectralDensity,
    w: &[CMatrix],
    s: &[CMatrix],
    bins: &[usize],
    grid: &FrequencyGrid,
    literal: Option<&SpectralDensity>,
) -> Option<SideResidual> {
    let st = structure(class, x, bins, literal, grid)?;
    let nb = bins.len();
    let mu: Vec<f64> = {
        let all = grid.bins();
        all.iter().map(|b| b.measure).collect()
    };
    let l: Vec<CMatrix> = (0..nb).map(|b| &s[b] * &w[b] * &s[b]).collect();
    let sandwich = |b: usize, m: &CMatrix| -> CMatrix { &s[b] * m * &s[b] };
    let any_free = |b: usize| st.locals.iter().any(|loc| loc.basis[b].is_some());
    let mut fit_bins: Vec<usize> = (0..nb).filter(|&b| st.active[b] && !any_free(b)).collect();
    if fit_bins.is_empty() {
        fit_bins = (0..nb).filter(|&b| st.active[b]).collect();
    }
    let p = st.global.len();
    let blocks: Vec<(f64, Vec<CMatrix>, CMatrix)> = fit_bins
        .iter()
        .map(|&b| (mu[b], st.global.iter().map(|g| sandwich(b, &g[b])).collect(), l[b].clone()))
        .collect();
    let theta = least_squares(&blocks, p);
    let mut multipliers = BTreeMap::new();
    let global_at: Vec<CMatrix> = if st.rank_one {
        // θ describes a constant Hermitian matrix; keep its rank-one PSD part.
        let mut m = CMatrix::zeros(class.dim(), class.dim());
        for (i, g) in st.global.iter().enumerate() {
            m += g[0].scale(theta[i]);
        }
        let (vals, vecs) = hermitian_eigen(&hermitian_part(&m));
        let t = vals.len();
        let sigma = vals[t - 1].max(0.0);
        let v = vecs.column(t - 1).scale(sigma.sqrt());
        let name = st.global_names.first().map(|n| n.split('_').next().unwrap_or("alpha").to_string());
        let prefix = if st.global_names[0].starts_with('m') {
            match class.kind().shape() {
                Shape::Contamination => "beta",
                _ => "alpha",
            }
            .to_string()
        } else {
            name.unwrap_or_default()
        };
        multipliers.insert(prefix, v.iter().flat_map(|z| [z.re, z.im]).collect());
        let r1 = &v * v.adjoint();
        vec![r1; nb]
    } else {
        for (i, name) in st.global_names.iter().enumerate() {
            multipliers.insert(name.clone(), vec![theta[i]]);
        }
        (0..nb)
            .map(|b| {
                let mut m = CMatrix::zeros(class.dim(), class.dim());
                for (i, g) in st.global.iter().enumerate() {
                    m += g[b].scale(theta[i]);
                }
                m
            })
            .collect()
    };
    let global_scale = global_at.iter().fold(0.0f64, |m, g| m.max(g.norm())).max(1e-300);
    let mut slackness: Vec<SlacknessDefect> = Vec::new();
    let mut local_total: Vec<CMatrix> = vec![CMatrix::zeros(class.dim(), class.dim()); nb];
    for loc in &st.locals {
        let mut values = vec![0.0; nb];
        let mut worst = 0.0f64;
        let mut n_free = 0;
        for b in 0..nb {
            let Some(e) = &loc.basis[b] else { continue };
            n_free += 1;
            let resid = &l[b] - sandwich(b, &global_at[b]);
            let fitted = if loc.matrix {
                match hermitian_inverse(&s[b]) {
                    Some(si) => hermitian_part(&(&si * &resid * &si)),
                    None => continue,
                }
            } else {
                let k = sandwich(b, e);
                let nk = frobenius_inner(&k, &k);
                if nk == 0.0 {
                    continue;
                }
                e.scale(frobenius_inner(&k, &resid) / nk)
            };
            worst = worst.max(wrong_part(&fitted, loc.sign));
            values[b] = if loc.matrix {
                hermitian_eigen(&fitted).0.last().copied().unwrap_or(0.0)
            } else {
                let en = frobenius_inner(e, e).sqrt();
                frobenius_inner(e, &fitted) / (en * en).max(1e-300)
            };
            local_total[b] += project_sign(&fitted, loc.sign);
        }
        if n_free > 0 || loc.sign != Sign::Free {
            slackness.push(SlacknessDefect {
                multiplier: loc.name.clone(),
                variant: if literal.is_some() { "literal".into() } else { "own density".into() },
                n_free,
                sign_defect: worst / global_scale,
            });
        }
        multipliers.insert(format!("{}(lambda)", loc.name), values);
    }
    let mut per_frequency = Vec::new();
    let mut worst = 0.0f64;
    let mut sum2 = 0.0;
    let mut wsum = 0.0;
    for b in 0..nb {
        if !st.active[b] {
            continue;
        }
        let r = sandwich(b, &(&global_at[b] + &local_total[b]));
        let denom = l[b].norm().max(r.norm());
        let rel = if denom == 0.0 { 0.0 } else { (&l[b] - &r).norm() / denom };
        worst = worst.max(rel);
        sum2 += mu[b] * rel * rel;
        wsum += mu[b];
        per_frequency.push(FrequencyResidual {
            lambda: grid.nodes()[bins[b]],
            relative: rel,
        });
    }
    Some(SideResidual {
        class: class.kind().to_string(),
        side: side.to_string(),
        max_relative: worst,
        rms_relative: if wsum > 0.0 { (sum2 / wsum).sqrt() } else { 0.0 },
        n_evaluated: per_frequency.len(),
        multipliers,
        slackness,
        ball_equality_defect: st.ball_defect,
        per_frequency,
    })
}

/// Residuals of the least-favorable relations for the class pair of the input.
pub fn kkt_residuals(input: &KktInput) -> Result<KktResiduals> {
    let grid = input.grid;
    input.f0.check_grid(grid)?;
    input.f0.check_compatible(input.g0)?;
    if input.h.len() != grid.len() || input.a_transform.len() != grid.len() {
        return Err(Error::GridMismatch("characteristic does not match the grid".into()));
    }
    let bins: Vec<usize> = grid.bins().iter().map(|b| b.positive).collect();
    let (wf, wg) = error_weights(input.h, input.a_transform);
    let s: Vec<CMatrix> = bins.iter().map(|&j| input.f0.sample(j) + input.g0.sample(j)).collect();
    let pick = |w: &[CMatrix]| -> Vec<CMatrix> { bins.iter().map(|&j| w[j].clone()).collect() };
    let (wf, wg) = (pick(&wf), pick(&wg));
    let f_side = evaluate_side("F", input.class_f, input.f0, &wf, &s, &bins, grid, None);
    let g_side = evaluate_side("G", input.class_g, input.g0, &wg, &s, &bins, grid, None);
    let mut variants = Vec::new();
    // The trace contamination relation also read with F⁰ in its slackness condition.
    if input.class_g.kind() == super::class::ClassKind::TraceContamination {
        if let Some(v) = evaluate_side("G", input.class_g, input.g0, &wg, &s, &bins, grid, Some(input.f0)) {
            variants.push(v);
        }
    }
    let max_relative = [&f_side, &g_side]
        .iter()
        .filter_map(|s| s.as_ref().map(|s| s.max_relative))
        .fold(0.0f64, f64::max);
    Ok(KktResiduals {
        f_side,
        g_side,
        variants,
        max_relative,
    })
}
