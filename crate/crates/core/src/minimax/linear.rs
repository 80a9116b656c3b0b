//! Extreme points of the linearized error over a class.
//!
//! Δ(h; F, G) is linear in (F, G): Σ μ tr(F W_F) + tr(G W_G) with W_F = conj(A − h)(A − h)ᵀ and
//! W_G = conj(h)hᵀ. Maximizing over a class therefore reduces to a budget allocation per bin ±λ.

use rand::Rng;
use rand_distr::StandardNormal;

use super::class::{Budget, Constraint, DensityClass, Family, Radius};
use crate::density::SpectralDensity;
use crate::error::{Error, Result};
use crate::grid::{Bin, FrequencyGrid};
use crate::linalg::{hermitian_eigen, re, CMatrix, CVector};
use num_complex::Complex64;

/// Relative spread below which a weight is treated as constant across bins.
const DEGENERATE: f64 = 1e-12;
const INNER_ITERATIONS: usize = 400;

/// Feasible set of one constrained quantity, as a density value per bin.
#[derive(Clone, Debug)]
pub(crate) enum ChannelSet {
    Box { lo: Vec<f64>, hi: Vec<f64>, budget: f64 },
    Ball { center: Vec<f64>, radius2: f64 },
}

impl ChannelSet {
    pub(crate) fn center(&self, mu: &[f64]) -> Vec<f64> {
        match self {
            ChannelSet::Ball { center, .. } => center.clone(),
            ChannelSet::Box { lo, hi, budget } => {
                let base: f64 = lo.iter().zip(mu).map(|(l, m)| l * m).sum();
                let excess = (budget - base).max(0.0);
                if hi.iter().all(|h| h.is_finite()) {
                    let room: f64 = hi.iter().zip(lo).zip(mu).map(|((h, l), m)| (h - l) * m).sum();
                    let s = if room > 0.0 { (excess / room).min(1.0) } else { 0.0 };
                    lo.iter().zip(hi).map(|(l, h)| l + s * (h - l)).collect()
                } else {
                    let total: f64 = mu.iter().sum();
                    lo.iter().map(|l| l + excess / total).collect()
                }
            }
        }
    }

    /// Maximizer of Σ μ_b g_b x_b over the set. Ties go to the lowest frequency; a constant g
    /// returns the uniform allocation.
    pub(crate) fn maximize(&self, g: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
        let gmax = g.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let gmin = g.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let degenerate = gmax - gmin <= DEGENERATE * gmax.abs().max(gmin.abs());
        match self {
            ChannelSet::Ball { center, radius2 } => {
                let norm = g.iter().zip(mu).map(|(v, m)| m * v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Ok(center.clone());
                }
                let r = radius2.sqrt();
                Ok(center.iter().zip(g).map(|(c, v)| c + r * v / norm).collect())
            }
            ChannelSet::Box { lo, hi, budget } => {
                let base: f64 = lo.iter().zip(mu).map(|(l, m)| l * m).sum();
                let tol = 1e-10 * budget.abs().max(base.abs());
                let mut remaining = budget - base;
                if remaining < -tol {
                    return Err(Error::InfeasibleClass(format!(
                        "budget {budget} is below the integral of the lower bound {base}"
                    )));
                }
                let room: f64 = hi.iter().zip(lo).zip(mu).map(|((h, l), m)| (h - l) * m).sum();
                if remaining > room + tol {
                    return Err(Error::InfeasibleClass(format!(
                        "budget {budget} exceeds the integral of the upper bound {}",
                        base + room
                    )));
                }
                if degenerate {
                    return Ok(self.center(mu));
                }
                let mut order: Vec<usize> = (0..g.len()).collect();
                order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
                let mut x = lo.clone();
                for b in order {
                    if remaining <= 0.0 {
                        break;
                    }
                    let cap = (hi[b] - lo[b]) * mu[b];
                    let take = remaining.min(cap);
                    x[b] += take / mu[b];
                    remaining -= take;
                }
                Ok(x)
            }
        }
    }
}

/// Per-node weights of the linearized error: (W_F, W_G).
pub fn error_weights(h: &[CVector], a_transform: &[CVector]) -> (Vec<CMatrix>, Vec<CMatrix>) {
    h.iter()
        .zip(a_transform)
        .map(|(hj, aj)| {
            let e = aj - hj;
            (e.conjugate() * e.transpose(), hj.conjugate() * hj.transpose())
        })
        .unzip()
}

/// Σ_j μ_j Re tr(X_j W_j).
pub fn linear_value(weights: &[CMatrix], x: &SpectralDensity, grid: &FrequencyGrid) -> f64 {
    let terms: Vec<f64> = (0..grid.len())
        .map(|j| grid.measure(j) * crate::linalg::trace_product(x.sample(j), &weights[j]))
        .collect();
    crate::linalg::pairwise_sum(&terms)
}

/// Weight per bin for the positive-frequency sample, given X(−λ) = conj X(λ).
fn bin_weight(bin: &Bin, weights: &[CMatrix], grid: &FrequencyGrid) -> CMatrix {
    let mut w = weights[bin.positive].scale(grid.measure(bin.positive));
    match bin.negative {
        Some(n) => w += weights[n].conjugate().scale(grid.measure(n)),
        None => w = w.map(|z| re(z.re)),
    }
    w.scale(1.0 / bin.measure)
}

fn assemble(grid: &FrequencyGrid, bins: &[Bin], per_bin: Vec<CMatrix>, dim: usize) -> Result<SpectralDensity> {
    let mut samples = vec![CMatrix::zeros(dim, dim); grid.len()];
    for (bin, m) in bins.iter().zip(per_bin) {
        if let Some(n) = bin.negative {
            samples[n] = m.conjugate();
        }
        samples[bin.positive] = m;
    }
    SpectralDensity::new(dim, samples)
}

/// Normalized projector onto the top eigenspace, and the top eigenvalue.
fn top_projector(w: &CMatrix, real: bool) -> (f64, CMatrix) {
    let t = w.nrows();
    if t == 1 {
        return (w[(0, 0)].re, CMatrix::identity(1, 1));
    }
    let (vals, vecs) = hermitian_eigen(w);
    let top = vals[t - 1];
    let cut = top - DEGENERATE * top.abs().max(vals[0].abs()).max(1e-300);
    let idx: Vec<usize> = (0..t).filter(|&i| vals[i] >= cut).collect();
    let mut p = CMatrix::zeros(t, t);
    for &i in &idx {
        let v = vecs.column(i);
        p += &v * v.adjoint();
    }
    p /= Complex64::new(idx.len() as f64, 0.0);
    if real {
        p = p.map(|z| re(z.re));
    }
    (top, p)
}

fn channel_sets(class: &DensityClass, bins: &[Bin]) -> Result<Vec<ChannelSet>> {
    let n_channels = match class.kind().family() {
        Family::Trace => 1,
        Family::Component => class.dim(),
        _ => unreachable!("checked by the caller"),
    };
    let at = |x: &SpectralDensity, k: usize| -> Vec<f64> {
        bins.iter().map(|b| class.components(x.sample(b.positive))[k]).collect()
    };
    let budget_k = |budget: &Budget, k: usize| -> f64 {
        match budget {
            Budget::Scalar(b) => *b,
            Budget::Vector(b) => b[k],
            Budget::Matrix(_) => unreachable!("matrix budgets belong to unsupported kinds"),
        }
    };
    let n = bins.len();
    (0..n_channels)
        .map(|k| {
            Ok(match class.constraint() {
                Constraint::Moment { budget } => ChannelSet::Box {
                    lo: vec![0.0; n],
                    hi: vec![f64::INFINITY; n],
                    budget: budget_k(budget, k),
                },
                Constraint::Contamination {
                    epsilon,
                    reference,
                    budget,
                } => {
                    let lo: Vec<f64> = at(reference, k).iter().map(|v| (1.0 - epsilon) * v).collect();
                    let hi = if *epsilon > 0.0 {
                        vec![f64::INFINITY; n]
                    } else {
                        lo.clone()
                    };
                    ChannelSet::Box {
                        lo,
                        hi,
                        budget: budget_k(budget, k),
                    }
                }
                Constraint::Strip { lower, upper, budget } => ChannelSet::Box {
                    lo: at(lower, k),
                    hi: at(upper, k),
                    budget: budget_k(budget, k),
                },
                Constraint::Ball { reference, radius } => ChannelSet::Ball {
                    center: at(reference, k),
                    radius2: match radius {
                        Radius::Scalar(d) => *d,
                        Radius::Vector(d) => d[k],
                        Radius::Matrix(_) => unreachable!("matrix radii belong to unsupported kinds"),
                    },
                },
                Constraint::Fixed(_) => unreachable!("handled by the caller"),
            })
        })
        .collect()
}

/// Maximizer of Σ μ tr(X W) over the class for per-node Hermitian PSD weights W.
pub fn maximize_linear_weights(
    class: &DensityClass,
    weights: &[CMatrix],
    grid: &FrequencyGrid,
) -> Result<SpectralDensity> {
    if weights.len() != grid.len() {
        return Err(Error::GridMismatch("weights do not match the grid".into()));
    }
    if let Constraint::Fixed(x) = class.constraint() {
        return Ok(x.clone());
    }
    if !class.kind().optimizable() {
        return Err(Error::UnsupportedClass(class.kind().to_string()));
    }
    let dim = class.dim();
    let bins = grid.bins();
    let mu: Vec<f64> = bins.iter().map(|b| b.measure).collect();
    let wb: Vec<CMatrix> = bins.iter().map(|b| bin_weight(b, weights, grid)).collect();
    let sets = channel_sets(class, &bins)?;
    let per_bin = match class.kind().family() {
        Family::Trace => {
            let tops: Vec<(f64, CMatrix)> = bins
                .iter()
                .zip(&wb)
                .map(|(b, w)| top_projector(w, b.negative.is_none()))
                .collect();
            let g: Vec<f64> = tops.iter().map(|t| t.0).collect();
            let tau = sets[0].maximize(&g, &mu)?;
            tops.into_iter().zip(tau).map(|((_, p), t)| p.scale(t)).collect()
        }
        Family::Component if dim == 1 => {
            let g: Vec<f64> = wb.iter().map(|w| w[(0, 0)].re).collect();
            let x = sets[0].maximize(&g, &mu)?;
            x.into_iter().map(|v| CMatrix::from_element(1, 1, re(v))).collect()
        }
        Family::Component => component_allocation(&wb, &sets, &mu, &bins)?,
        _ => unreachable!("optimizable kinds are trace or component"),
    };
    assemble(grid, &bins, per_bin, dim)
}

/// Rank-one summary σ·v vᴴ of a bin weight.
fn rank_one(w: &CMatrix) -> (f64, Vec<f64>, Vec<Complex64>) {
    let t = w.nrows();
    let (vals, vecs) = hermitian_eigen(w);
    let sigma = vals[t - 1].max(0.0);
    let v = vecs.column(t - 1);
    let mag: Vec<f64> = v.iter().map(|z| z.norm()).collect();
    let phase: Vec<Complex64> = v
        .iter()
        .map(|z| if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(1.0, 0.0) })
        .collect();
    (sigma, mag, phase)
}

/// Componentwise classes with T > 1: maximize Σ_b μ_b σ_b(Σ_k √d_bk |v_bk|)² over the diagonal
/// allocations d by an inner conditional-gradient loop. The bin value is exact for rank-one
/// weights, which is the form the error weights take.
fn component_allocation(wb: &[CMatrix], sets: &[ChannelSet], mu: &[f64], bins: &[Bin]) -> Result<Vec<CMatrix>> {
    let t = sets.len();
    let nb = wb.len();
    let summaries: Vec<(f64, Vec<f64>, Vec<Complex64>)> = wb.iter().map(rank_one).collect();
    let value = |d: &[Vec<f64>]| -> f64 {
        (0..nb)
            .map(|b| {
                let (s, m, _) = &summaries[b];
                let r: f64 = (0..t).map(|k| d[k][b].max(0.0).sqrt() * m[k]).sum();
                mu[b] * s * r * r
            })
            .sum()
    };
    let mut d: Vec<Vec<f64>> = sets.iter().map(|s| s.center(mu)).collect();
    let mut current = value(&d);
    for _ in 0..INNER_ITERATIONS {
        let mut vertex = Vec::with_capacity(t);
        for k in 0..t {
            let g: Vec<f64> = (0..nb)
                .map(|b| {
                    let (s, m, _) = &summaries[b];
                    let r: f64 = (0..t).map(|l| d[l][b].max(0.0).sqrt() * m[l]).sum();
                    s * r * m[k] / d[k][b].max(1e-300).sqrt()
                })
                .collect();
            vertex.push(sets[k].maximize(&g, mu)?);
        }
        let along = |s: f64| -> Vec<Vec<f64>> {
            d.iter()
                .zip(&vertex)
                .map(|(dk, vk)| dk.iter().zip(vk).map(|(a, b)| a + s * (b - a)).collect())
                .collect()
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let m1 = lo + 0.381_966 * (hi - lo);
            let m2 = lo + 0.618_034 * (hi - lo);
            if value(&along(m1)) < value(&along(m2)) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        let mut step = 0.5 * (lo + hi);
        if value(&along(1.0)) >= value(&along(step)) {
            step = 1.0;
        }
        let next = along(step);
        let v = value(&next);
        if v <= current * (1.0 + 1e-15) {
            break;
        }
        d = next;
        current = v;
    }
    Ok((0..nb)
        .map(|b| {
            let (_, _, phase) = &summaries[b];
            let x = CVector::from_iterator(t, (0..t).map(|k| phase[k] * d[k][b].max(0.0).sqrt()));
            let mut m = &x * x.adjoint();
            if bins[b].negative.is_none() {
                m = m.map(|z| re(z.re));
            }
            m
        })
        .collect())
}

/// Extreme points (F*, G*) maximizing Δ(h0; F, G) over D_F × D_G.
pub fn maximize_linear(
    h0: &[CVector],
    a_transform: &[CVector],
    class_f: &DensityClass,
    class_g: &DensityClass,
    grid: &FrequencyGrid,
) -> Result<(SpectralDensity, SpectralDensity)> {
    if h0.len() != grid.len() || a_transform.len() != grid.len() {
        return Err(Error::GridMismatch("characteristic does not match the grid".into()));
    }
    let (wf, wg) = error_weights(h0, a_transform);
    Ok((
        maximize_linear_weights(class_f, &wf, grid)?,
        maximize_linear_weights(class_g, &wg, grid)?,
    ))
}

/// Random rank-one PSD weights with a wide spread of magnitudes, conjugate-symmetric in λ.
pub(crate) fn random_weights<R: Rng>(grid: &FrequencyGrid, dim: usize, rng: &mut R) -> Vec<CMatrix> {
    let mut out = vec![CMatrix::zeros(dim, dim); grid.len()];
    for bin in grid.bins() {
        let real = bin.negative.is_none();
        let z = CVector::from_iterator(
            dim,
            (0..dim).map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = if real { 0.0 } else { rng.sample(StandardNormal) };
                Complex64::new(a, b)
            }),
        );
        let scale = (2.0 * rng.sample::<f64, _>(StandardNormal)).exp();
        let w = (&z * z.adjoint()).scale(scale);
        if let Some(n) = bin.negative {
            out[n] = w.conjugate();
        }
        out[bin.positive] = w;
    }
    out
}
