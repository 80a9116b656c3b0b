//! Discretized operators on L₂(S) and the solver for c(t).

use nalgebra::{Cholesky, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::density::{invert_checked, SpectralDensity};
use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{cis, hermitian_part, re, CMatrix, CVector, ZERO};
use crate::missing::MissingSet;
use crate::weight::WeightFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Observations of ξ + η.
    Noisy,
    /// Observations of ξ alone (G ≡ 0).
    Noiseless,
}

/// Assembled matrices for the kernels of (F+G)⁻¹, (F+G)⁻¹F and F(F+G)⁻¹G.
///
/// Block (i, k) of each matrix is w_i w_k K(t_i − t_k) with K(τ) = (1/2π)∫M(λ)e^{iλτ}dλ,
/// indexed node-major. The equations act on conjugated node values of c.
#[derive(Clone, Debug)]
pub struct OperatorSystem {
    dim: usize,
    mode: Mode,
    times: Vec<f64>,
    weights: Vec<f64>,
    interior: Vec<usize>,
    b: CMatrix,
    r: CMatrix,
    q: CMatrix,
    condition_number_b: f64,
}

/// Per-frequency symbols stored flat, T² entries per frequency.
struct Symbols {
    b: Vec<Complex64>,
    r: Vec<Complex64>,
    q: Vec<Complex64>,
}

fn symbols(f: &SpectralDensity, g: &SpectralDensity, grid: &FrequencyGrid, mode: Mode) -> Result<Symbols> {
    f.check_compatible(g)?;
    f.check_grid(grid)?;
    let dim = f.dim();
    let per: Vec<Result<(CMatrix, CMatrix, CMatrix)>> = crate::par::map_indices(grid.len(), |j| {
        let fj = f.sample(j);
        let gj = g.sample(j);
        let lambda = grid.nodes()[j];
        match mode {
            Mode::Noisy => {
                let p = invert_checked(&(fj + gj), j, lambda)?;
                let r = &p * fj;
                let q = hermitian_part(&(fj * &p * gj));
                Ok((hermitian_part(&p), r, q))
            }
            Mode::Noiseless => {
                let p = invert_checked(fj, j, lambda)?;
                Ok((hermitian_part(&p), CMatrix::identity(dim, dim), CMatrix::zeros(dim, dim)))
            }
        }
    });
    let mut s = Symbols {
        b: Vec::with_capacity(grid.len() * dim * dim),
        r: Vec::with_capacity(grid.len() * dim * dim),
        q: Vec::with_capacity(grid.len() * dim * dim),
    };
    for item in per {
        let (b, r, q) = item?;
        for i in 0..dim {
            for k in 0..dim {
                s.b.push(b[(i, k)]);
                s.r.push(r[(i, k)]);
                s.q.push(q[(i, k)]);
            }
        }
    }
    Ok(s)
}

fn lag_key(tau: f64) -> i64 {
    (tau * 1e9).round() as i64
}

impl OperatorSystem {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        dim: usize,
        mode: Mode,
        times: Vec<f64>,
        weights: Vec<f64>,
        interior: Vec<usize>,
        b: CMatrix,
        r: CMatrix,
        q: CMatrix,
        condition_number_b: f64,
    ) -> Self {
        OperatorSystem {
            dim,
            mode,
            times,
            weights,
            interior,
            b,
            r,
            q,
            condition_number_b,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn r(&self) -> &CMatrix {
        &self.r
    }

    pub fn q(&self) -> &CMatrix {
        &self.q
    }

    pub fn condition_number_b(&self) -> f64 {
        self.condition_number_b
    }

    /// Row/column indices of the unknowns (interior nodes, all components).
    pub fn unknown_indices(&self) -> Vec<usize> {
        self.interior
            .iter()
            .flat_map(|&k| (0..self.dim).map(move |c| k * self.dim + c))
            .collect()
    }

    pub fn interior_block(&self, m: &CMatrix) -> CMatrix {
        let idx = self.unknown_indices();
        CMatrix::from_fn(idx.len(), idx.len(), |i, k| m[(idx[i], idx[k])])
    }

    /// Mass-matrix image of a: w_k a_k.
    pub fn mass_apply(&self, a: &WeightFunction) -> CVector {
        CVector::from_iterator(
            a.values().len(),
            a.values()
                .iter()
                .enumerate()
                .map(|(i, &v)| re(v * self.weights[i / self.dim])),
        )
    }

    /// Largest difference between unweighted blocks of B sharing a lag, relative to the largest block.
    pub fn toeplitz_defect(&self) -> f64 {
        let n = self.n_nodes();
        let t = self.dim;
        let mut seen: HashMap<i64, CMatrix> = HashMap::new();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for k in 0..n {
                let w = self.weights[i] * self.weights[k];
                let block = self.b.view((i * t, k * t), (t, t)).map(|z| z / w);
                scale = scale.max(block.norm());
                let key = lag_key(self.times[i] - self.times[k]);
                match seen.get(&key) {
                    Some(prev) => worst = worst.max((prev - &block).norm()),
                    None => {
                        seen.insert(key, block);
                    }
                }
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }
}

/// Assembles B, R and Q by frequency quadrature, one kernel evaluation per distinct lag.
pub fn assemble_system(
    f: &SpectralDensity,
    g: &SpectralDensity,
    set: &MissingSet,
    grid: &FrequencyGrid,
    mode: Mode,
) -> Result<OperatorSystem> {
    let dim = f.dim();
    let sym = symbols(f, g, grid, mode)?;
    let times = set.times().to_vec();
    let weights = set.weights().to_vec();
    let n = times.len();

    let mut lag_index: HashMap<i64, usize> = HashMap::new();
    let mut lags: Vec<f64> = Vec::new();
    let mut pair_lag = vec![0usize; n * n];
    for i in 0..n {
        for k in 0..n {
            let tau = times[i] - times[k];
            let idx = *lag_index.entry(lag_key(tau)).or_insert_with(|| {
                lags.push(tau);
                lags.len() - 1
            });
            pair_lag[i * n + k] = idx;
        }
    }

    let dd = dim * dim;
    let measures = grid.measures();
    let nodes = grid.nodes();
    let kernels: Vec<[Vec<Complex64>; 3]> = crate::par::map_indices(lags.len(), |l| {
        let tau = lags[l];
        let mut kb = vec![ZERO; dd];
        let mut kr = vec![ZERO; dd];
        let mut kq = vec![ZERO; dd];
        for j in 0..nodes.len() {
            let e = cis(nodes[j] * tau) * measures[j];
            let base = j * dd;
            for x in 0..dd {
                kb[x] += sym.b[base + x] * e;
                kr[x] += sym.r[base + x] * e;
                kq[x] += sym.q[base + x] * e;
            }
        }
        [kb, kr, kq]
    });

    let size = n * dim;
    let mut b = CMatrix::zeros(size, size);
    let mut r = CMatrix::zeros(size, size);
    let mut q = CMatrix::zeros(size, size);
    for i in 0..n {
        for k in 0..n {
            let w = weights[i] * weights[k];
            let [kb, kr, kq] = &kernels[pair_lag[i * n + k]];
            for a in 0..dim {
                for c in 0..dim {
                    let x = a * dim + c;
                    b[(i * dim + a, k * dim + c)] = kb[x] * w;
                    r[(i * dim + a, k * dim + c)] = kr[x] * w;
                    q[(i * dim + a, k * dim + c)] = kq[x] * w;
                }
            }
        }
    }

    let mut sys = OperatorSystem {
        dim,
        mode,
        times,
        weights,
        interior: set.interior_nodes(),
        b,
        r,
        q,
        condition_number_b: f64::NAN,
    };
    sys.condition_number_b = condition_number(&sys.interior_block(&sys.b));
    Ok(sys)
}

/// Ratio of extreme eigenvalues of a Hermitian matrix; infinite when not positive definite.
pub fn condition_number(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// ε = 1e−8 · trace(B)/m over the unknowns.
    Auto,
    Fixed(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Auto
    }
}

pub const AUTO_TIKHONOV: f64 = 1e-8;
pub const MAX_CONDITION: f64 = 1e12;

/// Solution of the operator equation on the interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionC {
    /// c(t) per node, node-major; zero on boundary nodes.
    pub c: Vec<Complex64>,
    pub regularization_used: f64,
    /// ‖B d − rhs‖/‖rhs‖ for the unregularized equation.
    pub residual: f64,
    /// Right-hand side over all nodes (R a, or the mass image of a without noise).
    pub rhs: CVector,
    /// Conjugated solution on all nodes.
    pub dual: CVector,
}

impl SolutionC {
    pub fn node(&self, k: usize, dim: usize) -> &[Complex64] {
        &self.c[k * dim..(k + 1) * dim]
    }
}

/// Solves (B + εI)d = rhs on the interior unknowns, c = conj(d).
pub fn solve_c(sys: &OperatorSystem, a: &WeightFunction, regularization: Regularization) -> Result<SolutionC> {
    if a.dim() != sys.dim || a.n_nodes() != sys.n_nodes() {
        return Err(Error::GridMismatch(format!(
            "weight has {} nodes of dimension {}, system has {} of dimension {}",
            a.n_nodes(),
            a.dim(),
            sys.n_nodes(),
            sys.dim
        )));
    }
    let av = CVector::from_iterator(a.values().len(), a.values().iter().map(|&v| re(v)));
    let rhs = match sys.mode {
        Mode::Noisy => &sys.r * &av,
        Mode::Noiseless => sys.mass_apply(a),
    };
    let idx = sys.unknown_indices();
    let m = idx.len();
    let b_int = sys.interior_block(&sys.b);
    let rhs_int = CVector::from_iterator(m, idx.iter().map(|&i| rhs[i]));
    let eps = match regularization {
        Regularization::Auto => {
            if m == 0 {
                0.0
            } else {
                AUTO_TIKHONOV * b_int.diagonal().iter().map(|z| z.re).sum::<f64>() / m as f64
            }
        }
        Regularization::Fixed(e) => {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::InvalidArgument(format!("tikhonov must be nonnegative, got {e}")));
            }
            e
        }
    };
    if eps == 0.0 && !(sys.condition_number_b <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition_number: sys.condition_number_b,
        });
    }
    let d_int = if m == 0 {
        CVector::zeros(0)
    } else {
        let mut lhs = hermitian_part(&b_int);
        for i in 0..m {
            lhs[(i, i)] += re(eps);
        }
        match Cholesky::new(lhs.clone()) {
            Some(ch) => ch.solve(&rhs_int),
            None => lhs.lu().solve(&rhs_int).ok_or(Error::IllConditioned {
                condition_number: sys.condition_number_b,
            })?,
        }
    };
    let rhs_norm = rhs_int.norm();
    let residual = if rhs_norm == 0.0 {
        (&b_int * &d_int).norm()
    } else {
        (&b_int * &d_int - &rhs_int).norm() / rhs_norm
    };
    let mut dual = CVector::zeros(sys.n_nodes() * sys.dim);
    for (p, &i) in idx.iter().enumerate() {
        dual[i] = d_int[p];
    }
    Ok(SolutionC {
        c: dual.iter().map(|z| z.conj()).collect(),
        regularization_used: eps,
        residual,
        rhs,
        dual,
    })
}
