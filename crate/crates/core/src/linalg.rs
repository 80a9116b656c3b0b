//! Small dense helpers for Hermitian matrices.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn cis(x: f64) -> Complex64 {
    Complex64::new(x.cos(), x.sin())
}

pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// ‖M − M*‖ / ‖M‖, zero for the zero matrix.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        0.0
    } else {
        (m - m.adjoint()).norm() / norm
    }
}

/// Eigen-decomposition of the Hermitian part, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 1 {
        return (vec![m[(0, 0)].re], CMatrix::from_element(1, 1, ONE));
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    match n {
        0 => Vec::new(),
        1 => vec![m[(0, 0)].re],
        _ => {
            let mut v: Vec<f64> = SymmetricEigen::new(hermitian_part(m))
                .eigenvalues
                .iter()
                .copied()
                .collect();
            v.sort_by(f64::total_cmp);
            v
        }
    }
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Factor `L` with `L L* = M` for a PSD matrix; negative eigenvalues are clipped.
pub fn psd_factor(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    if n == 1 {
        return CMatrix::from_element(1, 1, re(m[(0, 0)].re.max(0.0).sqrt()));
    }
    let (values, vectors) = hermitian_eigen(m);
    let mut out = vectors;
    for (k, v) in values.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        for i in 0..n {
            out[(i, k)] *= s;
        }
    }
    out
}

/// Inverse of a Hermitian positive definite matrix, falling back to LU.
pub fn hermitian_inverse(m: &CMatrix) -> Option<CMatrix> {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        return if v.norm() > 0.0 {
            Some(CMatrix::from_element(1, 1, ONE / v))
        } else {
            None
        };
    }
    if let Some(ch) = Cholesky::new(hermitian_part(m)) {
        return Some(ch.inverse());
    }
    m.clone().try_inverse()
}

/// Re tr(A B) without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    s
}

pub fn real_trace(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Frobenius inner product Re⟨A, B⟩ = Re Σ conj(a_ij) b_ij.
pub fn frobenius_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Pairwise summation in fixed order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn real_to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(re)
}

pub fn dense_from_pairs(rows: &[Vec<[f64; 2]>]) -> Option<CMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(CMatrix::from_fn(n, n, |i, k| {
        Complex64::new(rows[i][k][0], rows[i][k][1])
    }))
}
