use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;
use crate::linalg::{hermitian_defect, hermitian_eigenvalues, real_trace, CMatrix, ONE, ZERO};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    PiecewiseLinear,
    Nearest,
}

/// Matrix-valued spectral density sampled on a [`FrequencyGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDensity {
    dim: usize,
    samples: Vec<CMatrix>,
    interpolation: Interpolation,
}

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyDiagnostics {
    pub index: usize,
    pub lambda: f64,
    pub hermitian_defect: f64,
    pub min_eigenvalue: f64,
    pub symmetry_defect: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleViolation {
    NotHermitian,
    NotPositiveSemidefinite,
    NotConjugateSymmetric,
    NotFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub lambda: f64,
    pub kind: SampleViolation,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub max_hermitian_defect: f64,
    pub min_eigenvalue: f64,
    pub max_symmetry_defect: f64,
    pub violations: Vec<Violation>,
    pub per_frequency: Vec<FrequencyDiagnostics>,
}

impl SpectralDensity {
    pub fn new(dim: usize, samples: Vec<CMatrix>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if let Some((j, _)) = samples
            .iter()
            .enumerate()
            .find(|(_, m)| m.nrows() != dim || m.ncols() != dim)
        {
            return Err(Error::InvalidArgument(format!(
                "sample {j} is not {dim}x{dim}"
            )));
        }
        Ok(SpectralDensity {
            dim,
            samples,
            interpolation: Interpolation::default(),
        })
    }

    pub fn from_fn(grid: &FrequencyGrid, dim: usize, f: impl Fn(f64) -> CMatrix) -> Result<Self> {
        Self::new(dim, grid.nodes().iter().map(|&l| f(l)).collect())
    }

    /// Scalar density f(λ)·I.
    pub fn scalar(grid: &FrequencyGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::isotropic(grid, 1, f)
    }

    pub fn isotropic(grid: &FrequencyGrid, dim: usize, f: impl Fn(f64) -> f64) -> Self {
        let id = CMatrix::identity(dim, dim);
        SpectralDensity {
            dim,
            samples: grid.nodes().iter().map(|&l| id.scale(f(l))).collect(),
            interpolation: Interpolation::default(),
        }
    }

    pub fn constant(grid: &FrequencyGrid, m: &CMatrix) -> Result<Self> {
        Self::new(m.nrows(), vec![m.clone(); grid.len()])
    }

    pub fn identity(grid: &FrequencyGrid, dim: usize) -> Self {
        Self::isotropic(grid, dim, |_| 1.0)
    }

    pub fn zeros(grid: &FrequencyGrid, dim: usize) -> Self {
        Self::isotropic(grid, dim, |_| 0.0)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn sample(&self, j: usize) -> &CMatrix {
        &self.samples[j]
    }

    pub fn samples(&self) -> &[CMatrix] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<CMatrix> {
        self.samples
    }

    pub fn trace(&self, j: usize) -> f64 {
        real_trace(&self.samples[j])
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|m| m.iter().all(|z| *z == ZERO))
    }

    pub fn check_grid(&self, grid: &FrequencyGrid) -> Result<()> {
        if self.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "density has {} samples, grid has {} nodes",
                self.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &SpectralDensity) -> Result<()> {
        if self.dim != other.dim || self.len() != other.len() {
            return Err(Error::GridMismatch(format!(
                "densities differ in shape: {}x{} vs {}x{}",
                self.len(),
                self.dim,
                other.len(),
                other.dim
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(usize, &CMatrix) -> CMatrix) -> Self {
        SpectralDensity {
            dim: self.dim,
            samples: self.samples.iter().enumerate().map(|(j, m)| f(j, m)).collect(),
            interpolation: self.interpolation,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|_, m| m.scale(c))
    }

    pub fn add(&self, other: &SpectralDensity) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.map(|j, m| m + &other.samples[j]))
    }

    /// (1 − t)·self + t·other.
    pub fn lerp(&self, other: &SpectralDensity, t: f64) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.map(|j, m| m.scale(1.0 - t) + other.samples[j].scale(t)))
    }

    /// (1/2π)∫F dλ by the grid quadrature.
    pub fn integral(&self, grid: &FrequencyGrid) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for (j, m) in self.samples.iter().enumerate() {
            acc += m.scale(grid.measure(j));
        }
        acc
    }

    /// Value at an arbitrary frequency; zero outside the grid range.
    pub fn evaluate(&self, grid: &FrequencyGrid, lambda: f64) -> CMatrix {
        let n = grid.len();
        let lm = grid.lambda_max();
        if lambda < -lm - 1e-12 * lm || lambda > lm + 1e-12 * lm {
            return CMatrix::zeros(self.dim, self.dim);
        }
        let pos = ((lambda + lm) / grid.spacing()).clamp(0.0, (n - 1) as f64);
        match self.interpolation {
            Interpolation::Nearest => self.samples[pos.round() as usize].clone(),
            Interpolation::PiecewiseLinear => {
                let lo = (pos.floor() as usize).min(n - 2);
                let t = pos - lo as f64;
                self.samples[lo].scale(1.0 - t) + self.samples[lo + 1].scale(t)
            }
        }
    }

    pub fn resample(&self, from: &FrequencyGrid, to: &FrequencyGrid) -> Result<Self> {
        self.check_grid(from)?;
        Ok(SpectralDensity {
            dim: self.dim,
            samples: to.nodes().iter().map(|&l| self.evaluate(from, l)).collect(),
            interpolation: self.interpolation,
        })
    }

    /// Smallest eigenvalue of each sample.
    pub fn min_eigenvalues(&self) -> Vec<f64> {
        crate::par::map_indices(self.len(), |j| {
            hermitian_eigenvalues(&self.samples[j])
                .first()
                .copied()
                .unwrap_or(0.0)
        })
    }

    pub fn validate(&self, grid: &FrequencyGrid) -> ValidationReport {
        validate_density(self, grid)
    }
}

/// Checks Hermitian symmetry, positive semidefiniteness and the real-process symmetry of every sample.
pub fn validate_density(f: &SpectralDensity, grid: &FrequencyGrid) -> ValidationReport {
    let mut violations = Vec::new();
    if f.len() != grid.len() {
        return ValidationReport {
            pass: false,
            max_hermitian_defect: f64::NAN,
            min_eigenvalue: f64::NAN,
            max_symmetry_defect: f64::NAN,
            violations,
            per_frequency: Vec::new(),
        };
    }
    let per_frequency: Vec<FrequencyDiagnostics> = crate::par::map_indices(f.len(), |j| {
        let m = f.sample(j);
        let mirror = f.sample(grid.mirror(j));
        let scale = m.norm().max(mirror.norm());
        let symmetry_defect = if scale == 0.0 {
            0.0
        } else {
            (mirror - m.conjugate()).norm() / scale
        };
        let finite = m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        FrequencyDiagnostics {
            index: j,
            lambda: grid.nodes()[j],
            hermitian_defect: if finite { hermitian_defect(m) } else { f64::NAN },
            min_eigenvalue: if finite {
                hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
            } else {
                f64::NAN
            },
            symmetry_defect,
        }
    });
    for d in &per_frequency {
        let m = f.sample(d.index);
        let norm = m.norm();
        if !d.hermitian_defect.is_finite() {
            violations.push(Violation {
                index: d.index,
                lambda: d.lambda,
                kind: SampleViolation::NotFinite,
                value: f64::NAN,
            });
            continue;
        }
        if d.hermitian_defect > HERMITIAN_TOL {
            violations.push(Violation {
                index: d.index,
                lambda: d.lambda,
                kind: SampleViolation::NotHermitian,
                value: d.hermitian_defect,
            });
        }
        if d.min_eigenvalue < -PSD_TOL * norm {
            violations.push(Violation {
                index: d.index,
                lambda: d.lambda,
                kind: SampleViolation::NotPositiveSemidefinite,
                value: d.min_eigenvalue,
            });
        }
        if d.symmetry_defect > SYMMETRY_TOL {
            violations.push(Violation {
                index: d.index,
                lambda: d.lambda,
                kind: SampleViolation::NotConjugateSymmetric,
                value: d.symmetry_defect,
            });
        }
    }
    let fold = |init: f64, pick: fn(&FrequencyDiagnostics) -> f64, max: bool| {
        per_frequency.iter().map(pick).fold(init, |a, b| if max { a.max(b) } else { a.min(b) })
    };
    ValidationReport {
        pass: violations.is_empty(),
        max_hermitian_defect: fold(0.0, |d| d.hermitian_defect, true),
        min_eigenvalue: fold(f64::INFINITY, |d| d.min_eigenvalue, false),
        max_symmetry_defect: fold(0.0, |d| d.symmetry_defect, true),
        violations,
        per_frequency,
    }
}

/// Per-frequency inverse of F + G, failing on numerically singular samples.
pub fn inverse_sum(
    f: &SpectralDensity,
    g: &SpectralDensity,
    grid: &FrequencyGrid,
) -> Result<Vec<CMatrix>> {
    f.check_compatible(g)?;
    f.check_grid(grid)?;
    let out: Vec<Result<CMatrix>> = crate::par::map_indices(f.len(), |j| {
        let s = f.sample(j) + g.sample(j);
        invert_checked(&s, j, grid.nodes()[j])
    });
    out.into_iter().collect()
}

pub const SINGULAR_TOL: f64 = 1e-12;

pub(crate) fn invert_checked(s: &CMatrix, index: usize, lambda: f64) -> Result<CMatrix> {
    let min = if s.nrows() == 1 {
        s[(0, 0)].re
    } else {
        hermitian_eigenvalues(s)[0]
    };
    if !(min > SINGULAR_TOL) {
        return Err(Error::SingularDensity {
            index,
            lambda,
            min_eigenvalue: min,
        });
    }
    if s.nrows() == 1 {
        return Ok(CMatrix::from_element(1, 1, ONE / s[(0, 0)].re));
    }
    crate::linalg::hermitian_inverse(s).ok_or(Error::SingularDensity {
        index,
        lambda,
        min_eigenvalue: min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::re;
    use num_complex::Complex64;

    fn grid() -> FrequencyGrid {
        FrequencyGrid::new(4.0, 41).unwrap()
    }

    #[test]
    fn identity_passes() {
        let g = grid();
        let r = SpectralDensity::identity(&g, 2).validate(&g);
        assert!(r.pass);
        assert_eq!(r.max_hermitian_defect, 0.0);
        assert_eq!(r.max_symmetry_defect, 0.0);
    }

    #[test]
    fn non_hermitian_fails() {
        let g = grid();
        let mut f = SpectralDensity::identity(&g, 2);
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = Complex64::new(0.0, 1.0);
        m[(1, 0)] = Complex64::new(0.0, 1.0);
        f.samples[7] = m;
        let r = f.validate(&g);
        assert!(!r.pass);
        assert!(r.per_frequency[7].hermitian_defect > 0.0);
        assert!(r
            .violations
            .iter()
            .any(|v| v.index == 7 && v.kind == SampleViolation::NotHermitian));
    }

    #[test]
    fn negative_eigenvalue_fails() {
        let g = grid();
        let mut f = SpectralDensity::identity(&g, 2);
        let m = CMatrix::from_diagonal(&crate::linalg::CVector::from_vec(vec![re(1.0), re(-0.5)]));
        f.samples[20] = m;
        let r = f.validate(&g);
        assert!(!r.pass);
        assert!((r.per_frequency[20].min_eigenvalue + 0.5).abs() < 1e-14);
        assert!(r
            .violations
            .iter()
            .any(|v| v.index == 20 && v.kind == SampleViolation::NotPositiveSemidefinite));
    }

    #[test]
    fn asymmetric_in_frequency_fails() {
        let g = grid();
        let f = SpectralDensity::scalar(&g, |l| 1.0 + 0.1 * l);
        let r = f.validate(&g);
        assert!(!r.pass);
        assert!(r
            .violations
            .iter()
            .all(|v| v.kind == SampleViolation::NotConjugateSymmetric));
    }

    #[test]
    fn evaluate_interpolates() {
        let g = grid();
        let f = SpectralDensity::scalar(&g, |l| l * l);
        let mid = 0.5 * (g.nodes()[3] + g.nodes()[4]);
        let expect = 0.5 * (g.nodes()[3].powi(2) + g.nodes()[4].powi(2));
        assert!((f.evaluate(&g, mid)[(0, 0)].re - expect).abs() < 1e-12);
        assert_eq!(f.evaluate(&g, 10.0)[(0, 0)].re, 0.0);
    }

    #[test]
    fn singular_sum_is_reported() {
        let g = grid();
        let f = SpectralDensity::scalar(&g, |l| if l.abs() < 1e-12 { 0.0 } else { 1.0 });
        let z = SpectralDensity::zeros(&g, 1);
        match inverse_sum(&f, &z, &g) {
            Err(Error::SingularDensity { index, .. }) => assert_eq!(index, g.zero_index()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
