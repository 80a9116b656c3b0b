//! Admissible density classes and their membership tests on the grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::density::{validate_density, SpectralDensity};
use crate::error::{Error, Result};
use crate::family::DensitySpec;
use crate::grid::FrequencyGrid;
use crate::linalg::{dense_from_pairs, hermitian_eigenvalues, real_trace, CMatrix};

/// Relative tolerance of every membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// How a class constrains a density matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Through Tr X.
    Trace,
    /// Through the diagonal entries x_kk.
    Component,
    /// Through ⟨B, X⟩ = Σ b_ij x_ij.
    Weighted,
    /// Through the whole matrix.
    Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Fixed,
    /// Integral budget only.
    Moment,
    /// (1 − ε)·reference + ε·arbitrary, with an integral budget.
    Contamination,
    /// Pointwise between V and U, with an integral budget.
    Strip,
    /// L₂ ball around a reference.
    Ball,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassKind {
    #[serde(rename = "fixed")]
    Fixed,
    #[serde(rename = "d0-1")]
    TraceMoment,
    #[serde(rename = "d0-2")]
    ComponentMoment,
    #[serde(rename = "d0-3")]
    WeightedMoment,
    #[serde(rename = "d0-4")]
    MatrixMoment,
    #[serde(rename = "deps-1")]
    TraceContamination,
    #[serde(rename = "deps-2")]
    ComponentContamination,
    #[serde(rename = "deps-3")]
    WeightedContamination,
    #[serde(rename = "deps-4")]
    MatrixContamination,
    #[serde(rename = "dvu-1")]
    TraceStrip,
    #[serde(rename = "dvu-2")]
    ComponentStrip,
    #[serde(rename = "dvu-3")]
    WeightedStrip,
    #[serde(rename = "dvu-4")]
    MatrixStrip,
    #[serde(rename = "d2delta-1")]
    TraceBall,
    #[serde(rename = "d2delta-2")]
    ComponentBall,
    #[serde(rename = "d2delta-3")]
    WeightedBall,
    #[serde(rename = "d2delta-4")]
    MatrixBall,
}

impl ClassKind {
    pub fn shape(self) -> Shape {
        use ClassKind::*;
        match self {
            Fixed => Shape::Fixed,
            TraceMoment | ComponentMoment | WeightedMoment | MatrixMoment => Shape::Moment,
            TraceContamination | ComponentContamination | WeightedContamination | MatrixContamination => {
                Shape::Contamination
            }
            TraceStrip | ComponentStrip | WeightedStrip | MatrixStrip => Shape::Strip,
            TraceBall | ComponentBall | WeightedBall | MatrixBall => Shape::Ball,
        }
    }

    pub fn family(self) -> Family {
        use ClassKind::*;
        match self {
            Fixed | MatrixMoment | MatrixContamination | MatrixStrip | MatrixBall => Family::Matrix,
            TraceMoment | TraceContamination | TraceStrip | TraceBall => Family::Trace,
            ComponentMoment | ComponentContamination | ComponentStrip | ComponentBall => Family::Component,
            WeightedMoment | WeightedContamination | WeightedStrip | WeightedBall => Family::Weighted,
        }
    }

    /// Whether the linear maximizer handles this kind.
    pub fn optimizable(self) -> bool {
        self == ClassKind::Fixed || matches!(self.family(), Family::Trace | Family::Component)
    }

    pub fn name(self) -> &'static str {
        use ClassKind::*;
        match self {
            Fixed => "fixed",
            TraceMoment => "d0-1",
            ComponentMoment => "d0-2",
            WeightedMoment => "d0-3",
            MatrixMoment => "d0-4",
            TraceContamination => "deps-1",
            ComponentContamination => "deps-2",
            WeightedContamination => "deps-3",
            MatrixContamination => "deps-4",
            TraceStrip => "dvu-1",
            ComponentStrip => "dvu-2",
            WeightedStrip => "dvu-3",
            MatrixStrip => "dvu-4",
            TraceBall => "d2delta-1",
            ComponentBall => "d2delta-2",
            WeightedBall => "d2delta-3",
            MatrixBall => "d2delta-4",
        }
    }
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type PairMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_ij: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<PairMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<PairMatrix>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p_matrix: Option<PairMatrix>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q_matrix: Option<PairMatrix>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassReferences {
    #[serde(rename = "G1", default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<DensitySpec>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<DensitySpec>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<DensitySpec>,
    /// The single member of a fixed class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySpec>,
}

/// JSON description of a class: `{kind, params, references}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub kind: ClassKind,
    #[serde(default)]
    pub params: ClassParams,
    #[serde(default)]
    pub references: ClassReferences,
}

impl ClassSpec {
    pub fn fixed(density: DensitySpec) -> Self {
        ClassSpec {
            kind: ClassKind::Fixed,
            params: ClassParams::default(),
            references: ClassReferences {
                density: Some(density),
                ..ClassReferences::default()
            },
        }
    }

    pub fn build(&self, grid: &FrequencyGrid, dim: usize, fold: bool) -> Result<DensityClass> {
        DensityClass::from_spec(self, grid, dim, fold)
    }
}

/// Budget of an integral constraint, by family.
#[derive(Clone, Debug, PartialEq)]
pub enum Budget {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(CMatrix),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Radius {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub enum Constraint {
    Fixed(SpectralDensity),
    Moment {
        budget: Budget,
    },
    Contamination {
        epsilon: f64,
        reference: SpectralDensity,
        budget: Budget,
    },
    Strip {
        lower: SpectralDensity,
        upper: SpectralDensity,
        budget: Budget,
    },
    Ball {
        reference: SpectralDensity,
        radius: Radius,
    },
}

/// A class of admissible spectral densities built on a grid.
#[derive(Clone, Debug)]
pub struct DensityClass {
    kind: ClassKind,
    dim: usize,
    /// B₁ or B₂ for the weighted family.
    weight: Option<CMatrix>,
    constraint: Constraint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassViolation {
    pub constraint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Relative defect.
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub member: bool,
    pub max_defect: f64,
    pub violations: Vec<ClassViolation>,
}

fn need<T: Clone>(v: &Option<T>, name: &str, kind: ClassKind) -> Result<T> {
    v.clone()
        .ok_or_else(|| Error::Model(format!("class {kind} requires parameter {name}")))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn pd_matrix(name: &str, pairs: &PairMatrix, dim: usize) -> Result<CMatrix> {
    let m = dense_from_pairs(pairs)
        .filter(|m| m.nrows() == dim)
        .ok_or_else(|| Error::Model(format!("{name} must be a {dim}x{dim} matrix")))?;
    if crate::linalg::hermitian_defect(&m) > 1e-10 {
        return Err(Error::InvalidArgument(format!("{name} must be Hermitian")));
    }
    if hermitian_eigenvalues(&m)[0] <= 0.0 {
        return Err(Error::InvalidArgument(format!("{name} must be positive definite")));
    }
    Ok(m)
}

fn positive_vec(name: &str, v: &[f64], dim: usize) -> Result<Vec<f64>> {
    if v.len() != dim {
        return Err(Error::Model(format!("{name} must have {dim} entries")));
    }
    for &x in v {
        positive(name, x)?;
    }
    Ok(v.to_vec())
}

/// Σ b_ij x_ij, real for Hermitian B and X.
pub fn weighted_inner(b: &CMatrix, x: &CMatrix) -> f64 {
    b.iter().zip(x.iter()).map(|(p, q)| (p * q).re).sum()
}

fn total_measure(grid: &FrequencyGrid) -> f64 {
    (0..grid.len()).map(|j| grid.measure(j)).sum()
}

impl DensityClass {
    pub fn from_spec(spec: &ClassSpec, grid: &FrequencyGrid, dim: usize, fold: bool) -> Result<Self> {
        let kind = spec.kind;
        let p = &spec.params;
        let r = &spec.references;
        let reference = |d: &Option<DensitySpec>, name: &str| -> Result<SpectralDensity> {
            need(d, name, kind)?.build(grid, dim, fold)
        };
        let weight = match kind {
            ClassKind::WeightedMoment | ClassKind::WeightedStrip => {
                Some(pd_matrix("b1", &need(&p.b1, "b1", kind)?, dim)?)
            }
            ClassKind::WeightedContamination | ClassKind::WeightedBall => {
                Some(pd_matrix("b2", &need(&p.b2, "b2", kind)?, dim)?)
            }
            _ => None,
        };
        let f_budget = || -> Result<Budget> {
            Ok(match kind.family() {
                Family::Trace | Family::Weighted => Budget::Scalar(positive("p", need(&p.p, "p", kind)?)?),
                Family::Component => Budget::Vector(positive_vec("p_k", &need(&p.p_k, "p_k", kind)?, dim)?),
                Family::Matrix => Budget::Matrix(pd_matrix("P", &need(&p.p_matrix, "P", kind)?, dim)?),
            })
        };
        let g_budget = || -> Result<Budget> {
            Ok(match kind.family() {
                Family::Trace | Family::Weighted => Budget::Scalar(positive("q", need(&p.q, "q", kind)?)?),
                Family::Component => Budget::Vector(positive_vec("q_k", &need(&p.q_k, "q_k", kind)?, dim)?),
                Family::Matrix => Budget::Matrix(pd_matrix("Q", &need(&p.q_matrix, "Q", kind)?, dim)?),
            })
        };
        let constraint = match kind.shape() {
            Shape::Fixed => Constraint::Fixed(reference(&r.density, "density")?),
            Shape::Moment => Constraint::Moment { budget: f_budget()? },
            Shape::Contamination => {
                let epsilon = need(&p.epsilon, "epsilon", kind)?;
                if !(0.0..=1.0).contains(&epsilon) {
                    return Err(Error::InvalidArgument(format!(
                        "epsilon must lie in [0, 1], got {epsilon}"
                    )));
                }
                Constraint::Contamination {
                    epsilon,
                    reference: reference(&r.g1, "G1")?,
                    budget: g_budget()?,
                }
            }
            Shape::Strip => {
                let lower = reference(&r.v, "V")?;
                let upper = reference(&r.u, "U")?;
                for j in 0..grid.len() {
                    let gap = upper.sample(j) - lower.sample(j);
                    let scale = upper.sample(j).norm().max(1e-300);
                    if hermitian_eigenvalues(&gap)[0] < -MEMBERSHIP_TOL * scale {
                        return Err(Error::InvalidArgument(format!(
                            "V exceeds U at frequency index {j} (lambda = {})",
                            grid.nodes()[j]
                        )));
                    }
                }
                Constraint::Strip {
                    lower,
                    upper,
                    budget: f_budget()?,
                }
            }
            Shape::Ball => {
                let radius = match kind.family() {
                    Family::Trace | Family::Weighted => {
                        Radius::Scalar(positive("delta", need(&p.delta, "delta", kind)?)?)
                    }
                    Family::Component => {
                        Radius::Vector(positive_vec("delta_k", &need(&p.delta_k, "delta_k", kind)?, dim)?)
                    }
                    Family::Matrix => {
                        let d = need(&p.delta_ij, "delta_ij", kind)?;
                        if d.len() != dim || d.iter().any(|row| row.len() != dim) {
                            return Err(Error::Model(format!("delta_ij must be {dim}x{dim}")));
                        }
                        for row in &d {
                            for &x in row {
                                positive("delta_ij", x)?;
                            }
                        }
                        Radius::Matrix(d)
                    }
                };
                Constraint::Ball {
                    reference: reference(&r.g1, "G1")?,
                    radius,
                }
            }
        };
        Ok(DensityClass {
            kind,
            dim,
            weight,
            constraint,
        })
    }

    /// The singleton class {X}.
    pub fn fixed(x: SpectralDensity) -> Self {
        DensityClass {
            kind: ClassKind::Fixed,
            dim: x.dim(),
            weight: None,
            constraint: Constraint::Fixed(x),
        }
    }

    pub fn kind(&self) -> ClassKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> Option<&CMatrix> {
        self.weight.as_ref()
    }

    pub fn constraint(&self) -> &Constraint {
        &self.constraint
    }

    /// True for the singleton class {0}.
    pub fn is_zero(&self) -> bool {
        matches!(&self.constraint, Constraint::Fixed(x) if x.is_zero())
    }

    /// The scalar or per-component quantities the family constrains.
    pub fn components(&self, x: &CMatrix) -> Vec<f64> {
        match self.kind.family() {
            Family::Trace => vec![real_trace(x)],
            Family::Weighted => vec![weighted_inner(self.weight.as_ref().expect("weighted class"), x)],
            Family::Component | Family::Matrix => (0..self.dim).map(|k| x[(k, k)].re).collect(),
        }
    }

    fn integral_components(&self, x: &SpectralDensity, grid: &FrequencyGrid) -> Vec<f64> {
        let mut acc = vec![0.0; self.components(x.sample(0)).len()];
        for j in 0..grid.len() {
            for (a, v) in acc.iter_mut().zip(self.components(x.sample(j))) {
                *a += grid.measure(j) * v;
            }
        }
        acc
    }

    /// Evaluates every defining equality and inequality by quadrature.
    pub fn membership(&self, x: &SpectralDensity, grid: &FrequencyGrid) -> MembershipReport {
        let mut violations = Vec::new();
        if x.check_grid(grid).is_err() || x.dim() != self.dim {
            violations.push(ClassViolation {
                constraint: "grid or dimension mismatch".into(),
                index: None,
                lambda: None,
                defect: f64::INFINITY,
            });
            return finish(violations);
        }
        let v = validate_density(x, grid);
        if !v.pass {
            for viol in v.violations.iter().take(8) {
                violations.push(ClassViolation {
                    constraint: format!("density {:?}", viol.kind),
                    index: Some(viol.index),
                    lambda: Some(viol.lambda),
                    defect: viol.value.abs(),
                });
            }
        }
        let nodes = grid.nodes();
        match &self.constraint {
            Constraint::Fixed(r) => {
                let scale = r.samples().iter().fold(0.0f64, |m, s| m.max(s.norm())).max(1e-300);
                for j in 0..grid.len() {
                    let d = (x.sample(j) - r.sample(j)).norm() / scale;
                    if d > MEMBERSHIP_TOL {
                        violations.push(pointwise("equal to the fixed density", j, nodes[j], d));
                    }
                }
            }
            Constraint::Moment { budget } => self.check_budget(x, grid, budget, &mut violations),
            Constraint::Contamination {
                epsilon,
                reference,
                budget,
            } => {
                let floor = reference.scaled(1.0 - epsilon);
                if self.kind.family() == Family::Matrix {
                    let scale = max_norm(&[x, &floor]);
                    for j in 0..grid.len() {
                        let diff = x.sample(j) - floor.sample(j);
                        let d = if *epsilon == 0.0 {
                            diff.norm() / scale
                        } else {
                            (-hermitian_eigenvalues(&diff)[0]).max(0.0) / scale
                        };
                        if d > MEMBERSHIP_TOL {
                            violations.push(pointwise("above (1 - epsilon) G1", j, nodes[j], d));
                        }
                    }
                } else {
                    let scale = self.component_scale(&[x, &floor]);
                    for j in 0..grid.len() {
                        for (xv, fv) in self.components(x.sample(j)).iter().zip(self.components(floor.sample(j))) {
                            let d = if *epsilon == 0.0 {
                                (xv - fv).abs() / scale
                            } else {
                                (fv - xv).max(0.0) / scale
                            };
                            if d > MEMBERSHIP_TOL {
                                violations.push(pointwise("above (1 - epsilon) G1", j, nodes[j], d));
                            }
                        }
                    }
                }
                self.check_budget(x, grid, budget, &mut violations);
            }
            Constraint::Strip { lower, upper, budget } => {
                if self.kind.family() == Family::Matrix {
                    let scale = max_norm(&[x, upper]);
                    for j in 0..grid.len() {
                        let lo = -hermitian_eigenvalues(&(x.sample(j) - lower.sample(j)))[0];
                        let hi = -hermitian_eigenvalues(&(upper.sample(j) - x.sample(j)))[0];
                        if lo.max(0.0) / scale > MEMBERSHIP_TOL {
                            violations.push(pointwise("above V", j, nodes[j], lo / scale));
                        }
                        if hi.max(0.0) / scale > MEMBERSHIP_TOL {
                            violations.push(pointwise("below U", j, nodes[j], hi / scale));
                        }
                    }
                } else {
                    let scale = self.component_scale(&[x, upper]);
                    for j in 0..grid.len() {
                        let xs = self.components(x.sample(j));
                        let ls = self.components(lower.sample(j));
                        let us = self.components(upper.sample(j));
                        for k in 0..xs.len() {
                            let lo = (ls[k] - xs[k]) / scale;
                            let hi = (xs[k] - us[k]) / scale;
                            if lo > MEMBERSHIP_TOL {
                                violations.push(pointwise("above V", j, nodes[j], lo));
                            }
                            if hi > MEMBERSHIP_TOL {
                                violations.push(pointwise("below U", j, nodes[j], hi));
                            }
                        }
                    }
                }
                self.check_budget(x, grid, budget, &mut violations);
            }
            Constraint::Ball { reference, radius } => {
                let dist = self.ball_distances(x, reference, grid);
                let radii: Vec<f64> = match radius {
                    Radius::Scalar(d) => vec![*d],
                    Radius::Vector(d) => d.clone(),
                    Radius::Matrix(d) => d.iter().flatten().copied().collect(),
                };
                for (dv, rv) in dist.iter().zip(&radii) {
                    let d = (dv - rv) / rv;
                    if d > MEMBERSHIP_TOL {
                        violations.push(ClassViolation {
                            constraint: "within the L2 ball".into(),
                            index: None,
                            lambda: None,
                            defect: d,
                        });
                    }
                }
            }
        }
        finish(violations)
    }

    /// (1/2π)∫|·|² of the constrained quantities of X − G1 (row-major entries for the matrix family).
    pub fn ball_distances(&self, x: &SpectralDensity, reference: &SpectralDensity, grid: &FrequencyGrid) -> Vec<f64> {
        let t = self.dim;
        let n = match self.kind.family() {
            Family::Trace | Family::Weighted => 1,
            Family::Component => t,
            Family::Matrix => t * t,
        };
        let mut acc = vec![0.0; n];
        for j in 0..grid.len() {
            let diff = x.sample(j) - reference.sample(j);
            let mu = grid.measure(j);
            match self.kind.family() {
                Family::Matrix => {
                    for i in 0..t {
                        for k in 0..t {
                            acc[i * t + k] += mu * diff[(i, k)].norm_sqr();
                        }
                    }
                }
                _ => {
                    for (a, v) in acc.iter_mut().zip(self.components(&diff)) {
                        *a += mu * v * v;
                    }
                }
            }
        }
        acc
    }

    fn component_scale(&self, xs: &[&SpectralDensity]) -> f64 {
        let mut m = 0.0f64;
        for x in xs {
            for s in x.samples() {
                for v in self.components(s) {
                    m = m.max(v.abs());
                }
            }
        }
        m.max(1e-300)
    }

    fn check_budget(&self, x: &SpectralDensity, grid: &FrequencyGrid, budget: &Budget, out: &mut Vec<ClassViolation>) {
        let push = |out: &mut Vec<ClassViolation>, d: f64| {
            if d > MEMBERSHIP_TOL {
                out.push(ClassViolation {
                    constraint: "integral budget".into(),
                    index: None,
                    lambda: None,
                    defect: d,
                });
            }
        };
        match budget {
            Budget::Scalar(b) => {
                let v = self.integral_components(x, grid)[0];
                push(out, (v - b).abs() / b.abs());
            }
            Budget::Vector(b) => {
                let v = self.integral_components(x, grid);
                for (vk, bk) in v.iter().zip(b) {
                    push(out, (vk - bk).abs() / bk.abs());
                }
            }
            Budget::Matrix(b) => {
                let v = x.integral(grid);
                push(out, (v - b).norm() / b.norm());
            }
        }
    }

    /// A deterministic interior member: uniform allocation of the free budget.
    pub fn center(&self, grid: &FrequencyGrid) -> Result<SpectralDensity> {
        let t = self.dim;
        let total = total_measure(grid);
        let id = CMatrix::identity(t, t);
        // Matrix whose constrained quantities are all one.
        let unit = match self.kind.family() {
            Family::Trace => id.scale(1.0 / t as f64),
            Family::Weighted => id.scale(1.0 / crate::linalg::real_trace(self.weight.as_ref().expect("weighted class"))),
            Family::Component | Family::Matrix => id.clone(),
        };
        let spread = |excess: &Budget| -> Result<SpectralDensity> {
            let m = match excess {
                Budget::Scalar(e) => unit.scale(e / total),
                Budget::Vector(e) => CMatrix::from_diagonal(&crate::linalg::CVector::from_iterator(
                    t,
                    e.iter().map(|v| crate::linalg::re(v / total)),
                )),
                Budget::Matrix(e) => e.scale(1.0 / total),
            };
            SpectralDensity::constant(grid, &m)
        };
        match &self.constraint {
            Constraint::Fixed(x) => Ok(x.clone()),
            Constraint::Ball { reference, .. } => Ok(reference.clone()),
            Constraint::Moment { budget } => spread(budget),
            Constraint::Contamination {
                epsilon,
                reference,
                budget,
            } => {
                let floor = reference.scaled(1.0 - epsilon);
                let excess = self.excess(&floor, budget, grid)?;
                if *epsilon == 0.0 {
                    self.require_tight(&excess)?;
                    return Ok(floor);
                }
                floor.add(&spread(&excess)?)
            }
            Constraint::Strip { lower, upper, budget } => {
                let excess = self.excess(lower, budget, grid)?;
                let room = self.excess(lower, &self.integral_as_budget(upper, grid), grid)?;
                match (&excess, &room) {
                    (Budget::Scalar(e), Budget::Scalar(r)) => {
                        let s = fraction(*e, *r)?;
                        lower.lerp(upper, s)
                    }
                    (Budget::Vector(e), Budget::Vector(r)) => {
                        let s = e
                            .iter()
                            .zip(r)
                            .map(|(e, r)| fraction(*e, *r))
                            .collect::<Result<Vec<f64>>>()?;
                        let d = CMatrix::from_diagonal(&crate::linalg::CVector::from_iterator(
                            t,
                            s.iter().map(|v| crate::linalg::re(v.sqrt())),
                        ));
                        Ok(lower.map(|j, l| l + &d * (upper.sample(j) - l) * &d))
                    }
                    _ => Err(Error::UnsupportedClass(format!(
                        "{}: no interior member construction",
                        self.kind
                    ))),
                }
            }
        }
    }

    fn integral_as_budget(&self, x: &SpectralDensity, grid: &FrequencyGrid) -> Budget {
        match self.kind.family() {
            Family::Trace | Family::Weighted => Budget::Scalar(self.integral_components(x, grid)[0]),
            Family::Component => Budget::Vector(self.integral_components(x, grid)),
            Family::Matrix => Budget::Matrix(x.integral(grid)),
        }
    }

    /// Budget left after the floor density; errors when negative.
    pub(crate) fn excess(&self, floor: &SpectralDensity, budget: &Budget, grid: &FrequencyGrid) -> Result<Budget> {
        let used = self.integral_as_budget(floor, grid);
        let check = |e: f64, b: f64| -> Result<f64> {
            if e < -MEMBERSHIP_TOL * b.abs().max(1.0) {
                Err(Error::InfeasibleClass(format!(
                    "{}: budget {b} is below the integral of the lower bound {}",
                    self.kind,
                    b - e
                )))
            } else {
                Ok(e.max(0.0))
            }
        };
        Ok(match (budget, used) {
            (Budget::Scalar(b), Budget::Scalar(u)) => Budget::Scalar(check(b - u, *b)?),
            (Budget::Vector(b), Budget::Vector(u)) => Budget::Vector(
                b.iter().zip(&u).map(|(b, u)| check(b - u, *b)).collect::<Result<Vec<_>>>()?,
            ),
            (Budget::Matrix(b), Budget::Matrix(u)) => {
                let e = b - u;
                if hermitian_eigenvalues(&e)[0] < -MEMBERSHIP_TOL * b.norm() {
                    return Err(Error::InfeasibleClass(format!(
                        "{}: matrix budget minus the lower bound is not positive semidefinite",
                        self.kind
                    )));
                }
                Budget::Matrix(e)
            }
            _ => unreachable!("budget and family agree"),
        })
    }

    /// With ε = 0 the budget must equal the reference integral.
    pub(crate) fn require_tight(&self, excess: &Budget) -> Result<()> {
        let slack = match excess {
            Budget::Scalar(e) => e.abs(),
            Budget::Vector(e) => e.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Budget::Matrix(e) => e.norm(),
        };
        let scale = match &self.constraint {
            Constraint::Contamination { budget: Budget::Scalar(b), .. } => b.abs(),
            Constraint::Contamination { budget: Budget::Vector(b), .. } => b.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            Constraint::Contamination { budget: Budget::Matrix(b), .. } => b.norm(),
            _ => 1.0,
        };
        if slack > MEMBERSHIP_TOL * scale.max(1e-300) {
            return Err(Error::InfeasibleClass(format!(
                "{}: with epsilon = 0 the budget must equal the integral of (1 - epsilon) G1",
                self.kind
            )));
        }
        Ok(())
    }

    /// A random member: the center mixed with extreme points of random linear objectives.
    pub fn random_member<R: Rng>(&self, grid: &FrequencyGrid, rng: &mut R) -> Result<SpectralDensity> {
        if !self.kind.optimizable() {
            return Err(Error::UnsupportedClass(format!(
                "{}: random members need the linear maximizer",
                self.kind
            )));
        }
        if let Constraint::Fixed(x) = &self.constraint {
            return Ok(x.clone());
        }
        const VERTICES: usize = 3;
        let mut out = self.center(grid)?;
        let mut weights: Vec<f64> = (0..=VERTICES).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        out = out.scaled(weights[0]);
        for w in &weights[1..] {
            let objective = super::linear::random_weights(grid, self.dim, rng);
            let v = super::linear::maximize_linear_weights(self, &objective, grid)?;
            out = out.add(&v.scaled(*w))?;
        }
        Ok(out)
    }
}

fn fraction(e: f64, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return if e <= MEMBERSHIP_TOL {
            Ok(0.0)
        } else {
            Err(Error::InfeasibleClass("strip has no room for the budget".into()))
        };
    }
    let s = e / r;
    if s > 1.0 + MEMBERSHIP_TOL {
        return Err(Error::InfeasibleClass(format!(
            "budget exceeds the integral of U by a factor {s}"
        )));
    }
    Ok(s.min(1.0))
}

fn max_norm(xs: &[&SpectralDensity]) -> f64 {
    xs.iter()
        .flat_map(|x| x.samples().iter().map(|s| s.norm()))
        .fold(0.0f64, f64::max)
        .max(1e-300)
}

fn pointwise(what: &str, j: usize, lambda: f64, defect: f64) -> ClassViolation {
    ClassViolation {
        constraint: what.into(),
        index: Some(j),
        lambda: Some(lambda),
        defect,
    }
}

fn finish(violations: Vec<ClassViolation>) -> MembershipReport {
    MembershipReport {
        member: violations.is_empty(),
        max_defect: violations.iter().fold(0.0, |m: f64, v| m.max(v.defect)),
        violations,
    }
}

/// Membership test as a free function.
pub fn project_membership(class: &DensityClass, x: &SpectralDensity, grid: &FrequencyGrid) -> MembershipReport {
    class.membership(x, grid)
}
