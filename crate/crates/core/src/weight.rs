use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::missing::MissingSet;

/// Named closed-form profiles for a(t).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expression {
    Zero,
    Ones,
    /// sin²(πt)
    Sin2,
    /// t
    Linear,
}

impl Expression {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Expression::Zero => 0.0,
            Expression::Ones => 1.0,
            Expression::Sin2 => (PI * t).sin().powi(2),
            Expression::Linear => t,
        }
    }
}

/// JSON description of a weight function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Expression {
        expression: Expression,
        /// Per-component factors; defaults to all ones.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<Vec<f64>>,
    },
    /// One T-vector per node of the missing set.
    Values { values: Vec<Vec<f64>> },
}

impl WeightSpec {
    pub fn ones() -> Self {
        WeightSpec::Expression {
            expression: Expression::Ones,
            scale: None,
        }
    }

    pub fn build(&self, set: &MissingSet, dim: usize) -> Result<WeightFunction> {
        match self {
            WeightSpec::Expression { expression, scale } => {
                let scale = scale.clone().unwrap_or_else(|| vec![1.0; dim]);
                if scale.len() != dim {
                    return Err(Error::Model(format!(
                        "weight scale has {} entries, expected {dim}",
                        scale.len()
                    )));
                }
                Ok(WeightFunction::from_expression(set, *expression, &scale))
            }
            WeightSpec::Values { values } => {
                if values.len() != set.len() || values.iter().any(|v| v.len() != dim) {
                    return Err(Error::GridMismatch(format!(
                        "weight values must be {} vectors of length {dim}",
                        set.len()
                    )));
                }
                WeightFunction::new(dim, values.concat())
            }
        }
    }
}

/// Vector weight a(t) sampled on the nodes of a [`MissingSet`], node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFunction {
    dim: usize,
    values: Vec<f64>,
    profile: Option<(Expression, Vec<f64>)>,
}

/// The two integrals of the integrability condition on a(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    /// Σ_k Σ_l ∫|a_k(t)| dt
    pub absolute_integral: f64,
    /// Σ_l ∫|t|·‖a(t)‖² dt
    pub time_weighted_energy: f64,
}

impl WeightFunction {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::InvalidArgument("weight length must be a multiple of the dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("weight values must be finite".into()));
        }
        Ok(WeightFunction {
            dim,
            values,
            profile: None,
        })
    }

    pub fn from_expression(set: &MissingSet, expression: Expression, scale: &[f64]) -> Self {
        let values = set
            .times()
            .iter()
            .flat_map(|&t| {
                let v = expression.eval(t);
                scale.iter().map(move |s| s * v)
            })
            .collect();
        WeightFunction {
            dim: scale.len(),
            values,
            profile: Some((expression, scale.to_vec())),
        }
    }

    pub fn from_fn(set: &MissingSet, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(set.len() * dim);
        for &t in set.times() {
            let v = f(t);
            if v.len() != dim {
                return Err(Error::InvalidArgument("weight function returned wrong dimension".into()));
            }
            values.extend(v);
        }
        Self::new(dim, values)
    }

    pub fn ones(set: &MissingSet, dim: usize) -> Self {
        Self::from_expression(set, Expression::Ones, &vec![1.0; dim])
    }

    pub fn zeros(set: &MissingSet, dim: usize) -> Self {
        Self::from_expression(set, Expression::Zero, &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        WeightFunction {
            dim: self.dim,
            values: self.values.iter().map(|v| v * c).collect(),
            profile: self
                .profile
                .as_ref()
                .map(|(e, s)| (*e, s.iter().map(|v| v * c).collect())),
        }
    }

    pub fn add(&self, other: &WeightFunction) -> Result<Self> {
        if self.values.len() != other.values.len() || self.dim != other.dim {
            return Err(Error::GridMismatch("weights live on different nodes".into()));
        }
        Self::new(
            self.dim,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn check_set(&self, set: &MissingSet) -> Result<()> {
        if self.n_nodes() != set.len() {
            return Err(Error::GridMismatch(format!(
                "weight has {} nodes, missing set has {}",
                self.n_nodes(),
                set.len()
            )));
        }
        Ok(())
    }

    /// √(Σ_l ∫‖a(t)‖² dt) by the node quadrature.
    pub fn l2_norm(&self, set: &MissingSet) -> f64 {
        set.weights()
            .iter()
            .enumerate()
            .map(|(k, w)| w * self.node(k).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn integrability(&self, set: &MissingSet) -> IntegrabilityReport {
        let mut abs = 0.0;
        let mut energy = 0.0;
        for (k, (&t, &w)) in set.times().iter().zip(set.weights()).enumerate() {
            let a = self.node(k);
            abs += w * a.iter().map(|v| v.abs()).sum::<f64>();
            energy += w * t.abs() * a.iter().map(|v| v * v).sum::<f64>();
        }
        IntegrabilityReport {
            absolute_integral: abs,
            time_weighted_energy: energy,
        }
    }

    /// Value at an arbitrary time in the set: closed form when known, else linear interpolation.
    pub fn eval_at(&self, set: &MissingSet, t: f64) -> Vec<f64> {
        if let Some((e, scale)) = &self.profile {
            let v = e.eval(t);
            return scale.iter().map(|s| s * v).collect();
        }
        let times = set.times();
        let mut best: Option<(usize, usize, f64)> = None;
        for k in 0..times.len().saturating_sub(1) {
            if set.interval_of(k) != set.interval_of(k + 1) {
                continue;
            }
            if t >= times[k] - 1e-12 && t <= times[k + 1] + 1e-12 {
                let s = ((t - times[k]) / (times[k + 1] - times[k])).clamp(0.0, 1.0);
                best = Some((k, k + 1, s));
                break;
            }
        }
        match best {
            Some((lo, hi, s)) => self
                .node(lo)
                .iter()
                .zip(self.node(hi))
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect(),
            None => vec![0.0; self.dim],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::FrequencyGrid;
    use crate::missing::{Interval, TimeStep};

    fn set() -> MissingSet {
        MissingSet::new(vec![Interval::new(-1.0, 0.0)], &FrequencyGrid::default(), TimeStep::Matched).unwrap()
    }

    #[test]
    fn integrals_of_constant_weight() {
        let s = set();
        let a = WeightFunction::ones(&s, 2);
        let r = a.integrability(&s);
        assert!((r.absolute_integral - 2.0).abs() < 1e-14);
        // ∫_{-1}^0 |t|·2 dt = 1, trapezoid is exact for a linear integrand
        assert!((r.time_weighted_energy - 1.0).abs() < 1e-14);
        assert!((a.l2_norm(&s) - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn spec_parses_both_forms() {
        let s = set();
        let e: WeightSpec = serde_json::from_str(r#"{"expression":"sin2"}"#).unwrap();
        let a = e.build(&s, 1).unwrap();
        assert!(a.values()[0].abs() < 1e-15);
        let v: WeightSpec = serde_json::from_str(&format!(
            r#"{{"values": {}}}"#,
            serde_json::to_string(&vec![vec![1.0]; s.len()]).unwrap()
        ))
        .unwrap();
        assert_eq!(v.build(&s, 1).unwrap().values(), WeightFunction::ones(&s, 1).values());
        let short: WeightSpec = serde_json::from_str(r#"{"values": [[1.0]]}"#).unwrap();
        assert!(short.build(&s, 1).is_err());
    }

    #[test]
    fn interpolation_between_nodes() {
        let s = set();
        let a = WeightFunction::new(1, s.times().to_vec()).unwrap();
        let v = a.eval_at(&s, -0.31);
        assert!((v[0] + 0.31).abs() < 1e-12);
    }
}
