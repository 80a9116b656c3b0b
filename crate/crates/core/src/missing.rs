use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::FrequencyGrid;

const ALIGN_TOL: f64 = 1e-9;

/// Closed interval [left, right] of unobserved times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(p: [f64; 2]) -> Self {
        Interval {
            left: p[0],
            right: p[1],
        }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.left, i.right]
    }
}

impl Interval {
    pub fn new(left: f64, right: f64) -> Self {
        Interval { left, right }
    }

    /// Interval [−offset − length, −offset].
    pub fn from_offsets(offset: f64, length: f64) -> Self {
        Interval {
            left: -offset - length,
            right: -offset,
        }
    }

    pub fn length(&self) -> f64 {
        self.right - self.left
    }
}

/// How the time step on the missing set is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    /// Largest step not exceeding π/Λ on a lattice shared by all interval endpoints.
    #[default]
    Matched,
    /// Requested step; each interval gets round(length/step) panels.
    Fixed(f64),
}

/// Union of disjoint closed intervals with a composite trapezoid rule on each.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingSet {
    intervals: Vec<Interval>,
    times: Vec<f64>,
    weights: Vec<f64>,
    interval_of: Vec<usize>,
    boundary: Vec<bool>,
    time_step: f64,
    lattice: Option<f64>,
}

impl MissingSet {
    pub fn new(intervals: Vec<Interval>, grid: &FrequencyGrid, step: TimeStep) -> Result<Self> {
        let intervals = Self::check_intervals(intervals)?;
        match step {
            TimeStep::Matched => {
                let limit = PI / grid.lambda_max();
                match common_unit(&intervals) {
                    Some(unit) => {
                        let k = (unit / limit - ALIGN_TOL).ceil().max(1.0);
                        let h = unit / k;
                        let panels = intervals
                            .iter()
                            .map(|i| (i.length() / h).round().max(1.0) as usize)
                            .collect::<Vec<_>>();
                        Self::build(intervals, &panels, Some(h))
                    }
                    None => {
                        let panels = intervals
                            .iter()
                            .map(|i| (i.length() / limit).ceil().max(1.0) as usize)
                            .collect::<Vec<_>>();
                        Self::build(intervals, &panels, None)
                    }
                }
            }
            TimeStep::Fixed(h) => Self::with_step(intervals, h),
        }
    }

    pub fn with_step(intervals: Vec<Interval>, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {step}")));
        }
        let intervals = Self::check_intervals(intervals)?;
        let panels: Vec<usize> = intervals
            .iter()
            .map(|i| (i.length() / step).round().max(1.0) as usize)
            .collect();
        let mut set = Self::build(intervals, &panels, None)?;
        if set
            .times
            .iter()
            .all(|t| ((t / step) - (t / step).round()).abs() < 1e-7)
        {
            set.lattice = Some(step);
        }
        Ok(set)
    }

    pub fn with_panels(intervals: Vec<Interval>, panels: &[usize]) -> Result<Self> {
        let intervals = Self::check_intervals(intervals)?;
        if panels.len() != intervals.len() || panels.contains(&0) {
            return Err(Error::InvalidArgument("one positive panel count per interval required".into()));
        }
        Self::build(intervals, panels, None)
    }

    fn check_intervals(mut intervals: Vec<Interval>) -> Result<Vec<Interval>> {
        if intervals.is_empty() {
            return Err(Error::InvalidArgument("missing set needs at least one interval".into()));
        }
        for i in &intervals {
            if !(i.left.is_finite() && i.right.is_finite() && i.right > i.left) {
                return Err(Error::InvalidArgument(format!(
                    "interval [{}, {}] must satisfy right > left",
                    i.left, i.right
                )));
            }
            if i.right > 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "interval [{}, {}] must end at or before 0",
                    i.left, i.right
                )));
            }
        }
        intervals.sort_by(|a, b| a.left.total_cmp(&b.left));
        for w in intervals.windows(2) {
            if w[1].left <= w[0].right {
                return Err(Error::InvalidArgument(format!(
                    "intervals [{}, {}] and [{}, {}] overlap",
                    w[0].left, w[0].right, w[1].left, w[1].right
                )));
            }
        }
        Ok(intervals)
    }

    fn build(intervals: Vec<Interval>, panels: &[usize], lattice: Option<f64>) -> Result<Self> {
        let mut times = Vec::new();
        let mut weights = Vec::new();
        let mut interval_of = Vec::new();
        let mut boundary = Vec::new();
        let mut time_step: f64 = 0.0;
        for (l, (iv, &k)) in intervals.iter().zip(panels).enumerate() {
            let h = iv.length() / k as f64;
            time_step = time_step.max(h);
            for i in 0..=k {
                let t = match lattice {
                    Some(u) => ((iv.left + i as f64 * h) / u).round() * u,
                    None => iv.left + i as f64 * h,
                };
                times.push(if i == k { iv.right } else { t });
                weights.push(if i == 0 || i == k { 0.5 * h } else { h });
                interval_of.push(l);
                boundary.push(i == 0 || i == k);
            }
        }
        Ok(MissingSet {
            intervals,
            times,
            weights,
            interval_of,
            boundary,
            time_step,
            lattice,
        })
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn interval_of(&self, node: usize) -> usize {
        self.interval_of[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Nodes strictly inside an interval; these carry the unknowns of the operator equation.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| !self.boundary[k]).collect()
    }

    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    /// Common lattice step when every node is an integer multiple of it.
    pub fn lattice_step(&self) -> Option<f64> {
        self.lattice
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(Interval::length).sum()
    }

    pub fn span(&self) -> (f64, f64) {
        (
            self.intervals[0].left,
            self.intervals[self.intervals.len() - 1].right,
        )
    }

    /// Closed-set membership.
    pub fn contains(&self, t: f64) -> bool {
        self.intervals
            .iter()
            .any(|i| t >= i.left - ALIGN_TOL && t <= i.right + ALIGN_TOL)
    }

    /// Membership in the open interior.
    pub fn contains_interior(&self, t: f64) -> bool {
        self.intervals
            .iter()
            .any(|i| t > i.left + ALIGN_TOL && t < i.right - ALIGN_TOL)
    }

    /// Warns when the set is long compared with the time period of the frequency grid.
    pub fn aliasing_margin(&self, grid: &FrequencyGrid) -> f64 {
        let (lo, hi) = self.span();
        0.5 * grid.time_period() - (hi - lo)
    }
}

/// Largest u such that every endpoint is an integer multiple of u, for endpoints with small denominators.
fn common_unit(intervals: &[Interval]) -> Option<f64> {
    let ends: Vec<f64> = intervals.iter().flat_map(|i| [i.left, i.right]).collect();
    for q in 1..=1000u64 {
        let scaled: Vec<f64> = ends.iter().map(|e| e * q as f64).collect();
        if scaled
            .iter()
            .all(|s| (s - s.round()).abs() < ALIGN_TOL * q as f64 && s.abs() < 1e12)
        {
            let g = scaled
                .iter()
                .map(|s| s.round().abs() as u64)
                .fold(0, gcd);
            return Some(if g == 0 { 1.0 } else { g as f64 } / q as f64);
        }
    }
    None
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matched_step_on_unit_interval() {
        let grid = FrequencyGrid::default();
        let s = MissingSet::new(vec![Interval::new(-1.0, 0.0)], &grid, TimeStep::Matched).unwrap();
        assert_eq!(s.len(), 22);
        assert!((s.time_step() - 1.0 / 21.0).abs() < 1e-15);
        assert!(s.time_step() <= PI / 64.0);
        let total: f64 = s.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert_eq!(s.interior_nodes().len(), 20);
        assert_eq!(s.lattice_step(), Some(1.0 / 21.0));
    }

    #[test]
    fn two_intervals_share_lattice() {
        let grid = FrequencyGrid::default();
        let s = MissingSet::new(
            vec![Interval::new(-1.0, 0.0), Interval::new(-3.0, -2.0)],
            &grid,
            TimeStep::Matched,
        )
        .unwrap();
        assert_eq!(s.intervals()[0].left, -3.0);
        for l in 0..2 {
            let w: f64 = (0..s.len()).filter(|&k| s.interval_of(k) == l).map(|k| s.weights()[k]).sum();
            assert!((w - 1.0).abs() < 1e-14);
        }
        assert!((s.total_length() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn half_integer_endpoints() {
        let grid = FrequencyGrid::default();
        let s = MissingSet::new(vec![Interval::new(-2.5, -0.5)], &grid, TimeStep::Matched).unwrap();
        let h = s.lattice_step().unwrap();
        assert!((h - 0.5 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sets() {
        let grid = FrequencyGrid::default();
        let bad = |v: Vec<Interval>| MissingSet::new(v, &grid, TimeStep::Matched).is_err();
        assert!(bad(vec![Interval::new(0.0, -1.0)]));
        assert!(bad(vec![Interval::new(-1.0, 0.5)]));
        assert!(bad(vec![Interval::new(-2.0, -0.5), Interval::new(-1.0, 0.0)]));
        assert!(bad(vec![Interval::new(-2.0, -1.0), Interval::new(-1.0, 0.0)]));
        assert!(bad(vec![]));
    }

    #[test]
    fn fixed_step_uses_length_over_step() {
        let s = MissingSet::with_step(vec![Interval::from_offsets(0.0, 1.0)], 1.0 / 256.0).unwrap();
        assert_eq!(s.len(), 257);
        assert!(s.lattice_step().is_some());
    }
}
