use super::linear::random_weights;
use super::*;
use crate::density::SpectralDensity;
use crate::error::Error;
use crate::estimator::{estimate, EstimateOptions, Problem};
use crate::grid::FrequencyGrid;
use crate::linalg::{cis, re, CMatrix, CVector};
use crate::missing::{Interval, MissingSet};
use crate::weight::WeightFunction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(json: &str) -> ClassSpec {
    serde_json::from_str(json).unwrap()
}

fn total_measure(grid: &FrequencyGrid) -> f64 {
    (0..grid.len()).map(|j| grid.measure(j)).sum()
}

fn scalar_weights(grid: &FrequencyGrid, per_bin: &[f64]) -> Vec<CMatrix> {
    let mut w = vec![CMatrix::zeros(1, 1); grid.len()];
    for (bin, &v) in grid.bins().iter().zip(per_bin) {
        for j in bin.members() {
            w[j][(0, 0)] = re(v);
        }
    }
    w
}

#[test]
fn moment_class_accepts_its_own_integral() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let f = SpectralDensity::scalar(&grid, |l| 2.0 / (l * l + 1.0));
    let p: f64 = (0..grid.len()).map(|j| grid.measure(j) * f.trace(j)).sum();
    let class = spec(&format!(r#"{{"kind":"d0-1","params":{{"p":{p}}}}}"#)).build(&grid, 1, true).unwrap();
    assert!(class.membership(&f, &grid).member);
    let off = spec(&format!(r#"{{"kind":"d0-1","params":{{"p":{}}}}}"#, 1.1 * p)).build(&grid, 1, true).unwrap();
    let report = project_membership(&off, &f, &grid);
    assert!(!report.member);
    assert!(report.max_defect > 0.05);
}

#[test]
fn contamination_without_slack_pins_the_reference() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let class = spec(
        r#"{"kind":"deps-1","params":{"q":1.0,"epsilon":0.0},
            "references":{"G1":{"kind":"normalized","params":{"trace_integral":1.0,
              "density":{"kind":"ou","params":{"variance":1.0,"rate":1.0}}}}}}"#,
    )
    .build(&grid, 1, true)
    .unwrap();
    let g1 = class.center(&grid).unwrap();
    assert!(class.membership(&g1, &grid).member);
    // Same integral, but mass moved from low to high frequencies.
    let bins = grid.bins();
    let (lo, hi) = (&bins[0], &bins[bins.len() - 1]);
    let shift = 0.5 * g1.trace(lo.positive);
    let moved = g1.map(|j, x| {
        if lo.members().any(|m| m == j) {
            x.add_scalar(re(-shift))
        } else if hi.members().any(|m| m == j) {
            x.add_scalar(re(shift * lo.measure / hi.measure))
        } else {
            x.clone()
        }
    });
    let report = class.membership(&moved, &grid);
    assert!(!report.member, "{report:?}");
}

#[test]
fn ball_center_has_zero_defect() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let class = spec(
        r#"{"kind":"d2delta-1","params":{"delta":0.2},
            "references":{"G1":{"kind":"ou","params":{"variance":1.0,"rate":1.0}}}}"#,
    )
    .build(&grid, 1, true)
    .unwrap();
    let center = class.center(&grid).unwrap();
    let report = class.membership(&center, &grid);
    assert!(report.member);
    assert_eq!(report.max_defect, 0.0);
}

#[test]
fn moment_maximizer_is_a_single_bin() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let class = spec(r#"{"kind":"d0-1","params":{"p":1.0}}"#).build(&grid, 1, true).unwrap();
    let per_bin: Vec<f64> = (0..16).map(|b| 1.0 + ((b * 7) % 16) as f64).collect();
    let w = scalar_weights(&grid, &per_bin);
    let x = maximize_linear_weights(&class, &w, &grid).unwrap();
    let top = per_bin.iter().cloned().fold(f64::MIN, f64::max);
    let loaded: Vec<usize> = (0..grid.len()).filter(|&j| x.trace(j) > 0.0).collect();
    for &j in &loaded {
        let b = grid.bins().iter().position(|b| b.members().any(|m| m == j)).unwrap();
        assert_eq!(per_bin[b], top);
    }
    assert!((linear_value(&w, &x, &grid) - top).abs() < 1e-12);
}

#[test]
fn strip_greedy_matches_vertex_enumeration() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let bins = grid.bins();
    assert_eq!(bins.len(), 16);
    let mass = total_measure(&grid);
    let p = 1.1 * mass;
    let class = spec(&format!(
        r#"{{"kind":"dvu-1","params":{{"p":{p}}},
            "references":{{"V":{{"kind":"white","params":{{"level":0.5}}}},
                          "U":{{"kind":"white","params":{{"level":2.0}}}}}}}}"#
    ))
    .build(&grid, 1, true)
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let per_bin: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let w = scalar_weights(&grid, &per_bin);
        let x = maximize_linear_weights(&class, &w, &grid).unwrap();
        assert!(class.membership(&x, &grid).member);
        let got = linear_value(&w, &x, &grid);
        // Every vertex of {V ≤ x ≤ U, Σμx = p} has all but at most one coordinate at a bound.
        let mu: Vec<f64> = bins.iter().map(|b| b.measure).collect();
        let mut best = f64::MIN;
        for free in 0..16 {
            for mask in 0u32..(1 << 15) {
                let mut used = 0.0;
                let mut value = 0.0;
                let mut bit = 0;
                for b in 0..16 {
                    if b == free {
                        continue;
                    }
                    let level = if mask >> bit & 1 == 1 { 2.0 } else { 0.5 };
                    bit += 1;
                    used += mu[b] * level;
                    value += mu[b] * level * per_bin[b];
                }
                let level = (p - used) / mu[free];
                if (0.5 - 1e-12..=2.0 + 1e-12).contains(&level) {
                    best = best.max(value + mu[free] * level * per_bin[free]);
                }
            }
        }
        assert!((got - best).abs() <= 1e-10 * best, "{got} vs {best}");
    }
}

#[test]
fn flat_weights_give_the_uniform_allocation() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let class = spec(r#"{"kind":"d0-1","params":{"p":1.0}}"#).build(&grid, 1, true).unwrap();
    let w = scalar_weights(&grid, &[0.3; 16]);
    let x = maximize_linear_weights(&class, &w, &grid).unwrap();
    let level = 1.0 / total_measure(&grid);
    for j in 0..grid.len() {
        assert!((x.trace(j) - level).abs() < 1e-12);
    }
}

#[test]
fn linear_maximizer_dominates_random_members() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let class = spec(r#"{"kind":"d0-2","params":{"p_k":[1.0,0.5]}}"#).build(&grid, 2, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_weights(&grid, 2, &mut rng);
    let x = maximize_linear_weights(&class, &w, &grid).unwrap();
    assert!(class.membership(&x, &grid).member);
    let top = linear_value(&w, &x, &grid);
    for _ in 0..100 {
        let m = class.random_member(&grid, &mut rng).unwrap();
        assert!(linear_value(&w, &m, &grid) <= top * (1.0 + 1e-9));
    }
}

#[test]
fn weighted_and_matrix_classes_are_not_optimized() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let class = spec(r#"{"kind":"d0-4","params":{"P":[[[1.0,0.0],[0.0,0.0]],[[0.0,0.0],[1.0,0.0]]]}}"#)
        .build(&grid, 2, true)
        .unwrap();
    let w = vec![CMatrix::identity(2, 2); grid.len()];
    assert!(matches!(
        maximize_linear_weights(&class, &w, &grid),
        Err(Error::UnsupportedClass(_))
    ));
}

fn ou_setup() -> (FrequencyGrid, MissingSet, WeightFunction) {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let set = MissingSet::with_step(vec![Interval::new(-1.0, 0.0)], 1.0 / 3.0).unwrap();
    let a = WeightFunction::ones(&set, 1);
    (grid, set, a)
}

#[test]
fn singleton_classes_reproduce_the_estimate() {
    let (grid, set, a) = ou_setup();
    let f = SpectralDensity::scalar(&grid, |l| 2.0 / (l * l + 1.0));
    let g = f.scaled(0.5);
    let class_f = DensityClass::fixed(f.clone());
    let class_g = DensityClass::fixed(g.clone());
    let sp = saddle_iterate(&f, &g, &class_f, &class_g, &a, &set, &grid, &SaddleOptions::default()).unwrap();
    let direct = estimate(
        &Problem { grid: &grid, f: &f, g: &g, set: &set, a: &a },
        &EstimateOptions::default(),
    )
    .unwrap();
    assert_eq!(sp.iterations, 1);
    assert_eq!(sp.gap, 0.0);
    assert!(sp.converged);
    assert!((sp.delta0 - direct.delta).abs() <= 1e-8 * direct.delta);
    assert!(sp.verification.passed);
}

#[test]
fn initial_point_outside_the_class_is_rejected() {
    let (grid, set, a) = ou_setup();
    let class = spec(r#"{"kind":"d0-1","params":{"p":1.0}}"#).build(&grid, 1, true).unwrap();
    let f = SpectralDensity::scalar(&grid, |_| 1.0);
    let g = DensityClass::fixed(SpectralDensity::zeros(&grid, 1));
    let err = saddle_iterate(&f, &SpectralDensity::zeros(&grid, 1), &class, &g, &a, &set, &grid, &SaddleOptions::default());
    assert!(matches!(err, Err(Error::NotMember(_))));
}

#[test]
fn constant_modulus_noiseless_relation_is_exact() {
    let grid = FrequencyGrid::new(8.0, 31).unwrap();
    let f = SpectralDensity::scalar(&grid, |l| 2.0 / (l * l + 1.0));
    let p: f64 = (0..grid.len()).map(|j| grid.measure(j) * f.trace(j)).sum();
    let class_f = spec(&format!(r#"{{"kind":"d0-1","params":{{"p":{p}}}}}"#)).build(&grid, 1, true).unwrap();
    let zero = SpectralDensity::zeros(&grid, 1);
    let class_g = DensityClass::fixed(zero.clone());
    let a: Vec<CVector> = grid.nodes().iter().map(|&l| CVector::from_element(1, cis(-0.5 * l) * 0.7)).collect();
    // C/F = A − h with modulus 0.4 everywhere.
    let h: Vec<CVector> = grid
        .nodes()
        .iter()
        .zip(&a)
        .map(|(&l, aj)| aj - CVector::from_element(1, cis(0.3 * l) * 0.4))
        .collect();
    let k = kkt_residuals(&KktInput {
        grid: &grid,
        a_transform: &a,
        h: &h,
        f0: &f,
        g0: &zero,
        class_f: &class_f,
        class_g: &class_g,
    })
    .unwrap();
    let side = k.f_side.unwrap();
    assert!(side.max_relative <= 1e-6, "{}", side.max_relative);
    assert!((side.multipliers["alpha2"][0] - 0.16).abs() < 1e-9);
    assert!(k.g_side.is_none());
}
