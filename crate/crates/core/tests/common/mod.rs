//! Shared generators and independent LP oracles for the integration tests.
//!
//! The oracles build the textbook linear programs directly with `minilp`,
//! without going through the augmentation, so they check the library's
//! reductions rather than repeat them.

#![allow(dead_code)]

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rwb::{build_cost_matrix, CostMatrix, DiscreteMeasure, Point, WeightedMeasureSet};

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly positive simplex weights.
pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn points(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Point> {
    (0..n)
        .map(|_| Point::new((0..d).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap())
        .collect()
}

pub fn measure(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> DiscreteMeasure {
    let locations = points(rng, n, d, scale);
    let weights = simplex(rng, n);
    DiscreteMeasure::new_normalized(locations, weights).unwrap()
}

pub fn dataset(rng: &mut ChaCha8Rng, m: usize, n_max: usize, d: usize, scale: f64) -> WeightedMeasureSet {
    let measures = (0..m)
        .map(|_| {
            let n = rng.gen_range(1..=n_max);
            measure(rng, n, d, scale)
        })
        .collect();
    let set_weights = (0..m).map(|_| rng.gen_range(0.5..2.0)).collect();
    WeightedMeasureSet::new(measures, set_weights).unwrap()
}

fn lp_failure(e: minilp::Error) -> String {
    format!("oracle LP failed: {e}")
}

/// Plain optimal transport as an LP over the coupling.
pub fn ot_lp(a: &[f64], b: &[f64], cost: &CostMatrix) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let (n, k) = (a.len(), b.len());
    let vars: Vec<_> = (0..n * k)
        .map(|idx| lp.add_var(cost.get(idx / k, idx % k), (0.0, f64::INFINITY)))
        .collect();
    for i in 0..n {
        let expr: LinearExpr = (0..k).map(|j| (vars[i * k + j], 1.0)).collect();
        lp.add_constraint(expr, ComparisonOp::Eq, a[i]);
    }
    for j in 0..k {
        let expr: LinearExpr = (0..n).map(|i| (vars[i * k + j], 1.0)).collect();
        lp.add_constraint(expr, ComparisonOp::Eq, b[j]);
    }
    lp.solve().map_err(lp_failure).unwrap().objective()
}

/// Robust distance written directly over `(a_out, b_out, P)`:
/// minimize `<C, P>` with `P` coupling `(a - a_out)/(1 - zeta_mu)` and
/// `(b - b_out)/(1 - zeta_nu)`, `0 <= a_out <= a`, `sum a_out = zeta_mu`,
/// and likewise for `b_out`.
pub fn robust_lp(a: &[f64], b: &[f64], cost: &CostMatrix, zeta_mu: f64, zeta_nu: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let (n, k) = (a.len(), b.len());
    let p: Vec<_> = (0..n * k)
        .map(|idx| lp.add_var(cost.get(idx / k, idx % k), (0.0, f64::INFINITY)))
        .collect();
    let a_out: Vec<_> = a.iter().map(|&ai| lp.add_var(0.0, (0.0, ai))).collect();
    let b_out: Vec<_> = b.iter().map(|&bj| lp.add_var(0.0, (0.0, bj))).collect();
    for i in 0..n {
        let mut expr: LinearExpr = (0..k).map(|j| (p[i * k + j], 1.0 - zeta_mu)).collect();
        expr.add(a_out[i], 1.0);
        lp.add_constraint(expr, ComparisonOp::Eq, a[i]);
    }
    for j in 0..k {
        let mut expr: LinearExpr = (0..n).map(|i| (p[i * k + j], 1.0 - zeta_nu)).collect();
        expr.add(b_out[j], 1.0);
        lp.add_constraint(expr, ComparisonOp::Eq, b[j]);
    }
    let total: LinearExpr = a_out.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(total, ComparisonOp::Eq, zeta_mu);
    let total: LinearExpr = b_out.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(total, ComparisonOp::Eq, zeta_nu);
    lp.solve().map_err(lp_failure).unwrap().objective()
}

pub fn robust_lp_measures(mu: &DiscreteMeasure, nu: &DiscreteMeasure, zeta_mu: f64, zeta_nu: f64, z: f64) -> f64 {
    let cost = build_cost_matrix(mu.locations(), nu.locations(), z).unwrap();
    robust_lp(mu.weights(), nu.weights(), &cost, zeta_mu, zeta_nu)
}

/// Robust barycenter objective at a fixed `nu`, one direct LP per measure.
pub fn rwb_objective_lp(set: &WeightedMeasureSet, nu: &DiscreteMeasure, zeta: f64, z: f64) -> f64 {
    let total = set.total_weight();
    set.iter()
        .map(|(mu, w)| w / total * robust_lp_measures(mu, nu, zeta, 0.0, z))
        .sum()
}

/// Fixed-support robust barycenter as one LP over the shared weights `b`,
/// each measure's trimming `a_out^l` and its coupling `P^l`. With `zeta = 0`
/// this is the plain fixed-support barycenter LP.
pub fn fixed_barycenter_lp(set: &WeightedMeasureSet, support: &[Point], zeta: f64, z: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let k = support.len();
    let b: Vec<_> = (0..k).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let sum_b: LinearExpr = b.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(sum_b, ComparisonOp::Eq, 1.0);
    let total = set.total_weight();
    for (mu, w) in set.iter() {
        let cost = build_cost_matrix(mu.locations(), support, z).unwrap();
        let n = mu.len();
        let p: Vec<_> = (0..n * k)
            .map(|idx| lp.add_var(w / total * cost.get(idx / k, idx % k), (0.0, f64::INFINITY)))
            .collect();
        let a = mu.weights();
        let a_out: Vec<_> = a.iter().map(|&ai| lp.add_var(0.0, (0.0, ai))).collect();
        for i in 0..n {
            let mut expr: LinearExpr = (0..k).map(|j| (p[i * k + j], 1.0 - zeta)).collect();
            expr.add(a_out[i], 1.0);
            lp.add_constraint(expr, ComparisonOp::Eq, a[i]);
        }
        for j in 0..k {
            let mut expr: LinearExpr = (0..n).map(|i| (p[i * k + j], 1.0)).collect();
            expr.add(b[j], -1.0);
            lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
        }
        let trimmed: LinearExpr = a_out.iter().map(|&v| (v, 1.0)).collect();
        lp.add_constraint(trimmed, ComparisonOp::Eq, zeta);
    }
    lp.solve().map_err(lp_failure).unwrap().objective()
}

/// A feasible trimming of `(a, b)`: outlier vectors with the right totals and
/// a coupling of the trimmed, renormalized marginals.
pub fn random_trimming(
    rng: &mut ChaCha8Rng,
    a: &[f64],
    b: &[f64],
    zeta_mu: f64,
    zeta_nu: f64,
) -> (Vec<f64>, Vec<f64>, rwb::TransportPlan) {
    let outliers = |rng: &mut ChaCha8Rng, w: &[f64], zeta: f64| -> Vec<f64> {
        let shaped: Vec<f64> = w.iter().map(|x| x * rng.gen_range(0.5..1.5)).collect();
        let total: f64 = shaped.iter().sum();
        shaped.into_iter().map(|x| zeta * x / total).collect()
    };
    let a_out = outliers(rng, a, zeta_mu);
    let b_out = outliers(rng, b, zeta_nu);
    let rows: Vec<f64> = a.iter().zip(&a_out).map(|(x, o)| (x - o) / (1.0 - zeta_mu)).collect();
    let cols: Vec<f64> = b.iter().zip(&b_out).map(|(x, o)| (x - o) / (1.0 - zeta_nu)).collect();
    let entries: Vec<f64> = (0..a.len() * b.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cost = CostMatrix::from_entries(a.len(), b.len(), entries, 1.0).unwrap();
    let plan = rwb::solve_ot_exact(&rows, &cols, &cost).unwrap().plan;
    (a_out, b_out, plan)
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
