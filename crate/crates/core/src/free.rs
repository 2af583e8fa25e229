//! Free-support robust barycenter by alternating weight and location updates.
//!
//! The solver starts from the best of a few sampled fixed-support solutions,
//! builds a coreset around it and then alternates two block steps on the
//! coreset: new weights from the fixed-support solver at the current support,
//! and new locations from the resulting plans. Each accepted iterate must stay
//! within the region where the coreset is trustworthy; a step that leaves it
//! triggers a rebuild around the current iterate, and if the recomputed step
//! still leaves the fresh region it is shortened until it fits.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coreset::{approx_init, coreset_around, region_radius, CoresetParams, CoresetResult};
use crate::error::{Error, Result};
use crate::fixed::{rwb_cost, solve_fixed_awb, FixedProblem};
use crate::measures::{euclidean, DiscreteMeasure, Point, WeightedMeasureSet};
use crate::ot::{wasserstein_distance, TransportPlan};
use crate::robust::{robust_distance, OutlierBudget, SolveMode};

const RELATIVE_IMPROVEMENT: f64 = 1e-6;
const WEISZFELD_TOL: f64 = 1e-9;
const WEISZFELD_ITERATIONS: usize = 1000;
const MAX_HALVINGS: usize = 40;

/// Measure set used by the weight update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightUpdateSet {
    Coreset,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeConfig {
    pub z: f64,
    pub zeta: f64,
    /// Coreset accuracy.
    pub epsilon: f64,
    /// Per-layer sample budget of the coreset.
    pub gamma: usize,
    /// Number of candidate supports tried by the initialization.
    pub t_init: usize,
    /// Cap on outer iterations.
    pub iterations: usize,
    /// Additive error of the inner fixed-support solves.
    pub ot_epsilon: f64,
    pub seed: u64,
    pub weight_update: WeightUpdateSet,
    pub max_rebuilds: usize,
}

impl FreeConfig {
    pub fn new(z: f64, zeta: f64, seed: u64) -> Self {
        FreeConfig {
            z,
            zeta,
            epsilon: 0.2,
            gamma: 200,
            t_init: 5,
            iterations: 20,
            ot_epsilon: 1e-3,
            seed,
            weight_update: WeightUpdateSet::Coreset,
            max_rebuilds: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z != 1.0 && self.z != 2.0 {
            return Err(Error::input(format!(
                "location updates are available for z = 1 and z = 2 only, got {}",
                self.z
            )));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::input(format!("zeta = {} must lie in [0, 1)", self.zeta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::input(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        if self.gamma == 0 || self.t_init == 0 || self.iterations == 0 {
            return Err(Error::input("gamma, t_init and iterations must be at least 1"));
        }
        if !(self.ot_epsilon > 0.0 && self.ot_epsilon.is_finite()) {
            return Err(Error::input("ot_epsilon must be positive"));
        }
        Ok(())
    }

    fn coreset_params(&self) -> CoresetParams {
        CoresetParams {
            epsilon: self.epsilon,
            gamma: self.gamma,
            zeta: self.zeta,
            z: self.z,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Init,
    Weights,
    Locations,
}

/// One accepted step of the solver.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub step: StepKind,
    /// Exact robust objective on the current coreset.
    pub objective: f64,
    /// `W_z` distance from the current anchor.
    pub region_distance: f64,
    pub radius: f64,
    /// A rebuild happened before this step was accepted.
    pub rebuilt: bool,
    /// Step length used; 1 unless the step was shortened to stay in the region.
    pub step_fraction: f64,
    pub coreset_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub rebuilds: usize,
    pub init_cost: f64,
}

impl SolveTrace {
    /// One JSON object per record. Wall-clock times are left out unless
    /// `timing` is set, so traces of seeded runs compare byte for byte.
    pub fn to_json_lines(&self, timing: bool) -> String {
        let mut out = String::new();
        for record in &self.records {
            let mut r = record.clone();
            if !timing {
                r.elapsed_s = None;
            }
            out.push_str(&serde_json::to_string(&r).expect("trace serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeResult {
    pub barycenter: DiscreteMeasure,
    /// Exact robust objective of the barycenter on the full dataset.
    pub objective: f64,
    pub trace: SolveTrace,
}

/// Weight step: fixed-support solve at `support`, returning the shared weights
/// and one plan per measure (dummy column included).
pub fn update_weights(
    set: &WeightedMeasureSet,
    support: &[Point],
    zeta: f64,
    z: f64,
    ot_epsilon: f64,
) -> Result<(Vec<f64>, Vec<TransportPlan>)> {
    let problem = FixedProblem::new(set.clone(), support.to_vec(), zeta, z)?;
    let solution = solve_fixed_awb(&problem, ot_epsilon)?;
    Ok((solution.weights, solution.plans_aug))
}

/// Location step: every support point moves to the minimizer of its
/// plan-weighted transport cost (weighted mean for `z = 2`, geometric median
/// for `z = 1`). Plans may carry extra trailing columns, which are ignored.
/// Points that receive no mass stay where they are.
pub fn update_locations(
    set: &WeightedMeasureSet,
    plans: &[TransportPlan],
    support: &[Point],
    z: f64,
) -> Result<Vec<Point>> {
    if plans.len() != set.len() {
        return Err(Error::input("need one plan per measure"));
    }
    let n = support.len();
    for (mu, plan) in set.measures().iter().zip(plans) {
        if plan.rows() != mu.len() || plan.cols() < n {
            return Err(Error::input("plan shape does not match its measure and the support"));
        }
    }
    if z != 1.0 && z != 2.0 {
        return Err(Error::input(format!("location update needs z = 1 or z = 2, got {z}")));
    }
    let total = set.total_weight();
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut masses = Vec::new();
            let mut points = Vec::new();
            for ((mu, tau), plan) in set.iter().zip(plans) {
                for (i, x) in mu.locations().iter().enumerate() {
                    let p = plan.get(i, j);
                    if p > 0.0 {
                        masses.push(tau / total * p);
                        points.push(x.coords());
                    }
                }
            }
            if masses.is_empty() {
                return Ok(support[j].clone());
            }
            let y = if z == 2.0 {
                weighted_mean(&points, &masses)
            } else {
                geometric_median(&points, &masses)
            };
            Point::new(y)
        })
        .collect()
}

fn weighted_mean(points: &[&[f64]], masses: &[f64]) -> Vec<f64> {
    let d = points[0].len();
    let total: f64 = masses.iter().sum();
    let mut y = vec![0.0; d];
    for (x, m) in points.iter().zip(masses) {
        for (yk, xk) in y.iter_mut().zip(x.iter()) {
            *yk += m * xk;
        }
    }
    y.iter_mut().for_each(|v| *v /= total);
    y
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Weighted geometric median by Weiszfeld's iteration, with the Vardi-Zhang
/// correction when the iterate lands on a data point.
fn geometric_median(points: &[&[f64]], masses: &[f64]) -> Vec<f64> {
    let d = points[0].len();
    let mut y = weighted_mean(points, masses);
    for _ in 0..WEISZFELD_ITERATIONS {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut coincident = 0.0;
        for (x, m) in points.iter().zip(masses) {
            let r = dist(x, &y);
            if r < 1e-12 {
                coincident += m;
                continue;
            }
            for (nk, xk) in num.iter_mut().zip(x.iter()) {
                *nk += m * xk / r;
            }
            den += m / r;
        }
        if den == 0.0 {
            return y;
        }
        let t: Vec<f64> = num.iter().map(|v| v / den).collect();
        let next = if coincident > 0.0 {
            // Pull of the other points, ||sum m (x - y) / |x - y|||.
            let pull: f64 = t
                .iter()
                .zip(&y)
                .map(|(tk, yk)| (den * (tk - yk)).powi(2))
                .sum::<f64>()
                .sqrt();
            if pull <= coincident {
                return y;
            }
            let s = coincident / pull;
            t.iter().zip(&y).map(|(tk, yk)| (1.0 - s) * tk + s * yk).collect()
        } else {
            t
        };
        let step = dist(&next, &y);
        y = next;
        if step <= WEISZFELD_TOL * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    y
}

/// Current coreset together with its region.
struct Region {
    coreset: CoresetResult,
    anchor: DiscreteMeasure,
    radius: f64,
}

struct Solver<'a> {
    dataset: &'a WeightedMeasureSet,
    config: &'a FreeConfig,
    seeds: ChaCha8Rng,
    region: Region,
    rebuilds: usize,
    started: Instant,
}

impl Solver<'_> {
    fn set(&self) -> &WeightedMeasureSet {
        &self.region.coreset.coreset
    }

    fn objective(&self, nu: &DiscreteMeasure) -> Result<f64> {
        rwb_cost(self.set(), nu, self.config.zeta, self.config.z)
    }

    /// Re-anchor at `nu`. Returns false when `nu` has zero cost on the dataset.
    fn rebuild(&mut self, nu: &DiscreteMeasure) -> Result<bool> {
        self.rebuilds += 1;
        if self.rebuilds > self.config.max_rebuilds {
            return Err(Error::RebuildStorm {
                rebuilds: self.rebuilds,
                hint: "increase the coreset budget gamma or lower epsilon to widen the region".into(),
            });
        }
        let cost = rwb_cost(self.dataset, nu, self.config.zeta, self.config.z)?;
        let seed = self.seeds.next_u64();
        let coreset = coreset_around(self.dataset, nu, self.config.coreset_params(), seed)?;
        log::info!(
            "rebuild {}: coreset of {} measures, radius {:.4e}",
            self.rebuilds,
            coreset.len(),
            region_radius(cost, self.config.z)
        );
        self.region = Region {
            coreset,
            anchor: nu.clone(),
            radius: region_radius(cost, self.config.z),
        };
        Ok(cost > 0.0)
    }

    fn region_distance(&self, nu: &DiscreteMeasure) -> Result<f64> {
        wasserstein_distance(&self.region.anchor, nu, self.config.z)
    }

    /// Shorten the move from `from` toward `to` until it lies in the region.
    fn shorten(
        &self,
        make: impl Fn(f64) -> Result<DiscreteMeasure>,
    ) -> Result<(DiscreteMeasure, f64, f64)> {
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            t *= 0.5;
            let nu = make(t)?;
            let d = self.region_distance(&nu)?;
            if d <= self.region.radius {
                return Ok((nu, d, t));
            }
        }
        let nu = make(0.0)?;
        let d = self.region_distance(&nu)?;
        Ok((nu, d, 0.0))
    }

    fn record(&self, iteration: usize, step: StepKind, nu: &DiscreteMeasure, d: f64, rebuilt: bool, t: f64) -> Result<TraceRecord> {
        Ok(TraceRecord {
            iteration,
            step,
            objective: self.objective(nu)?,
            region_distance: d,
            radius: self.region.radius,
            rebuilt,
            step_fraction: t,
            coreset_size: self.set().len(),
            elapsed_s: Some(self.started.elapsed().as_secs_f64()),
        })
    }
}

fn mix_weights(support: &[Point], from: &[f64], to: &[f64], t: f64) -> Result<DiscreteMeasure> {
    let w: Vec<f64> = from.iter().zip(to).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    DiscreteMeasure::new_normalized(support.to_vec(), w)
}

fn mix_locations(from: &[Point], to: &[Point], weights: &[f64], t: f64) -> Result<DiscreteMeasure> {
    let support = from
        .iter()
        .zip(to)
        .map(|(a, b)| {
            Point::new(a.coords().iter().zip(b.coords()).map(|(x, y)| (1.0 - t) * x + t * y).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteMeasure::new(support, weights.to_vec())
}

/// Exact robust plans from every coreset measure to `nu`.
fn exact_plans(set: &WeightedMeasureSet, nu: &DiscreteMeasure, zeta: f64, z: f64) -> Result<Vec<TransportPlan>> {
    let budget = OutlierBudget::source_only(zeta)?;
    set.measures()
        .par_iter()
        .map(|mu| Ok(robust_distance(mu, nu, budget, z, SolveMode::Exact)?.plan))
        .collect()
}

/// Free-support robust barycenter of `dataset`.
pub fn solve_free_rwb(dataset: &WeightedMeasureSet, config: &FreeConfig) -> Result<FreeResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    let started = Instant::now();
    let (z, zeta) = (config.z, config.zeta);
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let init = approx_init(dataset, config.t_init, zeta, z, config.ot_epsilon, seeds.next_u64())?;
    log::info!("initial cost {:.6e} from measure {}", init.cost, init.source_index);
    let coreset = coreset_around(dataset, &init.anchor, config.coreset_params(), seeds.next_u64())?;
    let mut solver = Solver {
        dataset,
        config,
        seeds,
        region: Region {
            coreset,
            radius: region_radius(init.cost, z),
            anchor: init.anchor.clone(),
        },
        rebuilds: 0,
        started,
    };
    let mut trace = SolveTrace {
        init_cost: init.cost,
        ..SolveTrace::default()
    };
    let mut nu = init.anchor;
    trace.records.push(solver.record(0, StepKind::Init, &nu, 0.0, false, 1.0)?);
    if init.cost <= 0.0 {
        return finish(dataset, nu, trace, solver.rebuilds, zeta, z);
    }

    let mut previous = trace.records[0].objective;
    for iteration in 1..=config.iterations {
        // Weight half-step.
        let support = nu.locations().to_vec();
        let mut rebuilt = false;
        let (nu_w, plans, d_w, t_w) = loop {
            let target = match config.weight_update {
                WeightUpdateSet::Coreset => solver.set().clone(),
                WeightUpdateSet::Full => dataset.clone(),
            };
            let (weights, plans) = update_weights(&target, &support, zeta, z, config.ot_epsilon)?;
            let candidate = DiscreteMeasure::new(support.clone(), weights.clone())?;
            let d = solver.region_distance(&candidate)?;
            if d <= solver.region.radius {
                break (candidate, Some(plans), d, 1.0);
            }
            if !rebuilt && solver.region.anchor != nu {
                rebuilt = true;
                if !solver.rebuild(&nu)? {
                    return finish(dataset, nu, trace, solver.rebuilds, zeta, z);
                }
                continue;
            }
            let (shortened, d, t) =
                solver.shorten(|t| mix_weights(&support, nu.weights(), &weights, t))?;
            break (shortened, None, d, t);
        };
        nu = nu_w;
        trace.records.push(solver.record(iteration, StepKind::Weights, &nu, d_w, rebuilt, t_w)?);

        // Location half-step.
        let mut rebuilt = false;
        let mut plans = match plans {
            Some(p) if config.weight_update == WeightUpdateSet::Coreset => p,
            _ => exact_plans(solver.set(), &nu, zeta, z)?,
        };
        let (nu_l, d_l, t_l) = loop {
            let moved = update_locations(solver.set(), &plans, nu.locations(), z)?;
            let candidate = DiscreteMeasure::new(moved.clone(), nu.weights().to_vec())?;
            let d = solver.region_distance(&candidate)?;
            if d <= solver.region.radius {
                break (candidate, d, 1.0);
            }
            if !rebuilt && solver.region.anchor != nu {
                rebuilt = true;
                if !solver.rebuild(&nu)? {
                    return finish(dataset, nu, trace, solver.rebuilds, zeta, z);
                }
                plans = exact_plans(solver.set(), &nu, zeta, z)?;
                continue;
            }
            let from = nu.locations().to_vec();
            let weights = nu.weights().to_vec();
            break solver.shorten(|t| mix_locations(&from, &moved, &weights, t))?;
        };
        nu = nu_l;
        let record = solver.record(iteration, StepKind::Locations, &nu, d_l, rebuilt, t_l)?;
        let current = record.objective;
        log::info!("iteration {iteration}: coreset objective {current:.6e}");
        trace.records.push(record);

        let any_rebuild = trace.records.iter().rev().take(2).any(|r| r.rebuilt);
        if !any_rebuild {
            let improvement = previous - current;
            if previous <= 0.0 || improvement < RELATIVE_IMPROVEMENT * previous {
                break;
            }
        }
        previous = current;
    }
    finish(dataset, nu, trace, solver.rebuilds, zeta, z)
}

fn finish(
    dataset: &WeightedMeasureSet,
    barycenter: DiscreteMeasure,
    mut trace: SolveTrace,
    rebuilds: usize,
    zeta: f64,
    z: f64,
) -> Result<FreeResult> {
    trace.rebuilds = rebuilds;
    let objective = rwb_cost(dataset, &barycenter, zeta, z)?;
    Ok(FreeResult {
        barycenter,
        objective,
        trace,
    })
}

/// Distance between two point sets matched index by index; used in tests
/// and diagnostics of the location step.
pub fn max_displacement(a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(x, y)| euclidean(x, y)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac(x: f64) -> DiscreteMeasure {
        DiscreteMeasure::dirac(Point::from(x))
    }

    fn plan(rows: &[Vec<f64>]) -> TransportPlan {
        TransportPlan::from_rows(rows).unwrap()
    }

    #[test]
    fn mean_of_two_atoms() {
        let mu = DiscreteMeasure::new(vec![Point::from(0.0), Point::from(2.0)], vec![0.5, 0.5]).unwrap();
        let set = WeightedMeasureSet::uniform(vec![mu]).unwrap();
        let y = update_locations(&set, &[plan(&[vec![0.5], vec![0.5]])], &[Point::from(7.0)], 2.0).unwrap();
        assert!((y[0].coords()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_source_atom() {
        let x = Point::new(vec![1.5, -2.0]).unwrap();
        let set = WeightedMeasureSet::uniform(vec![DiscreteMeasure::dirac(x.clone())]).unwrap();
        let start = [Point::new(vec![0.0, 0.0]).unwrap()];
        for z in [1.0, 2.0] {
            let y = update_locations(&set, &[plan(&[vec![1.0]])], &start, z).unwrap();
            assert!(max_displacement(&y, &[x.clone()]) < 1e-12);
        }
    }

    #[test]
    fn weighted_by_tau() {
        let set = WeightedMeasureSet::new(vec![dirac(0.0), dirac(4.0)], vec![1.0, 3.0]).unwrap();
        let plans = [plan(&[vec![1.0]]), plan(&[vec![1.0]])];
        let y = update_locations(&set, &plans, &[Point::from(0.0)], 2.0).unwrap();
        assert!((y[0].coords()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_column_keeps_location() {
        let set = WeightedMeasureSet::uniform(vec![dirac(1.0)]).unwrap();
        let y = update_locations(&set, &[plan(&[vec![1.0, 0.0]])], &[Point::from(0.0), Point::from(9.0)], 2.0)
            .unwrap();
        assert_eq!(y[1].coords(), &[9.0]);
    }

    #[test]
    fn geometric_median_of_triangle_vertex() {
        // Heavy vertex dominates: the median sits on it.
        let pts: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        let y = geometric_median(&pts, &[5.0, 1.0, 1.0]);
        assert!(dist(&y, &[0.0, 0.0]) < 1e-8);
        // Collinear, equal weights: median is the middle point.
        let pts: Vec<&[f64]> = vec![&[0.0], &[1.0], &[5.0]];
        let y = geometric_median(&pts, &[1.0, 1.0, 1.0]);
        assert!((y[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn two_diracs_free() {
        let set = WeightedMeasureSet::uniform(vec![dirac(0.0), dirac(2.0)]).unwrap();
        let r = solve_free_rwb(&set, &FreeConfig::new(2.0, 0.0, 11)).unwrap();
        assert!((r.objective - 1.0).abs() < 1e-6, "{}", r.objective);
        assert!((r.barycenter.locations()[0].coords()[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn copies_give_zero_objective() {
        let mu = DiscreteMeasure::new(vec![Point::from(0.0), Point::from(3.0)], vec![0.4, 0.6]).unwrap();
        let set = WeightedMeasureSet::uniform(vec![mu; 5]).unwrap();
        let cfg = FreeConfig::new(2.0, 0.0, 2);
        let r = solve_free_rwb(&set, &cfg).unwrap();
        // Inner solves are accurate to ot_epsilon, so zero is reached up to that.
        assert!(r.objective >= 0.0 && r.objective <= cfg.ot_epsilon, "{}", r.objective);
    }

    #[test]
    fn rejects_other_exponents() {
        let set = WeightedMeasureSet::uniform(vec![dirac(0.0)]).unwrap();
        assert!(solve_free_rwb(&set, &FreeConfig::new(3.0, 0.0, 0)).is_err());
    }

    #[test]
    fn trace_is_deterministic_without_timing() {
        let set = WeightedMeasureSet::uniform(vec![dirac(0.0), dirac(2.0), dirac(3.0)]).unwrap();
        let cfg = FreeConfig::new(2.0, 0.0, 4);
        let a = solve_free_rwb(&set, &cfg).unwrap().trace.to_json_lines(false);
        let b = solve_free_rwb(&set, &cfg).unwrap().trace.to_json_lines(false);
        assert_eq!(a, b);
        assert!(!a.contains("elapsed"));
    }
}
