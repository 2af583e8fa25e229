//! Fixed-support robust barycenter.
//!
//! With the barycenter support `Y` fixed, the robust objective becomes one
//! linear program over the shared weights `b` and one augmented plan per input
//! measure. Plan `l` has rows `a^l / (1 - zeta)` and columns `(b; zeta / (1 - zeta))`:
//! the extra column is a dummy atom at zero cost that absorbs the trimmed mass.
//!
//! [`solve_fixed_awb`] runs iterative Bregman projections in the log domain and
//! stops once a rounded primal solution is certified against a feasible dual.
//! [`solve_fixed_awb_exact`] hands the LP to a dense simplex and serves as the
//! oracle for small instances.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{build_cost_matrix, CostMatrix, DiscreteMeasure, Point, WeightedMeasureSet};
use crate::ot::{logsumexp, round_to_marginals, solve_ot_exact, TransportPlan};
use crate::robust::{pad_cost_column, robust_power};

/// Largest number of plan variables accepted by the exact LP path.
pub const EXACT_VARIABLE_LIMIT: usize = 5000;

const MAX_ITERATIONS: usize = 50_000;
const STAGE_ITERATIONS: usize = 2000;
const ANNEAL: f64 = 0.5;
const CHECK_EVERY: usize = 5;
/// Plan entries worth one parallel task.
const PARALLEL_GRAIN: usize = 4096;
/// At the final temperature, the rounded plan is certified this often.
const CERTIFY_EVERY: usize = 100;

/// A fixed-support barycenter instance.
#[derive(Clone, Debug)]
pub struct FixedProblem {
    pub dataset: WeightedMeasureSet,
    pub support: Vec<Point>,
    pub zeta: f64,
    pub z: f64,
}

impl FixedProblem {
    pub fn new(dataset: WeightedMeasureSet, support: Vec<Point>, zeta: f64, z: f64) -> Result<Self> {
        let problem = FixedProblem {
            dataset,
            support,
            zeta,
            z,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::input("barycenter support is empty"));
        }
        if self.dataset.is_empty() {
            return Err(Error::input("dataset is empty"));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::input(format!("zeta = {} must lie in [0, 1)", self.zeta)));
        }
        if !(self.z >= 1.0 && self.z.is_finite()) {
            return Err(Error::input(format!("exponent z = {} must be >= 1", self.z)));
        }
        let d = self.dataset.dim();
        if let Some(p) = self.support.iter().find(|p| p.dim() != d) {
            return Err(Error::input(format!(
                "support point has dimension {} but the dataset has dimension {d}",
                p.dim()
            )));
        }
        Ok(())
    }

    /// Mass of the dummy column, `zeta / (1 - zeta)`.
    pub fn dummy_mass(&self) -> f64 {
        self.zeta / (1.0 - self.zeta)
    }

    /// Ground costs `dist^z(x_i, y_j)`, one matrix per measure.
    pub fn ground_costs(&self) -> Result<Vec<CostMatrix>> {
        self.dataset
            .measures()
            .iter()
            .map(|mu| build_cost_matrix(mu.locations(), &self.support, self.z))
            .collect()
    }

    fn normalized_weights(&self) -> Vec<f64> {
        let total = self.dataset.total_weight();
        self.dataset.set_weights().iter().map(|w| w / total).collect()
    }
}

/// Shared barycenter weights, the augmented plans and the objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedSolution {
    pub weights: Vec<f64>,
    pub plans_aug: Vec<TransportPlan>,
    pub value: f64,
}

impl FixedSolution {
    pub fn barycenter(&self, support: &[Point]) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(support.to_vec(), self.weights.clone())
    }
}

/// Robust barycenter objective `(1/omega(Q)) sum_l omega_l W_z^z(mu^l, nu)`
/// with `zeta` trimmed from each input measure.
pub fn rwb_cost(dataset: &WeightedMeasureSet, nu: &DiscreteMeasure, zeta: f64, z: f64) -> Result<f64> {
    let costs: Vec<f64> = dataset
        .measures()
        .par_iter()
        .map(|mu| robust_power(mu, nu, zeta, z))
        .collect::<Result<_>>()?;
    let total = dataset.total_weight();
    Ok(costs.iter().zip(dataset.set_weights()).map(|(c, w)| c * w).sum::<f64>() / total)
}

/// Plain barycenter objective, the `zeta = 0` case of [`rwb_cost`].
pub fn wb_cost(dataset: &WeightedMeasureSet, nu: &DiscreteMeasure, z: f64) -> Result<f64> {
    rwb_cost(dataset, nu, 0.0, z)
}

/// Augmented form of the robust objective: each term is a plain transport
/// problem from `a^l / (1 - zeta)` to `(b; zeta / (1 - zeta))` with a dummy
/// column at zero cost.
pub fn awb_cost(dataset: &WeightedMeasureSet, nu: &DiscreteMeasure, zeta: f64, z: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::input(format!("zeta = {zeta} must lie in [0, 1)")));
    }
    let mut b_aug = nu.weights().to_vec();
    b_aug.push(zeta / (1.0 - zeta));
    let costs: Vec<f64> = dataset
        .measures()
        .par_iter()
        .map(|mu| {
            let ground = build_cost_matrix(mu.locations(), nu.locations(), z)?;
            let a_aug: Vec<f64> = mu.weights().iter().map(|x| x / (1.0 - zeta)).collect();
            Ok(solve_ot_exact(&a_aug, &b_aug, &pad_cost_column(&ground))?.value)
        })
        .collect::<Result<_>>()?;
    let total = dataset.total_weight();
    Ok(costs.iter().zip(dataset.set_weights()).map(|(c, w)| c * w).sum::<f64>() / total)
}

/// Per-measure state of the Bregman projections.
struct Block {
    rows: usize,
    cols: usize,
    w: f64,
    alpha: Vec<f64>,
    log_alpha: Vec<f64>,
    cost: Vec<f64>,
    cost_t: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    /// Log column sums from the latest column step.
    s: Vec<f64>,
}

impl Block {
    fn new(alpha: Vec<f64>, ground: &CostMatrix, dummy: bool, w: f64) -> Self {
        let rows = ground.rows();
        let cost = if dummy {
            pad_cost_column(ground).entries().to_vec()
        } else {
            ground.entries().to_vec()
        };
        let cols = cost.len() / rows;
        let mut cost_t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                cost_t[j * rows + i] = cost[i * cols + j];
            }
        }
        Block {
            rows,
            cols,
            w,
            log_alpha: alpha.iter().map(|x| x.ln()).collect(),
            alpha,
            cost,
            cost_t,
            f: vec![0.0; rows],
            g: vec![0.0; cols],
            s: vec![0.0; cols],
        }
    }

    fn log_col_sums(&mut self, gamma: f64) {
        for j in 0..self.cols {
            let col = &self.cost_t[j * self.rows..(j + 1) * self.rows];
            let lse = logsumexp(self.f.iter().zip(col).map(|(fi, c)| (fi - c) / gamma));
            self.s[j] = lse + self.g[j] / gamma;
        }
    }

    fn update_rows(&mut self, gamma: f64) {
        for i in 0..self.rows {
            let row = &self.cost[i * self.cols..(i + 1) * self.cols];
            let lse = logsumexp(self.g.iter().zip(row).map(|(gj, c)| (gj - c) / gamma));
            self.f[i] = gamma * (self.log_alpha[i] - lse);
        }
    }

    fn plan(&self, gamma: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                p.push(((self.f[i] + self.g[j] - self.cost[i * self.cols + j]) / gamma).exp());
            }
        }
        p
    }

    /// Feasible dual pair for this block's cost by a double c-transform.
    fn c_transform(&self) -> (Vec<f64>, Vec<f64>) {
        let fc: Vec<f64> = (0..self.rows)
            .map(|i| {
                let row = &self.cost[i * self.cols..(i + 1) * self.cols];
                row.iter()
                    .zip(&self.g)
                    .map(|(c, gj)| c - gj)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let gc: Vec<f64> = (0..self.cols)
            .map(|j| {
                let col = &self.cost_t[j * self.rows..(j + 1) * self.rows];
                col.iter().zip(&fc).map(|(c, fi)| c - fi).fold(f64::INFINITY, f64::min)
            })
            .collect();
        (fc, gc)
    }
}

struct Rounded {
    weights: Vec<f64>,
    plans: Vec<Vec<f64>>,
    value: f64,
    gap: f64,
}

struct Ibp {
    blocks: Vec<Block>,
    n: usize,
    dummy: Option<f64>,
    /// Minimum number of blocks per parallel task, so tiny problems are not
    /// dominated by scheduling.
    chunk: usize,
}

impl Ibp {
    /// Column projection onto the shared marginal; returns the largest L1
    /// disagreement between a plan's columns and the projected target.
    fn column_step(&mut self, gamma: f64) -> f64 {
        let chunk = self.chunk;
        self.blocks.par_iter_mut().with_min_len(chunk).for_each(|b| b.log_col_sums(gamma));
        let n = self.n;
        let mut log_b = vec![0.0; n];
        for block in &self.blocks {
            for (lb, s) in log_b.iter_mut().zip(&block.s[..n]) {
                *lb += block.w * s;
            }
        }
        let log_d = self.dummy.map(f64::ln);
        let mut residual: f64 = 0.0;
        for block in &self.blocks {
            let mut r: f64 = (0..n).map(|j| (block.s[j].exp() - log_b[j].exp()).abs()).sum();
            if let Some(d) = self.dummy {
                r += (block.s[n].exp() - d).abs();
            }
            residual = residual.max(r);
        }
        self.blocks.par_iter_mut().with_min_len(chunk).for_each(|block| {
            for j in 0..n {
                block.g[j] += gamma * (log_b[j] - block.s[j]);
            }
            if let Some(ld) = log_d {
                block.g[n] += gamma * (ld - block.s[n]);
            }
        });
        residual
    }

    fn row_step(&mut self, gamma: f64) {
        self.blocks.par_iter_mut().with_min_len(self.chunk).for_each(|b| b.update_rows(gamma));
    }

    fn round(&self, gamma: f64) -> Rounded {
        let n = self.n;
        let mut plans: Vec<Vec<f64>> = self
            .blocks
            .par_iter()
            .with_min_len(self.chunk)
            .map(|block| {
                let mut p = block.plan(gamma);
                for i in 0..block.rows {
                    let row = &mut p[i * block.cols..(i + 1) * block.cols];
                    let r: f64 = row.iter().sum();
                    let s = if r > 0.0 { block.alpha[i] / r } else { 0.0 };
                    row.iter_mut().for_each(|x| *x *= s);
                }
                p
            })
            .collect();

        let mut weights = vec![0.0; n];
        for (block, p) in self.blocks.iter().zip(&plans) {
            for i in 0..block.rows {
                for j in 0..n {
                    weights[j] += block.w * p[i * block.cols + j];
                }
            }
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|x| *x /= total);
        } else {
            weights.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        }
        let mut target = weights.clone();
        if let Some(d) = self.dummy {
            target.push(d);
        }

        plans
            .par_iter_mut()
            .with_min_len(self.chunk)
            .zip(&self.blocks)
            .for_each(|(p, block)| round_to_marginals(p, block.rows, block.cols, &block.alpha, &target));
        let value: f64 = self
            .blocks
            .iter()
            .zip(&plans)
            .map(|(block, p)| block.w * p.iter().zip(&block.cost).map(|(x, c)| x * c).sum::<f64>())
            .sum();

        let duals: Vec<(Vec<f64>, Vec<f64>)> = self.blocks.par_iter().with_min_len(self.chunk).map(Block::c_transform).collect();
        let mut dual = 0.0;
        let mut shared = vec![0.0; n];
        for (block, (fc, gc)) in self.blocks.iter().zip(&duals) {
            dual += block.w * block.alpha.iter().zip(fc).map(|(a, f)| a * f).sum::<f64>();
            if let Some(d) = self.dummy {
                dual += block.w * gc[n] * d;
            }
            for j in 0..n {
                shared[j] += block.w * gc[j];
            }
        }
        dual += shared.iter().copied().fold(f64::INFINITY, f64::min);

        Rounded {
            weights,
            plans,
            value,
            gap: (value - dual).max(0.0),
        }
    }
}

/// Entropic fixed-support robust barycenter with additive error `additive_error`.
///
/// The returned value lies between the exact optimum and the optimum plus
/// `additive_error`; every plan satisfies its row marginal and the shared
/// column marginal `(b; zeta / (1 - zeta))`.
///
/// The projections can stall at very low temperatures. When the certificate
/// is still out of reach after the iteration budget, instances small enough
/// for [`solve_fixed_awb_exact`] are handed to it; larger ones return
/// [`Error::Convergence`].
pub fn solve_fixed_awb(problem: &FixedProblem, additive_error: f64) -> Result<FixedSolution> {
    problem.validate()?;
    if !(additive_error > 0.0 && additive_error.is_finite()) {
        return Err(Error::input(format!(
            "additive error must be positive, got {additive_error}"
        )));
    }
    let n = problem.support.len();
    let mass = 1.0 / (1.0 - problem.zeta);
    let dummy = (problem.zeta > 0.0).then(|| problem.dummy_mass());
    let weights = problem.normalized_weights();
    let grounds = problem.ground_costs()?;
    let blocks: Vec<Block> = problem
        .dataset
        .measures()
        .iter()
        .zip(&grounds)
        .zip(&weights)
        .map(|((mu, ground), &w)| {
            let alpha = mu.weights().iter().map(|x| x / (1.0 - problem.zeta)).collect();
            Block::new(alpha, ground, dummy.is_some(), w)
        })
        .collect();

    let max_cost = grounds.iter().map(CostMatrix::max).fold(0.0, f64::max);
    let size = blocks.iter().map(|b| b.rows * b.cols).max().unwrap_or(1).max(2) as f64;
    let gamma_final = additive_error / (4.0 * mass * size.ln());
    let target = if max_cost > 0.0 {
        additive_error / (4.0 * max_cost)
    } else {
        1e-12
    };
    let entries: usize = blocks.iter().map(|b| b.rows * b.cols).sum();
    let chunk = (PARALLEL_GRAIN * blocks.len() / entries.max(1)).max(1);
    let mut ibp = Ibp { blocks, n, dummy, chunk };
    let mut gamma = max_cost.max(gamma_final);
    let mut final_tol = target;
    let mut iterations = 0;
    ibp.row_step(gamma);

    let rounded = 'outer: loop {
        let last_stage = gamma <= gamma_final;
        let stage_tol = if last_stage { final_tol } else { (1e-3 * mass).max(target) };
        let mut stage_iterations = 0;
        loop {
            let residual = ibp.column_step(gamma);
            ibp.row_step(gamma);
            iterations += 1;
            stage_iterations += 1;
            if iterations >= MAX_ITERATIONS {
                let rounded = ibp.round(gamma);
                if rounded.gap <= additive_error {
                    break 'outer rounded;
                }
                if exact_variables(problem) <= EXACT_VARIABLE_LIMIT {
                    log::warn!(
                        "entropic barycenter stalled at gap {:.3e} after {iterations} sweeps; solving the LP exactly",
                        rounded.gap
                    );
                    return solve_fixed_awb_exact(problem);
                }
                return Err(Error::Convergence {
                    solver: "fixed-support barycenter",
                    iterations,
                    residual,
                    gap: rounded.gap,
                });
            }
            if stage_iterations % CHECK_EVERY == 0 && residual <= stage_tol {
                break;
            }
            if last_stage && stage_iterations % CERTIFY_EVERY == 0 {
                let rounded = ibp.round(gamma);
                if rounded.gap <= additive_error {
                    break 'outer rounded;
                }
            }
            if !last_stage && stage_iterations >= STAGE_ITERATIONS {
                break;
            }
        }
        log::trace!("fixed barycenter: gamma {gamma:.3e}, {iterations} sweeps");
        let rounded = ibp.round(gamma);
        if rounded.gap <= additive_error {
            break rounded;
        }
        if last_stage {
            final_tol *= 0.1;
        } else {
            gamma = (gamma * ANNEAL).max(gamma_final);
        }
    };

    assemble(problem, &ibp.blocks, rounded.weights, rounded.plans, rounded.value)
}

/// Wrap raw plans (with or without the dummy column) as augmented plans.
fn assemble(
    problem: &FixedProblem,
    blocks: &[Block],
    weights: Vec<f64>,
    plans: Vec<Vec<f64>>,
    value: f64,
) -> Result<FixedSolution> {
    let n = problem.support.len();
    let mut b_aug = weights.clone();
    b_aug.push(problem.dummy_mass());
    let plans_aug = blocks
        .iter()
        .zip(plans)
        .map(|(block, p)| {
            let entries = if block.cols == n {
                p.chunks(n).flat_map(|row| row.iter().copied().chain([0.0])).collect()
            } else {
                p
            };
            TransportPlan::new(block.rows, n + 1, entries, block.alpha.clone(), b_aug.clone())
        })
        .collect::<Result<_>>()?;
    Ok(FixedSolution {
        weights,
        plans_aug,
        value,
    })
}

fn exact_variables(problem: &FixedProblem) -> usize {
    let cols = problem.support.len() + 1;
    problem.dataset.measures().iter().map(|mu| mu.len() * cols).sum()
}

/// Exact fixed-support robust barycenter through a dense LP solver.
///
/// Only meant for small instances: more than [`EXACT_VARIABLE_LIMIT`] plan
/// variables is refused.
pub fn solve_fixed_awb_exact(problem: &FixedProblem) -> Result<FixedSolution> {
    use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

    problem.validate()?;
    let n = problem.support.len();
    let cols = n + 1;
    let variables = exact_variables(problem);
    if variables > EXACT_VARIABLE_LIMIT {
        return Err(Error::Capacity(format!(
            "exact barycenter LP would have {variables} plan variables (limit {EXACT_VARIABLE_LIMIT}); \
             use the entropic solver instead"
        )));
    }
    let d = problem.dummy_mass();
    let weights = problem.normalized_weights();
    let grounds = problem.ground_costs()?;
    let blocks: Vec<Block> = problem
        .dataset
        .measures()
        .iter()
        .zip(&grounds)
        .zip(&weights)
        .map(|((mu, ground), &w)| {
            let alpha = mu.weights().iter().map(|x| x / (1.0 - problem.zeta)).collect();
            Block::new(alpha, ground, true, w)
        })
        .collect();

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let b_vars: Vec<_> = (0..n).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let mut plan_vars = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let vars: Vec<_> = block
            .cost
            .iter()
            .map(|c| lp.add_var(block.w * c, (0.0, f64::INFINITY)))
            .collect();
        for i in 0..block.rows {
            let mut row = LinearExpr::empty();
            for j in 0..cols {
                row.add(vars[i * cols + j], 1.0);
            }
            lp.add_constraint(row, ComparisonOp::Eq, block.alpha[i]);
        }
        for j in 0..cols {
            let mut col = LinearExpr::empty();
            for i in 0..block.rows {
                col.add(vars[i * cols + j], 1.0);
            }
            if j < n {
                col.add(b_vars[j], -1.0);
                lp.add_constraint(col, ComparisonOp::Eq, 0.0);
            } else {
                lp.add_constraint(col, ComparisonOp::Eq, d);
            }
        }
        plan_vars.push(vars);
    }
    let solution = lp.solve().map_err(|e| {
        log::warn!("barycenter LP failed: {e}");
        Error::Convergence {
            solver: "barycenter LP",
            iterations: 0,
            residual: f64::NAN,
            gap: f64::NAN,
        }
    })?;

    let mut weights_out: Vec<f64> = b_vars.iter().map(|&v| solution[v].max(0.0)).collect();
    let total: f64 = weights_out.iter().sum();
    weights_out.iter_mut().for_each(|x| *x /= total);
    let mut target = weights_out.clone();
    target.push(d);
    let mut value = 0.0;
    let plans: Vec<Vec<f64>> = blocks
        .iter()
        .zip(&plan_vars)
        .map(|(block, vars)| {
            let mut p: Vec<f64> = vars.iter().map(|&v| solution[v].max(0.0)).collect();
            round_to_marginals(&mut p, block.rows, cols, &block.alpha, &target);
            value += block.w * p.iter().zip(&block.cost).map(|(x, c)| x * c).sum::<f64>();
            p
        })
        .collect();
    assemble(problem, &blocks, weights_out, plans, value)
}
