//! Log-domain Sinkhorn with temperature annealing, marginal rounding and a
//! duality-gap certificate.
//!
//! The final temperature is `eps / (4 * mass * ln(m n))`. Iterations stop once
//! the rounded plan is certified: its cost minus the value of a feasible dual
//! pair (obtained by c-transforms of the Sinkhorn potentials) is at most `eps`.

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100_000;
/// Iteration cap for each intermediate temperature.
const STAGE_ITERATIONS: usize = 2000;
/// Temperature decrease factor between stages.
const ANNEAL: f64 = 0.5;
/// Residual is measured every this many sweeps.
const CHECK_EVERY: usize = 5;
/// At the final temperature, the rounded plan is certified this often.
const CERTIFY_EVERY: usize = 100;

/// `ln(sum_k exp(x_k))`, stable for large magnitudes.
pub(crate) fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Repair the marginals of a nearly feasible plan: scale down rows and
/// columns that exceed their targets, then add a rank-one correction
/// carrying the missing mass. The result lies in `Pi(a, b)` whenever
/// `sum(a) = sum(b)`.
pub(crate) fn round_to_marginals(plan: &mut [f64], m: usize, n: usize, a: &[f64], b: &[f64]) {
    for i in 0..m {
        let row = &mut plan[i * n..(i + 1) * n];
        let r: f64 = row.iter().sum();
        if r > a[i] {
            let s = if r > 0.0 { a[i] / r } else { 0.0 };
            row.iter_mut().for_each(|p| *p *= s);
        }
    }
    let mut col = vec![0.0; n];
    for i in 0..m {
        for (c, p) in col.iter_mut().zip(&plan[i * n..(i + 1) * n]) {
            *c += p;
        }
    }
    for j in 0..n {
        if col[j] > b[j] {
            let s = if col[j] > 0.0 { b[j] / col[j] } else { 0.0 };
            for i in 0..m {
                plan[i * n + j] *= s;
            }
        }
    }
    let err_r: Vec<f64> = (0..m)
        .map(|i| (a[i] - plan[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0))
        .collect();
    let mut err_c = b.to_vec();
    for i in 0..m {
        for j in 0..n {
            err_c[j] -= plan[i * n + j];
        }
    }
    err_c.iter_mut().for_each(|e| *e = e.max(0.0));
    let total: f64 = err_c.iter().sum();
    if total > 0.0 {
        for i in 0..m {
            for j in 0..n {
                plan[i * n + j] += err_r[i] * err_c[j] / total;
            }
        }
    }
}

struct Problem<'a> {
    m: usize,
    n: usize,
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a [f64],
    cost_t: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl Problem<'_> {
    fn update_rows(&self, f: &mut [f64], g: &[f64], gamma: f64) {
        for i in 0..self.m {
            let row = &self.cost[i * self.n..(i + 1) * self.n];
            let lse = logsumexp(g.iter().zip(row).map(|(gj, c)| (gj - c) / gamma));
            f[i] = gamma * (self.log_a[i] - lse);
        }
    }

    fn update_cols(&self, f: &[f64], g: &mut [f64], gamma: f64) {
        for j in 0..self.n {
            let col = &self.cost_t[j * self.m..(j + 1) * self.m];
            let lse = logsumexp(f.iter().zip(col).map(|(fi, c)| (fi - c) / gamma));
            g[j] = gamma * (self.log_b[j] - lse);
        }
    }

    fn plan(&self, f: &[f64], g: &[f64], gamma: f64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.m * self.n);
        for i in 0..self.m {
            for j in 0..self.n {
                p.push(((f[i] + g[j] - self.cost[i * self.n + j]) / gamma).exp());
            }
        }
        p
    }

    /// L1 distance of the row sums to `a` (columns are exact after a column sweep).
    fn row_residual(&self, f: &[f64], g: &[f64], gamma: f64) -> f64 {
        (0..self.m)
            .map(|i| {
                let row = &self.cost[i * self.n..(i + 1) * self.n];
                let r: f64 = g
                    .iter()
                    .zip(row)
                    .map(|(gj, c)| ((f[i] + gj - c) / gamma).exp())
                    .sum();
                (r - self.a[i]).abs()
            })
            .sum()
    }

    /// Rounded plan and its certified optimality gap.
    fn certify(&self, f: &[f64], g: &[f64], gamma: f64) -> (Vec<f64>, f64) {
        let mut plan = self.plan(f, g, gamma);
        round_to_marginals(&mut plan, self.m, self.n, self.a, self.b);
        let primal: f64 = plan.iter().zip(self.cost).map(|(p, c)| p * c).sum();
        // Double c-transform gives a feasible dual pair.
        let fc: Vec<f64> = (0..self.m)
            .map(|i| {
                let row = &self.cost[i * self.n..(i + 1) * self.n];
                row.iter().zip(g).map(|(c, gj)| c - gj).fold(f64::INFINITY, f64::min)
            })
            .collect();
        let gc: Vec<f64> = (0..self.n)
            .map(|j| {
                let col = &self.cost_t[j * self.m..(j + 1) * self.m];
                col.iter().zip(&fc).map(|(c, fi)| c - fi).fold(f64::INFINITY, f64::min)
            })
            .collect();
        let dual: f64 = self.a.iter().zip(&fc).map(|(x, y)| x * y).sum::<f64>()
            + self.b.iter().zip(&gc).map(|(x, y)| x * y).sum::<f64>();
        (plan, (primal - dual).max(0.0))
    }
}

/// Entropic OT on strictly positive, balanced marginals; returns the rounded plan.
pub(super) fn solve(a: &[f64], b: &[f64], cost: &[f64], eps: f64) -> Result<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    let mass: f64 = a.iter().sum();
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    if m == 1 || n == 1 || max_cost == 0.0 {
        // Unique coupling, or every coupling is optimal.
        let mut p = Vec::with_capacity(m * n);
        for &ai in a {
            for &bj in b {
                p.push(ai * bj / mass);
            }
        }
        return Ok(p);
    }

    let mut cost_t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            cost_t[j * m + i] = cost[i * n + j];
        }
    }
    let problem = Problem {
        m,
        n,
        a,
        b,
        cost,
        cost_t,
        log_a: a.iter().map(|x| x.ln()).collect(),
        log_b: b.iter().map(|x| x.ln()).collect(),
    };

    let gamma_final = eps / (4.0 * mass * ((m * n) as f64).ln());
    let target = eps / (4.0 * max_cost);
    let mut gamma = max_cost.max(gamma_final);
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut final_tol = target;

    loop {
        let last_stage = gamma <= gamma_final;
        let stage_tol = if last_stage { final_tol } else { (1e-3 * mass).max(target) };
        let mut residual = f64::INFINITY;
        let mut stage_iterations = 0;
        loop {
            problem.update_rows(&mut f, &g, gamma);
            problem.update_cols(&f, &mut g, gamma);
            iterations += 1;
            stage_iterations += 1;
            if stage_iterations % CHECK_EVERY == 0 || iterations >= MAX_ITERATIONS {
                residual = problem.row_residual(&f, &g, gamma);
                if residual <= stage_tol {
                    break;
                }
            }
            if iterations >= MAX_ITERATIONS {
                let (_, gap) = problem.certify(&f, &g, gamma);
                if gap <= eps {
                    break;
                }
                return Err(Error::Convergence {
                    solver: "sinkhorn",
                    iterations,
                    residual,
                    gap,
                });
            }
            if last_stage && stage_iterations % CERTIFY_EVERY == 0 {
                let (plan, gap) = problem.certify(&f, &g, gamma);
                if gap <= eps {
                    return Ok(plan);
                }
            }
            if !last_stage && stage_iterations >= STAGE_ITERATIONS {
                break;
            }
        }
        let (plan, gap) = problem.certify(&f, &g, gamma);
        if gap <= eps {
            return Ok(plan);
        }
        if last_stage {
            final_tol *= 0.1;
        } else {
            gamma = (gamma * ANNEAL).max(gamma_final);
        }
    }
}
