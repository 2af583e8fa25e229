//! Discrete optimal transport with arbitrary nonnegative costs.
//!
//! [`solve_ot_exact`] runs a dense transportation simplex and is the reference
//! solver for everything else in the crate. [`solve_ot_entropic`] runs
//! log-domain Sinkhorn iterations followed by a rounding step, so its plan
//! satisfies both marginals exactly and its cost is within the requested
//! additive error of the optimum.

mod simplex;
mod sinkhorn;

use crate::error::{Error, Result};
use crate::measures::{build_cost_matrix, CostMatrix, DiscreteMeasure};

pub(crate) use sinkhorn::{logsumexp, round_to_marginals};

/// Tolerance on plan marginals and on mass balance between `a` and `b`.
pub const MARGINAL_TOL: f64 = 1e-8;

/// Nonnegative coupling with prescribed row and column marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl TransportPlan {
    /// Checks nonnegativity and that both marginals hold within [`MARGINAL_TOL`].
    pub fn new(
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
    ) -> Result<Self> {
        let plan = Self::from_parts(rows, cols, entries, row_marginal, col_marginal)?;
        plan.check_marginals(MARGINAL_TOL)?;
        Ok(plan)
    }

    /// Takes the realized row/column sums as the marginals.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::input("plan entry count does not match its shape"));
        }
        let mut plan = TransportPlan {
            rows,
            cols,
            entries,
            row_marginal: Vec::new(),
            col_marginal: Vec::new(),
        };
        plan.row_marginal = plan.row_sums();
        plan.col_marginal = plan.col_sums();
        plan.check_nonnegative()?;
        Ok(plan)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::input("ragged plan"));
        }
        Self::from_entries(r, c, rows.concat())
    }

    fn from_parts(
        rows: usize,
        cols: usize,
        entries: Vec<f64>,
        row_marginal: Vec<f64>,
        col_marginal: Vec<f64>,
    ) -> Result<Self> {
        if entries.len() != rows * cols || row_marginal.len() != rows || col_marginal.len() != cols {
            return Err(Error::input("plan shape does not match its marginals"));
        }
        let plan = TransportPlan {
            rows,
            cols,
            entries,
            row_marginal,
            col_marginal,
        };
        plan.check_nonnegative()?;
        Ok(plan)
    }

    fn check_nonnegative(&self) -> Result<()> {
        match self.entries.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            Some(p) => Err(Error::input(format!("plan entry {p} is negative or not finite"))),
            None => Ok(()),
        }
    }

    /// Maximum absolute deviation of the realized sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let r = self.row_sums();
        let c = self.col_sums();
        r.iter()
            .zip(&self.row_marginal)
            .chain(c.iter().zip(&self.col_marginal))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_marginals(&self, tol: f64) -> Result<()> {
        let err = self.marginal_error();
        if err > tol {
            return Err(Error::input(format!(
                "plan marginals violated by {err:.3e} (tolerance {tol:e})"
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, p) in sums.iter_mut().zip(self.row(i)) {
                *s += p;
            }
        }
        sums
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// `<P, C>`.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        debug_assert_eq!((cost.rows(), cost.cols()), (self.rows, self.cols));
        self.entries.iter().zip(cost.entries()).map(|(p, c)| p * c).sum()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Optimal (or near-optimal) value together with its plan.
#[derive(Clone, Debug, PartialEq)]
pub struct OtSolution {
    pub value: f64,
    pub plan: TransportPlan,
}

/// Validated problem with zero-mass rows and columns removed.
pub(crate) struct Reduced {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub cost: Vec<f64>,
}

impl Reduced {
    fn new(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<Self> {
        validate(a, b, cost)?;
        let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
        let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
        let ra: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
        let mut rb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
        // Rebalance `b` onto the mass of `a`; the two differ by at most MARGINAL_TOL.
        let (sa, sb): (f64, f64) = (ra.iter().sum(), rb.iter().sum());
        if sb > 0.0 && sa != sb {
            let scale = sa / sb;
            rb.iter_mut().for_each(|x| *x *= scale);
        }
        let mut sub = Vec::with_capacity(rows.len() * cols.len());
        for &i in &rows {
            for &j in &cols {
                sub.push(cost.get(i, j));
            }
        }
        Ok(Reduced {
            rows,
            cols,
            a: ra,
            b: rb,
            cost: sub,
        })
    }

    fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.cols.is_empty()
    }

    /// Scatter a reduced plan back to the full shape.
    fn expand(&self, sub: &[f64], a: &[f64], b: &[f64]) -> TransportPlan {
        let cols = b.len();
        let mut entries = vec![0.0; a.len() * cols];
        let n = self.cols.len();
        for (ri, &i) in self.rows.iter().enumerate() {
            for (cj, &j) in self.cols.iter().enumerate() {
                entries[i * cols + j] = sub[ri * n + cj];
            }
        }
        TransportPlan {
            rows: a.len(),
            cols,
            entries,
            row_marginal: a.to_vec(),
            col_marginal: b.to_vec(),
        }
    }
}

fn validate(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("marginals must be nonempty"));
    }
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(Error::input(format!(
            "cost matrix is {}x{} but marginals have lengths {} and {}",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    if let Some(x) = a.iter().chain(b).find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::input(format!("marginal entry {x} is negative or not finite")));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > MARGINAL_TOL {
        return Err(Error::input(format!(
            "marginal masses differ: {sa} vs {sb}"
        )));
    }
    Ok(())
}

/// Exact optimal transport by the transportation simplex.
pub fn solve_ot_exact(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<OtSolution> {
    let reduced = Reduced::new(a, b, cost)?;
    let sub = if reduced.is_empty() {
        Vec::new()
    } else {
        simplex::solve(&reduced.a, &reduced.b, &reduced.cost)?
    };
    let plan = reduced.expand(&sub, a, b);
    Ok(OtSolution {
        value: plan.cost(cost),
        plan,
    })
}

/// Entropic optimal transport with additive error `additive_error`: the
/// returned plan satisfies both marginals and costs at most the optimum plus
/// `additive_error`. If Sinkhorn cannot certify that bound within its
/// iteration budget, the transportation simplex finishes the job.
pub fn solve_ot_entropic(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
    additive_error: f64,
) -> Result<OtSolution> {
    if !(additive_error > 0.0 && additive_error.is_finite()) {
        return Err(Error::input(format!(
            "additive error must be positive, got {additive_error}"
        )));
    }
    let reduced = Reduced::new(a, b, cost)?;
    let sub = if reduced.is_empty() {
        Vec::new()
    } else {
        match sinkhorn::solve(&reduced.a, &reduced.b, &reduced.cost, additive_error) {
            Err(Error::Convergence { iterations, gap, .. }) => {
                log::warn!("sinkhorn stalled at gap {gap:.3e} after {iterations} sweeps; solving exactly");
                simplex::solve(&reduced.a, &reduced.b, &reduced.cost)?
            }
            other => other?,
        }
    };
    let plan = reduced.expand(&sub, a, b);
    Ok(OtSolution {
        value: plan.cost(cost),
        plan,
    })
}

/// `W_z(mu, nu)` under the Euclidean ground metric.
pub fn wasserstein_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, z: f64) -> Result<f64> {
    Ok(wasserstein_power(mu, nu, z)?.powf(1.0 / z))
}

/// `W_z^z(mu, nu)`, the optimal transport cost itself.
pub fn wasserstein_power(mu: &DiscreteMeasure, nu: &DiscreteMeasure, z: f64) -> Result<f64> {
    let cost = build_cost_matrix(mu.locations(), nu.locations(), z)?;
    Ok(solve_ot_exact(mu.weights(), nu.weights(), &cost)?.value.max(0.0))
}
