//! Robust Wasserstein distance through the dummy-point augmentation.
//!
//! Each side gets one extra atom at zero cost from everything. The source's
//! dummy row carries the target's outlier budget and vice versa, so an
//! ordinary transport problem on the augmented pair trims exactly the
//! prescribed outlier mass. [`phi_embed`] and [`psi_extract`] convert between
//! the trimmed formulation `(a_out, b_out, P)` and the augmented plan.

use crate::error::{Error, Result};
use crate::measures::{build_cost_matrix, CostMatrix, DiscreteMeasure};
use crate::ot::{solve_ot_entropic, solve_ot_exact, TransportPlan, MARGINAL_TOL};

/// Largest corner entry accepted by [`psi_extract`].
pub const CORNER_TOL: f64 = 1e-10;

/// Outlier masses removed from the source (`zeta_mu`) and target (`zeta_nu`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierBudget {
    zeta_mu: f64,
    zeta_nu: f64,
}

impl OutlierBudget {
    pub fn new(zeta_mu: f64, zeta_nu: f64) -> Result<Self> {
        for (name, z) in [("zeta_mu", zeta_mu), ("zeta_nu", zeta_nu)] {
            if !(0.0..1.0).contains(&z) {
                return Err(Error::input(format!("{name} = {z} must lie in [0, 1)")));
            }
        }
        Ok(OutlierBudget { zeta_mu, zeta_nu })
    }

    /// Outliers only on the source side, as in the barycenter objective.
    pub fn source_only(zeta: f64) -> Result<Self> {
        Self::new(zeta, 0.0)
    }

    pub fn none() -> Self {
        OutlierBudget {
            zeta_mu: 0.0,
            zeta_nu: 0.0,
        }
    }

    pub fn zeta_mu(&self) -> f64 {
        self.zeta_mu
    }

    pub fn zeta_nu(&self) -> f64 {
        self.zeta_nu
    }
}

/// Augmented marginals and cost, each one entry/row/column longer than the
/// original pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub a_aug: Vec<f64>,
    pub b_aug: Vec<f64>,
    pub cost: CostMatrix,
}

/// `a_aug = (a / (1 - zeta_mu); zeta_nu / (1 - zeta_nu))`,
/// `b_aug = (b / (1 - zeta_nu); zeta_mu / (1 - zeta_mu))`, and the ground cost
/// padded with a zero row and a zero column.
pub fn augment_pair(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    budget: OutlierBudget,
    z: f64,
) -> Result<AugmentedPair> {
    let ground = build_cost_matrix(mu.locations(), nu.locations(), z)?;
    Ok(augment_weights(mu.weights(), nu.weights(), &ground, budget))
}

pub(crate) fn augment_weights(
    a: &[f64],
    b: &[f64],
    ground: &CostMatrix,
    budget: OutlierBudget,
) -> AugmentedPair {
    let (zm, zn) = (budget.zeta_mu, budget.zeta_nu);
    let mut a_aug: Vec<f64> = a.iter().map(|x| x / (1.0 - zm)).collect();
    a_aug.push(zn / (1.0 - zn));
    let mut b_aug: Vec<f64> = b.iter().map(|x| x / (1.0 - zn)).collect();
    b_aug.push(zm / (1.0 - zm));
    AugmentedPair {
        a_aug,
        b_aug,
        cost: pad_cost(ground),
    }
}

/// Append a zero column, and a zero row, to a ground cost.
pub(crate) fn pad_cost(ground: &CostMatrix) -> CostMatrix {
    let (n, k) = (ground.rows(), ground.cols());
    let mut entries = Vec::with_capacity((n + 1) * (k + 1));
    for i in 0..n {
        entries.extend_from_slice(ground.row(i));
        entries.push(0.0);
    }
    entries.extend(std::iter::repeat(0.0).take(k + 1));
    CostMatrix::from_entries(n + 1, k + 1, entries, ground.exponent()).expect("padded cost is valid")
}

/// Append only a zero column (target-side dummy).
pub(crate) fn pad_cost_column(ground: &CostMatrix) -> CostMatrix {
    let (n, k) = (ground.rows(), ground.cols());
    let mut entries = Vec::with_capacity(n * (k + 1));
    for i in 0..n {
        entries.extend_from_slice(ground.row(i));
        entries.push(0.0);
    }
    CostMatrix::from_entries(n, k + 1, entries, ground.exponent()).expect("padded cost is valid")
}

/// Map a feasible trimming `(a_out, b_out, P)` to the augmented plan.
///
/// `P`'s stated marginals must be `(a - a_out)/(1 - zeta_mu)` and
/// `(b - b_out)/(1 - zeta_nu)`; the augmented marginals are rebuilt from them.
pub fn phi_embed(
    a_out: &[f64],
    b_out: &[f64],
    plan: &TransportPlan,
    budget: OutlierBudget,
) -> Result<TransportPlan> {
    let (n, k) = (plan.rows(), plan.cols());
    if a_out.len() != n || b_out.len() != k {
        return Err(Error::input("outlier vectors do not match the plan shape"));
    }
    check_outliers("a_out", a_out, budget.zeta_mu)?;
    check_outliers("b_out", b_out, budget.zeta_nu)?;
    plan.check_marginals(MARGINAL_TOL)
        .map_err(|e| Error::input(format!("P is not a coupling of its marginals: {e}")))?;
    let mass = plan.total_mass();
    if (mass - 1.0).abs() > MARGINAL_TOL {
        return Err(Error::input(format!("P must carry unit mass, found {mass}")));
    }

    let (sm, sn) = (1.0 - budget.zeta_mu, 1.0 - budget.zeta_nu);
    let mut entries = Vec::with_capacity((n + 1) * (k + 1));
    for i in 0..n {
        entries.extend_from_slice(plan.row(i));
        entries.push(a_out[i] / sm);
    }
    entries.extend(b_out.iter().map(|x| x / sn));
    entries.push(0.0);

    let mut rows: Vec<f64> = (0..n).map(|i| plan.row_marginal()[i] + a_out[i] / sm).collect();
    rows.push(budget.zeta_nu / sn);
    let mut cols: Vec<f64> = (0..k).map(|j| plan.col_marginal()[j] + b_out[j] / sn).collect();
    cols.push(budget.zeta_mu / sm);
    TransportPlan::new(n + 1, k + 1, entries, rows, cols)
}

fn check_outliers(name: &str, out: &[f64], zeta: f64) -> Result<()> {
    if let Some(x) = out.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::input(format!("{name} has invalid entry {x}")));
    }
    let total: f64 = out.iter().sum();
    if (total - zeta).abs() > MARGINAL_TOL {
        return Err(Error::input(format!(
            "||{name}||_1 = {total} but the budget is {zeta}"
        )));
    }
    Ok(())
}

/// Inverse of [`phi_embed`]: returns `(a_out, b_out, P)`.
pub fn psi_extract(
    plan_aug: &TransportPlan,
    budget: OutlierBudget,
) -> Result<(Vec<f64>, Vec<f64>, TransportPlan)> {
    if plan_aug.rows() < 2 || plan_aug.cols() < 2 {
        return Err(Error::input("augmented plan needs at least 2x2 entries"));
    }
    let (n, k) = (plan_aug.rows() - 1, plan_aug.cols() - 1);
    let corner = plan_aug.get(n, k);
    if corner > CORNER_TOL {
        return Err(Error::input(format!(
            "dummy-to-dummy entry is {corner:.3e}, must be zero"
        )));
    }
    plan_aug
        .check_marginals(MARGINAL_TOL)
        .map_err(|e| Error::input(format!("augmented plan: {e}")))?;

    let (sm, sn) = (1.0 - budget.zeta_mu, 1.0 - budget.zeta_nu);
    let a_out: Vec<f64> = (0..n).map(|i| sm * plan_aug.get(i, k)).collect();
    let b_out: Vec<f64> = (0..k).map(|j| sn * plan_aug.get(n, j)).collect();
    let mut entries = Vec::with_capacity(n * k);
    for i in 0..n {
        entries.extend_from_slice(&plan_aug.row(i)[..k]);
    }
    let rows = (0..n).map(|i| plan_aug.row_marginal()[i] - plan_aug.get(i, k)).collect();
    let cols = (0..k).map(|j| plan_aug.col_marginal()[j] - plan_aug.get(n, j)).collect();
    let plan = TransportPlan::new(n, k, entries, rows, cols)?;
    Ok((a_out, b_out, plan))
}

/// Move dummy-to-dummy mass back onto real cells. Each move keeps both
/// marginals and never increases the cost.
pub(crate) fn clear_corner(entries: &mut [f64], rows: usize, cols: usize) {
    let (n, k) = (rows - 1, cols - 1);
    let corner = n * cols + k;
    for i in 0..n {
        for j in 0..k {
            let left = entries[corner];
            if left <= 0.0 {
                entries[corner] = 0.0;
                return;
            }
            let t = left.min(entries[i * cols + j]);
            if t <= 0.0 {
                continue;
            }
            entries[corner] -= t;
            entries[i * cols + j] -= t;
            entries[i * cols + k] += t;
            entries[n * cols + j] += t;
        }
    }
    if entries[corner] <= CORNER_TOL {
        entries[corner] = 0.0;
    }
}

/// How the augmented transport problem is solved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolveMode {
    Exact,
    Entropic { additive_error: f64 },
}

/// Trimmed coupling and its cost `W_z^z` (the z-th power of the robust distance).
#[derive(Clone, Debug, PartialEq)]
pub struct RobustSolution {
    pub value: f64,
    pub plan: TransportPlan,
    pub a_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub plan_aug: TransportPlan,
}

/// Robust transport cost between `mu` and `nu`: the augmented problem is
/// solved, then the trimming is read off the dummy row and column.
pub fn robust_distance(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    budget: OutlierBudget,
    z: f64,
    mode: SolveMode,
) -> Result<RobustSolution> {
    let aug = augment_pair(mu, nu, budget, z)?;
    solve_augmented(&aug, budget, mode)
}

pub(crate) fn solve_augmented(
    aug: &AugmentedPair,
    budget: OutlierBudget,
    mode: SolveMode,
) -> Result<RobustSolution> {
    let solution = match mode {
        SolveMode::Exact => solve_ot_exact(&aug.a_aug, &aug.b_aug, &aug.cost)?,
        SolveMode::Entropic { additive_error } => {
            solve_ot_entropic(&aug.a_aug, &aug.b_aug, &aug.cost, additive_error)?
        }
    };
    let (rows, cols) = (solution.plan.rows(), solution.plan.cols());
    let mut entries = solution.plan.entries().to_vec();
    clear_corner(&mut entries, rows, cols);
    let plan_aug = TransportPlan::new(rows, cols, entries, aug.a_aug.clone(), aug.b_aug.clone())?;
    let (a_out, b_out, plan) = psi_extract(&plan_aug, budget)?;
    Ok(RobustSolution {
        value: plan_aug.cost(&aug.cost),
        plan,
        a_out,
        b_out,
        plan_aug,
    })
}

/// The robust distance itself, `(W_z^z)^(1/z)`.
pub fn robust_distance_root(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    budget: OutlierBudget,
    z: f64,
) -> Result<f64> {
    Ok(robust_distance(mu, nu, budget, z, SolveMode::Exact)?.value.max(0.0).powf(1.0 / z))
}

/// Exact robust cost with outliers trimmed from `mu` only.
pub fn robust_power(mu: &DiscreteMeasure, nu: &DiscreteMeasure, zeta: f64, z: f64) -> Result<f64> {
    let budget = OutlierBudget::source_only(zeta)?;
    Ok(robust_distance(mu, nu, budget, z, SolveMode::Exact)?.value.max(0.0))
}
