//! Dense transportation simplex (MODI / stepping-stone method).
//!
//! Start: north-west corner rule. Entering cell: most negative reduced cost
//! (Dantzig); after a run of degenerate pivots the rule switches to Bland's
//! lowest-index choice for both entering and leaving cells until a pivot moves
//! mass again.

use crate::error::{Error, Result};

/// Consecutive zero-step pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Rule {
    Dantzig,
    Bland,
}

struct Tableau<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    flow: Vec<f64>,
    basic: Vec<bool>,
    /// Basic cells as flat indices `i * n + j`; always `m + n - 1` of them.
    basis: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Solve `min <P, C>` over `P 1 = a, P^T 1 = b`, all entries of `a`, `b`
/// strictly positive with equal sums. Returns the plan row-major.
pub(super) fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.len(), b.len());
    debug_assert_eq!(cost.len(), m * n);
    if m == 1 || n == 1 {
        // The coupling is unique.
        let mut flow = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                flow[i * n + j] = if m == 1 { b[j] } else { a[i] };
            }
        }
        return Ok(flow);
    }

    let mut t = Tableau::north_west(a, b, cost);
    let scale = cost.iter().copied().fold(0.0, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    let mass: f64 = a.iter().sum();
    let max_pivots = 50 * m * n + 1000;

    let mut rule = Rule::Dantzig;
    let mut degenerate = 0;
    for _ in 0..max_pivots {
        t.potentials();
        let Some(enter) = t.entering(rule, tol) else {
            return Ok(t.flow);
        };
        let theta = t.pivot(enter, rule);
        if theta <= 1e-15 * mass {
            degenerate += 1;
            if degenerate >= DEGENERATE_RUN {
                rule = Rule::Bland;
            }
        } else {
            degenerate = 0;
            rule = Rule::Dantzig;
        }
    }
    Err(Error::Convergence {
        solver: "transportation simplex",
        iterations: max_pivots,
        residual: f64::NAN,
        gap: f64::NAN,
    })
}

impl<'a> Tableau<'a> {
    fn north_west(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut flow = vec![0.0; m * n];
        let mut basic = vec![false; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]).max(0.0);
            let k = i * n + j;
            flow[k] = x;
            basic[k] = true;
            basis.push(k);
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
        Tableau {
            m,
            n,
            cost,
            flow,
            basic,
            basis,
            u: vec![0.0; m],
            v: vec![0.0; n],
        }
    }

    /// Adjacency of the basis tree: nodes `0..m` are rows, `m..m+n` columns.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &k in &self.basis {
            let (i, j) = (k / self.n, k % self.n);
            adj[i].push(self.m + j);
            adj[self.m + j].push(i);
        }
        adj
    }

    /// Solve `u_i + v_j = c_ij` on basic cells with `u_0 = 0`.
    fn potentials(&mut self) {
        let adj = self.adjacency();
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &next in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                if node < self.m {
                    let j = next - self.m;
                    self.v[j] = self.cost[node * self.n + j] - self.u[node];
                } else {
                    let j = node - self.m;
                    self.u[next] = self.cost[next * self.n + j] - self.v[j];
                }
                stack.push(next);
            }
        }
    }

    fn entering(&self, rule: Rule, tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            for j in 0..self.n {
                let k = i * self.n + j;
                if self.basic[k] {
                    continue;
                }
                let reduced = self.cost[k] - self.u[i] - self.v[j];
                if reduced >= -tol {
                    continue;
                }
                match rule {
                    Rule::Bland => return Some(k),
                    Rule::Dantzig => {
                        if best.map_or(true, |(_, r)| reduced < r) {
                            best = Some((k, reduced));
                        }
                    }
                }
            }
        }
        best.map(|(k, _)| k)
    }

    /// Cells of the cycle closed by `enter`, in order, starting with `enter`.
    /// Even positions gain mass, odd positions lose it.
    fn cycle(&self, enter: usize) -> Vec<usize> {
        let (ei, ej) = (enter / self.n, enter % self.n);
        let adj = self.adjacency();
        let target = self.m + ej;
        let mut parent = vec![usize::MAX; self.m + self.n];
        let mut queue = std::collections::VecDeque::from([ei]);
        parent[ei] = ei;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        // Walk back from the entering column to the entering row.
        let mut cells = vec![enter];
        let mut node = target;
        while node != ei {
            let prev = parent[node];
            let (row, col) = if node < self.m {
                (node, prev - self.m)
            } else {
                (prev, node - self.m)
            };
            cells.push(row * self.n + col);
            node = prev;
        }
        cells
    }

    /// Pivot `enter` into the basis; returns the step length.
    fn pivot(&mut self, enter: usize, rule: Rule) -> f64 {
        let cells = self.cycle(enter);
        let mut leave = usize::MAX;
        let mut theta = f64::INFINITY;
        for &k in cells.iter().skip(1).step_by(2) {
            let f = self.flow[k];
            let better = match rule {
                Rule::Dantzig => f < theta,
                Rule::Bland => f < theta || (f == theta && k < leave),
            };
            if better {
                theta = f;
                leave = k;
            }
        }
        let theta = theta.max(0.0);
        for (pos, &k) in cells.iter().enumerate() {
            if pos % 2 == 0 {
                self.flow[k] += theta;
            } else {
                self.flow[k] = (self.flow[k] - theta).max(0.0);
            }
        }
        self.flow[leave] = 0.0;
        self.basic[leave] = false;
        self.basic[enter] = true;
        let slot = self.basis.iter().position(|&k| k == leave).expect("leaving cell is basic");
        self.basis[slot] = enter;
        theta
    }
}
