//! Transportation simplex on a dense balanced `m × n` instance.
//!
//! The basis is a spanning tree of the bipartite row/column graph with
//! `m + n − 1` cells, zero-flow cells allowed. Entering cells are priced by
//! Dantzig's rule; after a run of degenerate pivots the solver switches to
//! Bland's rule (smallest index entering and leaving) until a pivot moves
//! mass again.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) struct SimplexSolution {
    /// Row-major `m × n` optimal flow.
    pub flow: Vec<f64>,
    /// Row duals; `u_i + v_j = c_ij` on the final basis.
    pub u: Vec<f64>,
    /// Column duals.
    #[cfg_attr(not(test), allow(dead_code))]
    pub v: Vec<f64>,
    pub pivots: usize,
}

struct Basis {
    m: usize,
    n: usize,
    cells: Vec<usize>,
    in_basis: Vec<bool>,
}

impl Basis {
    fn cell(&self, k: usize) -> (usize, usize) {
        (k / self.n, k % self.n)
    }

    /// Tree adjacency: rows are nodes `0..m`, columns `m..m+n`; each entry
    /// holds `(neighbor node, cell index)`.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &k in &self.cells {
            let (i, j) = self.cell(k);
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }
}

fn northwest_corner(supply: &[f64], demand: &[f64]) -> (Vec<f64>, Basis) {
    let (m, n) = (supply.len(), demand.len());
    let mut flow = vec![0.0; m * n];
    let mut a = supply.to_vec();
    let mut b = demand.to_vec();
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = a[i].max(0.0).min(b[j].max(0.0));
        flow[i * n + j] = x;
        cells.push(i * n + j);
        a[i] -= x;
        b[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    let mut in_basis = vec![false; m * n];
    for &k in &cells {
        in_basis[k] = true;
    }
    (
        flow,
        Basis {
            m,
            n,
            cells,
            in_basis,
        },
    )
}

fn duals(basis: &Basis, cost: &[f64], adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (basis.m, basis.n);
    let mut pot = vec![f64::NAN; m + n];
    pot[0] = 0.0;
    let mut stack = vec![0usize];
    while let Some(node) = stack.pop() {
        for &(next, k) in &adj[node] {
            if pot[next].is_nan() {
                pot[next] = cost[k] - pot[node];
                stack.push(next);
            }
        }
    }
    let v = pot.split_off(m);
    (pot, v)
}

/// Cells on the tree path from row `i` to column `j`, ordered from `i`.
fn tree_path(adj: &[Vec<(usize, usize)>], m: usize, i: usize, j: usize) -> Vec<usize> {
    let target = m + j;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    seen[i] = true;
    let mut queue = VecDeque::from([i]);
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &(next, k) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, k));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = target;
    while let Some((prev, k)) = parent[node] {
        path.push(k);
        node = prev;
    }
    path.reverse();
    path
}

/// Minimizes `Σ cost·flow` subject to row sums `supply` and column sums
/// `demand`. Both marginals must be nonnegative with equal totals.
pub(crate) fn transportation_simplex(
    cost: &[f64],
    supply: &[f64],
    demand: &[f64],
) -> Result<SimplexSolution> {
    let (m, n) = (supply.len(), demand.len());
    let (mut flow, mut basis) = northwest_corner(supply, demand);
    let scale = cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-13 * scale;
    let max_pivots = 50 * m * n + 1000;
    let degenerate_limit = m + n;
    let mut degenerate_run = 0;
    let mut trace: VecDeque<String> = VecDeque::new();
    let mut pivots = 0;
    loop {
        let adj = basis.adjacency();
        let (u, v) = duals(&basis, cost, &adj);
        let bland = degenerate_run > degenerate_limit;
        let mut entering: Option<(usize, f64)> = None;
        'pricing: for i in 0..m {
            for j in 0..n {
                let k = i * n + j;
                if basis.in_basis[k] {
                    continue;
                }
                let rc = cost[k] - u[i] - v[j];
                if rc < -tol {
                    if bland {
                        entering = Some((k, rc));
                        break 'pricing;
                    }
                    if entering.is_none_or(|(_, best)| rc < best) {
                        entering = Some((k, rc));
                    }
                }
            }
        }
        let Some((enter, rc)) = entering else {
            return Ok(SimplexSolution { flow, u, v, pivots });
        };
        if pivots >= max_pivots {
            return Err(Error::SimplexStalled {
                iterations: pivots,
                trace: trace.into(),
            });
        }
        let (ei, ej) = basis.cell(enter);
        let path = tree_path(&adj, m, ei, ej);
        // Path cells alternate −, +, −, … starting from the row side.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 && (flow[k] < theta || (flow[k] == theta && k < leaving)) {
                theta = flow[k];
                leaving = k;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                flow[k] = (flow[k] - theta).max(0.0);
            } else {
                flow[k] += theta;
            }
        }
        flow[enter] = theta;
        flow[leaving] = 0.0;
        basis.in_basis[leaving] = false;
        basis.in_basis[enter] = true;
        let slot = basis.cells.iter().position(|&k| k == leaving).unwrap();
        basis.cells[slot] = enter;
        degenerate_run = if theta > 0.0 { 0 } else { degenerate_run + 1 };
        pivots += 1;
        trace.push_back(format!(
            "pivot {pivots}: enter ({ei},{ej}) rc={rc:e}, leave ({},{}), theta={theta:e}{}",
            leaving / n,
            leaving % n,
            if bland { " [bland]" } else { "" }
        ));
        if trace.len() > 20 {
            trace.pop_front();
        }
    }
}
