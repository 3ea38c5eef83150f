//! One step of the minimizing-movement scheme
//! `argmin_ν W₂²(ν, μ)/(2h) + Ent(ν)` and its iteration.
//!
//! Graph model: the problem is lifted to couplings `γ` with first marginal
//! `μ`. A log-domain entropic scaling pass with annealed regularization
//! produces dual potentials, which warm-start a barrier interior-point
//! method on the unregularized dual
//! `max Σμφ − Σ m e^{ψ−1}` subject to `φ_x − ψ_y ≤ d²(x,y)/(2h)`.
//! The optimal measure is `ν = m e^{ψ−1}`. Once the barrier iterate
//! identifies the support of the coupling, the optimum is recovered exactly
//! on a spanning forest of that support and accepted only if it satisfies
//! the optimality conditions. The returned objective is evaluated with an
//! exact transport solve and certified by the dual value.
//!
//! Cells model: Newton's method on the cumulative masses of `ν` at the cell
//! boundaries, with the exact gradient of the one-dimensional transport
//! cost and a backtracking line search on the exact objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{entropy_of, fisher};
use crate::error::{check_len, Error, Result};
use crate::fields::DirichletForm;
use crate::linalg::solve_tridiagonal;
use crate::space::FiniteMetricMeasureSpace;
use crate::transport::cells::{CellGrid, TransportDerivatives};
use crate::transport::{solve_w2, w2_distance, ProbabilityMeasure, TransportModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoOptions {
    pub model: TransportModel,
    /// Bound on the row-marginal violation of the recovered coupling.
    pub marginal_tol: f64,
    /// Bound on the first-order optimality residual.
    pub first_order_tol: f64,
    /// Cap on Newton iterations (interior point or cells).
    pub max_iter: usize,
    /// Cap on scaling sweeps per regularization level.
    pub scaling_sweeps: usize,
}

impl Default for JkoOptions {
    fn default() -> Self {
        Self {
            model: TransportModel::Graph,
            marginal_tol: 1e-10,
            first_order_tol: 1e-8,
            max_iter: 500,
            scaling_sweeps: 200,
        }
    }
}

impl JkoOptions {
    pub fn cells() -> Self {
        Self {
            model: TransportModel::Cells,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoDiagnostics {
    /// `W₂²(ν, μ)/(2h) + Ent(ν)` at the returned `ν`.
    pub objective: f64,
    pub w2_squared: f64,
    pub entropy: f64,
    pub iterations: usize,
    /// Dual objective at the final strictly feasible potentials (graph).
    pub dual_value: Option<f64>,
    /// `objective − dual_value`, an upper bound on suboptimality (graph).
    pub gap: Option<f64>,
    /// `max (φ_x − ψ_y − c_xy)⁺` (graph; zero by construction).
    pub dual_feasibility: f64,
    pub marginal_violation: f64,
    pub first_order_residual: f64,
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )))
    }
}

/// One minimizing-movement step from `mu_prev`.
pub fn jko_step(
    space: &FiniteMetricMeasureSpace,
    mu_prev: &ProbabilityMeasure,
    h: f64,
    opts: &JkoOptions,
) -> Result<(ProbabilityMeasure, JkoDiagnostics)> {
    check_step(h)?;
    check_len(space.n(), mu_prev.len())?;
    let (nu, diag) = match opts.model {
        TransportModel::Graph => graph_step(space, mu_prev.weights(), h, opts)?,
        TransportModel::Cells => {
            let grid = CellGrid::from_space(space)?;
            cells_step(&grid, mu_prev.weights(), h, opts)?
        }
    };
    Ok((ProbabilityMeasure::normalized(nu)?, diag))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Annealed log-domain scaling for
/// `Σcγ + Ent(γᵀ1) + ε KL(γ | m⊗m)` with rows fixed to `μ`. Returns
/// potentials `(φ, ψ)` in the sign convention of the unregularized dual.
fn entropic_warm_start(
    cost: &[f64],
    rows: &[usize],
    mu: &[f64],
    m: &[f64],
    eps_start: f64,
    eps_min: f64,
    sweeps: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (r, n) = (rows.len(), m.len());
    let mut f = vec![0.0; r];
    let mut g = vec![0.0; n];
    let mut eps = eps_start;
    loop {
        for _ in 0..sweeps {
            for a in 0..r {
                let x = rows[a];
                let lse = log_sum_exp((0..n).map(|y| m[y].ln() + (g[y] - cost[a * n + y]) / eps));
                f[a] = eps * (mu[x] / m[x]).ln() - eps * lse;
            }
            let mut change = 0.0f64;
            for y in 0..n {
                let log_s =
                    log_sum_exp((0..r).map(|a| m[rows[a]].ln() + (f[a] - cost[a * n + y]) / eps));
                let next = -eps * (1.0 + log_s) / (1.0 + eps);
                change = change.max((next - g[y]).abs());
                g[y] = next;
            }
            if change <= 1e-9 * (1.0 + eps) {
                break;
            }
        }
        if eps <= eps_min {
            break;
        }
        eps = (eps * 0.5).max(eps_min);
    }
    (f, g.into_iter().map(|v| -v).collect())
}

struct Barrier<'a> {
    cost: &'a [f64],
    mu: Vec<f64>,
    m: &'a [f64],
    r: usize,
    n: usize,
}

impl Barrier<'_> {
    fn slacks(&self, phi: &[f64], psi: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.r * self.n];
        for a in 0..self.r {
            for y in 0..self.n {
                s[a * self.n + y] = self.cost[a * self.n + y] - phi[a] + psi[y];
            }
        }
        s
    }

    fn dual(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let lin: f64 = self.mu.iter().zip(phi).map(|(m, p)| m * p).sum();
        let exp: f64 = self
            .m
            .iter()
            .zip(psi)
            .map(|(m, p)| m * (p - 1.0).exp())
            .sum();
        lin - exp
    }

    /// `−t·dual − Σ log s`, infinite outside the feasible region.
    fn value(&self, t: f64, phi: &[f64], psi: &[f64]) -> f64 {
        let s = self.slacks(phi, psi);
        if s.iter().any(|v| !(*v > 0.0)) {
            return f64::INFINITY;
        }
        -t * self.dual(phi, psi) - s.iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Exact optimum from a support guess: potentials are fixed by equality on
/// a spanning forest of the support, the additive constant of each forest
/// component by its mass balance, and the flows by the forest marginals.
/// Accepted only if the flows are nonnegative and the potentials feasible.
struct Polished {
    phi: Vec<f64>,
    psi: Vec<f64>,
    nu: Vec<f64>,
    row_violation: f64,
    feasibility: f64,
    negativity: f64,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut node = x;
    while parent[node] != root {
        let next = parent[node];
        parent[node] = root;
        node = next;
    }
    root
}

fn active_set_polish(barrier: &Barrier, gamma: &[f64], threshold: f64) -> Option<Polished> {
    let (r, n, m, cost) = (barrier.r, barrier.n, barrier.m, barrier.cost);
    // Large flows, plus the tightest constraint of every column: columns of
    // exponentially small mass are not resolved by the barrier flows.
    let mut keep: Vec<bool> = (0..r * n)
        .map(|k| gamma[k] > threshold * barrier.mu[k / n])
        .collect();
    for y in 0..n {
        let a = (0..r)
            .max_by(|&a, &b| gamma[a * n + y].total_cmp(&gamma[b * n + y]))
            .unwrap();
        keep[a * n + y] = true;
    }
    let mut cells: Vec<usize> = (0..r * n).filter(|&k| keep[k]).collect();
    cells.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]));
    let mut parent: Vec<usize> = (0..r + n).collect();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); r + n];
    let mut forest = Vec::new();
    for k in cells {
        let (a, y) = (k / n, r + k % n);
        let (ra, ry) = (find(&mut parent, a), find(&mut parent, y));
        if ra != ry {
            parent[ra] = ry;
            adj[a].push((y, k));
            adj[y].push((a, k));
            forest.push(k);
        }
    }
    // Potentials up to a constant per component, rooted at a row.
    let mut pot = vec![f64::NAN; r + n];
    let mut comp = vec![usize::MAX; r + n];
    let mut comps = 0;
    for root in 0..r {
        if comp[root] != usize::MAX {
            continue;
        }
        pot[root] = 0.0;
        comp[root] = comps;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for &(w, k) in &adj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = comps;
                    // φ_a − ψ_y = c_k
                    pot[w] = if w >= r {
                        pot[v] - cost[k]
                    } else {
                        pot[v] + cost[k]
                    };
                    stack.push(w);
                }
            }
        }
        comps += 1;
    }
    if comp[r..].contains(&usize::MAX) {
        return None;
    }
    let mut row_mass = vec![0.0; comps];
    let mut col_mass = vec![0.0; comps];
    for a in 0..r {
        row_mass[comp[a]] += barrier.mu[a];
    }
    for y in 0..n {
        col_mass[comp[r + y]] += m[y] * (pot[r + y] - 1.0).exp();
    }
    let shift: Vec<f64> = (0..comps)
        .map(|c| (row_mass[c] / col_mass[c]).ln())
        .collect();
    for v in 0..r + n {
        pot[v] += shift[comp[v]];
    }
    let phi = pot[..r].to_vec();
    let psi = pot[r..].to_vec();
    let nu: Vec<f64> = (0..n).map(|y| m[y] * (psi[y] - 1.0).exp()).collect();
    // Flows by leaf elimination on the forest.
    let mut supply: Vec<f64> = barrier.mu.iter().chain(&nu).copied().collect();
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut used = vec![false; r * n];
    let mut leaves: Vec<usize> = (0..r + n).filter(|&v| degree[v] == 1).collect();
    let mut flow = vec![0.0; r * n];
    while let Some(v) = leaves.pop() {
        if degree[v] != 1 {
            continue;
        }
        let &(w, k) = adj[v].iter().find(|(_, k)| !used[*k])?;
        used[k] = true;
        flow[k] = supply[v];
        supply[v] = 0.0;
        supply[w] -= flow[k];
        degree[v] = 0;
        degree[w] -= 1;
        if degree[w] == 1 {
            leaves.push(w);
        }
    }
    let negativity = forest.iter().map(|&k| -flow[k]).fold(0.0, f64::max);
    if negativity > 1e-14 {
        return None;
    }
    let scale = cost.iter().fold(1.0f64, |acc, c| acc.max(c.abs()));
    let mut feasibility = 0.0f64;
    for a in 0..r {
        for y in 0..n {
            feasibility = feasibility.max(phi[a] - psi[y] - cost[a * n + y]);
        }
    }
    if feasibility > 1e-13 * scale {
        return None;
    }
    let row_violation = (0..r)
        .map(|a| (flow[a * n..(a + 1) * n].iter().sum::<f64>() - barrier.mu[a]).abs())
        .fold(0.0, f64::max);
    Some(Polished {
        phi,
        psi,
        nu,
        row_violation,
        feasibility: feasibility.max(0.0),
        negativity,
    })
}

fn graph_step(
    space: &FiniteMetricMeasureSpace,
    mu: &[f64],
    h: f64,
    opts: &JkoOptions,
) -> Result<(Vec<f64>, JkoDiagnostics)> {
    let n = space.n();
    let m = space.measure();
    let rows: Vec<usize> = (0..n).filter(|&x| mu[x] > 0.0).collect();
    let r = rows.len();
    let mut cost = vec![0.0; r * n];
    for (a, &x) in rows.iter().enumerate() {
        for y in 0..n {
            cost[a * n + y] = space.dist(x, y).powi(2) / (2.0 * h);
        }
    }
    let mut sorted: Vec<f64> = cost.iter().copied().filter(|c| *c > 0.0).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(1.0);
    let eps_min = 1e-3 * space.min_edge().powi(2) / (2.0 * h);
    let (mut phi, mut psi) = entropic_warm_start(
        &cost,
        &rows,
        mu,
        m,
        (0.1 * median).max(eps_min),
        eps_min,
        opts.scaling_sweeps,
    );
    for y in 0..n {
        let need = (0..r)
            .map(|a| phi[a] - cost[a * n + y])
            .fold(f64::NEG_INFINITY, f64::max);
        if psi[y] < need + 1e-3 {
            psi[y] = need + 1e-3;
        }
    }
    let barrier = Barrier {
        cost: &cost,
        mu: rows.iter().map(|&x| mu[x]).collect(),
        m,
        r,
        n,
    };
    let dim = r + n;
    let pairs = (r * n) as f64;
    let mut t = 1.0;
    let mut iterations = 0;
    let mut trace = Vec::new();
    let polished = loop {
        let centered = center(
            &barrier,
            t,
            &mut phi,
            &mut psi,
            opts.max_iter,
            &mut iterations,
            &mut trace,
            dim,
        );
        let dual = barrier.dual(&phi, &psi);
        trace.push(format!("t={t:e}: dual {dual:.15e}, newton {iterations}"));
        if trace.len() > 40 {
            trace.remove(0);
        }
        let gap_bound = pairs / t;
        if gap_bound <= 1e-3 * (1.0 + dual.abs()) || !centered {
            let s = barrier.slacks(&phi, &psi);
            let gamma: Vec<f64> = s.iter().map(|v| 1.0 / (t * v)).collect();
            let found = [1e-6, 1e-9, 1e-3, 1e-12]
                .iter()
                .find_map(|&tau| active_set_polish(&barrier, &gamma, tau));
            if let Some(p) = found {
                break p;
            }
            trace.push(format!("t={t:e}: active-set polish rejected"));
        }
        if !centered || gap_bound <= 1e-12 * (1.0 + dual.abs()) {
            return Err(Error::NoConvergence { iterations, trace });
        }
        t *= 10.0;
    };
    let Polished {
        phi,
        psi,
        mut nu,
        row_violation,
        feasibility,
        negativity,
    } = polished;
    // Complementary slackness and ν = m e^{ψ−1} hold by construction; what
    // remains of the optimality conditions is primal and dual feasibility.
    let first_order_residual = feasibility.max(negativity);
    let total: f64 = nu.iter().sum();
    for v in nu.iter_mut() {
        *v /= total;
    }
    let marginal_violation = row_violation.max((total - 1.0).abs());
    if marginal_violation > opts.marginal_tol || first_order_residual > opts.first_order_tol {
        trace.push(format!(
            "marginal violation {marginal_violation:e}, first-order residual {first_order_residual:e}"
        ));
        return Err(Error::NoConvergence { iterations, trace });
    }
    let prev = ProbabilityMeasure::normalized(mu.to_vec())?;
    let next = ProbabilityMeasure::normalized(nu.clone())?;
    let w2_squared = solve_w2(space, &prev, &next)?.w2.powi(2);
    let entropy = entropy_of(m, &nu);
    let objective = w2_squared / (2.0 * h) + entropy;
    let dual = barrier.dual(&phi, &psi);
    Ok((
        nu,
        JkoDiagnostics {
            objective,
            w2_squared,
            entropy,
            iterations,
            dual_value: Some(dual),
            gap: Some(objective - dual),
            dual_feasibility: feasibility,
            marginal_violation,
            first_order_residual,
        },
    ))
}

/// Damped Newton centering of the barrier at parameter `t`.
#[allow(clippy::too_many_arguments)]
fn center(
    barrier: &Barrier,
    t: f64,
    phi: &mut Vec<f64>,
    psi: &mut Vec<f64>,
    max_iter: usize,
    iterations: &mut usize,
    trace: &mut Vec<String>,
    dim: usize,
) -> bool {
    let (r, n, m) = (barrier.r, barrier.n, barrier.m);
    while *iterations < max_iter {
        *iterations += 1;
        let s = barrier.slacks(phi, psi);
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        for a in 0..r {
            grad[a] = -t * barrier.mu[a];
        }
        for y in 0..n {
            let e = t * m[y] * (psi[y] - 1.0).exp();
            grad[r + y] = e;
            hess[(r + y, r + y)] = e;
        }
        for a in 0..r {
            for y in 0..n {
                let inv = 1.0 / s[a * n + y];
                let inv2 = inv * inv;
                grad[a] += inv;
                grad[r + y] -= inv;
                hess[(a, a)] += inv2;
                hess[(r + y, r + y)] += inv2;
                hess[(a, r + y)] -= inv2;
                hess[(r + y, a)] -= inv2;
            }
        }
        let scale: DVector<f64> = hess.diagonal().map(|d| 1.0 / d.sqrt());
        let scaled = DMatrix::from_fn(dim, dim, |i, j| hess[(i, j)] * scale[i] * scale[j]);
        let rhs = -grad.component_mul(&scale);
        let step = match scaled.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => match scaled.lu().solve(&rhs) {
                Some(x) => x,
                None => {
                    trace.push(format!("t={t:e}: singular Newton system"));
                    return false;
                }
            },
        }
        .component_mul(&scale);
        let decrement = -grad.dot(&step);
        if decrement <= 1e-12 {
            return true;
        }
        let value = barrier.value(t, phi, psi);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial_phi: Vec<f64> = (0..r).map(|a| phi[a] + alpha * step[a]).collect();
            let trial_psi: Vec<f64> = (0..n).map(|y| psi[y] + alpha * step[r + y]).collect();
            let trial = barrier.value(t, &trial_phi, &trial_psi);
            if trial <= value - 0.25 * alpha * decrement {
                *phi = trial_phi;
                *psi = trial_psi;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            trace.push(format!(
                "t={t:e}: line search stalled, decrement {decrement:e}"
            ));
            return decrement <= 1e-6;
        }
    }
    false
}

/// Transport derivatives at the optimal shift and the tridiagonal Newton
/// system `(gradient, diagonal, lower, upper)` in the cumulative variables
/// `F_1 … F_{n−1}`.
fn newton_system(
    grid: &CellGrid,
    mu: &[f64],
    nu: &[f64],
    h: f64,
    theta: f64,
) -> (TransportDerivatives, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = grid.n();
    let widths = grid.widths();
    let der = grid.derivatives(nu, mu, theta);
    let e: Vec<f64> = nu
        .iter()
        .zip(widths)
        .map(|(v, m)| (v / m).ln() + 1.0)
        .collect();
    let k = n - 1;
    let mut grad = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut lower = vec![0.0; k];
    let mut upper = vec![0.0; k];
    for b in 1..n {
        grad[b - 1] = der.grad[b] / h + e[b - 1] - e[b];
        diag[b - 1] = der.diag[b] / h + 1.0 / nu[b - 1] + 1.0 / nu[b];
        if b + 1 < n {
            let off = der.upper[b] / h - 1.0 / nu[b];
            upper[b - 1] = off;
            lower[b] = off;
        }
    }
    (der, grad, diag, lower, upper)
}

fn cells_step(
    grid: &CellGrid,
    mu: &[f64],
    h: f64,
    opts: &JkoOptions,
) -> Result<(Vec<f64>, JkoDiagnostics)> {
    let n = grid.n();
    let widths = grid.widths();
    let mut nu: Vec<f64> = if mu.iter().all(|w| *w > 0.0) {
        mu.to_vec()
    } else {
        let total: f64 = widths.iter().sum();
        mu.iter()
            .zip(widths)
            .map(|(w, m)| 0.999 * w + 0.001 * m / total)
            .collect()
    };
    let objective = |nu: &[f64], theta: f64| -> (f64, f64) {
        let (th, half) = grid.half_cost(nu, mu, theta);
        (half / h + entropy_of(widths, nu), th)
    };
    let (mut value, mut theta) = objective(&nu, 0.0);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut trace = Vec::new();
    while iterations < opts.max_iter {
        iterations += 1;
        let (der, grad, diag, lower, upper) = newton_system(grid, mu, &nu, h, theta);
        theta = der.theta;
        residual = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut step = solve_tridiagonal(&lower, &diag, &upper, &neg);
        if grid.is_periodic() && der.theta_curvature > 0.0 {
            // (T − a·uuᵀ)⁻¹ by Sherman–Morrison with a = 1/(h·W).
            let u: Vec<f64> = (1..n).map(|b| der.mixed[b]).collect();
            let a = 1.0 / (h * der.theta_curvature);
            let z = solve_tridiagonal(&lower, &diag, &upper, &u);
            let uz: f64 = u.iter().zip(&z).map(|(p, q)| p * q).sum();
            let us: f64 = u.iter().zip(&step).map(|(p, q)| p * q).sum();
            let coef = a * us / (1.0 - a * uz);
            for (s, zi) in step.iter_mut().zip(&z) {
                *s += coef * zi;
            }
        }
        let decrement: f64 = -grad.iter().zip(&step).map(|(g, s)| g * s).sum::<f64>();
        if residual <= 1e-3 * opts.first_order_tol || decrement <= 1e-24 {
            break;
        }
        // Cell mass changes: Δν_i = ΔF_{i+1} − ΔF_i with fixed end values.
        let dnu: Vec<f64> = (0..n)
            .map(|i| {
                let up = if i + 1 < n { step[i] } else { 0.0 };
                let down = if i >= 1 { step[i - 1] } else { 0.0 };
                up - down
            })
            .collect();
        let mut alpha: f64 = 1.0;
        for (v, d) in nu.iter().zip(&dnu) {
            if *d < 0.0 {
                alpha = alpha.min(0.99 * v / -d);
            }
        }
        let mut accepted = false;
        // Near the optimum the predicted decrease drops below the rounding
        // level of the objective; a full step is then judged by the
        // gradient instead.
        if alpha == 1.0 && decrement <= 1e-13 * (1.0 + value.abs()) {
            let trial: Vec<f64> = nu.iter().zip(&dnu).map(|(v, d)| v + d).collect();
            let (_, g, ..) = newton_system(grid, mu, &trial, h, theta);
            if g.iter().fold(0.0f64, |a, g| a.max(g.abs())) < residual {
                let (tv, th) = objective(&trial, theta);
                nu = trial;
                value = tv;
                theta = th;
                continue;
            }
        }
        for _ in 0..60 {
            let trial: Vec<f64> = nu.iter().zip(&dnu).map(|(v, d)| v + alpha * d).collect();
            let (tv, th) = objective(&trial, theta);
            if tv <= value - 1e-4 * alpha * decrement {
                nu = trial;
                value = tv;
                theta = th;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            trace.push(format!(
                "iteration {iterations}: line search stalled at residual {residual:e}"
            ));
            break;
        }
    }
    if residual > opts.first_order_tol {
        trace.push(format!(
            "first-order residual {residual:e} after {iterations} iterations"
        ));
        return Err(Error::NoConvergence { iterations, trace });
    }
    let w2_squared = 2.0 * grid.half_cost(&nu, mu, theta).1;
    let entropy = entropy_of(widths, &nu);
    Ok((
        nu.clone(),
        JkoDiagnostics {
            objective: w2_squared / (2.0 * h) + entropy,
            w2_squared,
            entropy,
            iterations,
            dual_value: None,
            gap: None,
            dual_feasibility: 0.0,
            marginal_violation: (nu.iter().sum::<f64>() - 1.0).abs(),
            first_order_residual: residual,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoRecord {
    pub step: usize,
    pub time: f64,
    /// `W₂(μ_k, μ_{k−1})`.
    pub w2: f64,
    pub entropy: f64,
    pub fisher: f64,
    pub diagnostics: JkoDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoTrajectory {
    pub h: f64,
    pub model: TransportModel,
    pub times: Vec<f64>,
    pub measures: Vec<ProbabilityMeasure>,
    pub records: Vec<JkoRecord>,
}

impl JkoTrajectory {
    /// Value of the piecewise-constant interpolant `μ^h(t) = μ_k` on
    /// `((k−1)h, kh]`.
    pub fn at(&self, t: f64) -> &ProbabilityMeasure {
        let k = ((t / self.h) - 1e-9).ceil().max(0.0) as usize;
        &self.measures[k.min(self.measures.len() - 1)]
    }

    pub fn last(&self) -> &ProbabilityMeasure {
        self.measures.last().unwrap()
    }
}

/// `⌈t_end/h⌉` minimizing-movement steps from `mu0`.
pub fn jko_flow(
    space: &FiniteMetricMeasureSpace,
    mu0: &ProbabilityMeasure,
    h: f64,
    t_end: f64,
    opts: &JkoOptions,
) -> Result<JkoTrajectory> {
    check_step(h)?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    let form = DirichletForm::grid(space);
    let steps = ((t_end / h) - 1e-9).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut measures = vec![mu0.clone()];
    let mut records = Vec::with_capacity(steps);
    for k in 1..=steps {
        let prev = measures.last().unwrap();
        let (next, diagnostics) = jko_step(space, prev, h, opts)?;
        let w2 = match opts.model {
            TransportModel::Graph => diagnostics.w2_squared.sqrt(),
            TransportModel::Cells => w2_distance(space, prev, &next, TransportModel::Cells)?,
        };
        records.push(JkoRecord {
            step: k,
            time: k as f64 * h,
            w2,
            entropy: diagnostics.entropy,
            fisher: fisher(&form, &next),
            diagnostics,
        });
        times.push(k as f64 * h);
        measures.push(next);
    }
    Ok(JkoTrajectory {
        h,
        model: opts.model,
        times,
        measures,
        records,
    })
}
