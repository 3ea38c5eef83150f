//! Optimal transport certificates: duality audits, the triangle inequality
//! and an exhaustive basic-solution oracle on tiny instances.

use mmslab_core::space::FiniteMetricMeasureSpace;
use mmslab_core::transport::{solve_w2, ProbabilityMeasure};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{instance_rng, random_graph, random_measure, Tally};
use crate::error::{HarnessError, Result};
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtParams {
    pub instances: usize,
    pub max_n: usize,
    pub triples: usize,
    pub tiny_instances: usize,
    /// Probability that a point of a random measure is empty.
    pub sparsity: f64,
    pub tol: f64,
    pub oracle_tol: f64,
}

impl Default for OtParams {
    fn default() -> Self {
        Self {
            instances: 500,
            max_n: 30,
            triples: 200,
            tiny_instances: 200,
            sparsity: 0.3,
            tol: 1e-9,
            oracle_tol: 1e-6,
        }
    }
}

impl OtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_n < 2 {
            return Err(HarnessError::config(
                "experiment.max_n",
                "max_n must be at least 2",
            ));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(HarnessError::config(
                "experiment.sparsity",
                "must lie in [0, 1)",
            ));
        }
        if !(self.tol > 0.0 && self.oracle_tol > 0.0) {
            return Err(HarnessError::config(
                "experiment.tol",
                "tolerances must be positive",
            ));
        }
        Ok(())
    }
}

/// Minimum of `Σ c·γ` over all basic feasible solutions of the
/// transportation polytope, found by enumerating every spanning tree of the
/// complete bipartite graph on rows and columns. Exponential; meant for
/// `n ≤ 3`.
pub fn vertex_oracle(cost: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (r, c) = (a.len(), b.len());
    let cells = r * c;
    let basis = r + c - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << cells) {
        if mask.count_ones() as usize != basis {
            continue;
        }
        let chosen: Vec<usize> = (0..cells).filter(|k| mask >> k & 1 == 1).collect();
        if let Some(flow) = tree_flow(&chosen, a, b) {
            if flow.iter().all(|(_, f)| *f >= -1e-15) {
                let total: f64 = flow.iter().map(|(k, f)| cost[*k] * f).sum();
                best = best.min(total);
            }
        }
    }
    best
}

/// Flows on the cells of a spanning tree by repeated leaf elimination;
/// `None` when the cells contain a cycle.
fn tree_flow(cells: &[usize], a: &[f64], b: &[f64]) -> Option<Vec<(usize, f64)>> {
    let (r, c) = (a.len(), b.len());
    let mut supply: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut alive: Vec<bool> = vec![true; cells.len()];
    let mut out = Vec::with_capacity(cells.len());
    let ends = |k: usize| (k / c, r + k % c);
    for _ in 0..cells.len() {
        let mut degree = vec![0usize; r + c];
        for (e, &k) in cells.iter().enumerate() {
            if alive[e] {
                let (u, v) = ends(k);
                degree[u] += 1;
                degree[v] += 1;
            }
        }
        let (e, leaf) = cells
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &k)| {
                let (u, v) = ends(k);
                if degree[u] == 1 {
                    Some((e, u))
                } else if degree[v] == 1 {
                    Some((e, v))
                } else {
                    None
                }
            })?;
        let (u, v) = ends(cells[e]);
        let other = if leaf == u { v } else { u };
        let f = supply[leaf];
        supply[other] -= f;
        supply[leaf] = 0.0;
        alive[e] = false;
        out.push((cells[e], f));
    }
    Some(out)
}

fn half_sq_cost(space: &FiniteMetricMeasureSpace) -> Vec<f64> {
    space.dist_matrix().iter().map(|d| 0.5 * d * d).collect()
}

#[derive(Default)]
struct Audit {
    gap: Tally,
    slackness: Tally,
    feasibility: Tally,
    marginals: Tally,
}

pub fn run(name: &str, seed: u64, p: &OtParams) -> Result<Report> {
    p.validate()?;
    let audits: Vec<Audit> = (0..p.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i as u64);
            let n = rng.gen_range(2..=p.max_n);
            let space = random_graph(&mut rng, n)?;
            let mu = random_measure(&mut rng, n, p.sparsity);
            let nu = random_measure(&mut rng, n, p.sparsity);
            let sol = solve_w2(&space, &mu, &nu)?;
            let audit = sol.certificate.audit(&space, &sol.plan);
            let mut a = Audit::default();
            a.gap.record(audit.relative_gap.abs(), p.tol);
            a.slackness.record(audit.slackness, p.tol);
            a.feasibility.record(audit.feasibility, p.tol);
            let err = sol
                .plan
                .first_marginal()
                .iter()
                .zip(mu.weights())
                .chain(sol.plan.second_marginal().iter().zip(nu.weights()))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            a.marginals.record(err, p.tol);
            Ok(a)
        })
        .collect::<Result<_>>()?;
    let triangles: Vec<f64> = (0..p.triples)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed ^ 0x7472_6961, i as u64);
            let n = rng.gen_range(2..=p.max_n);
            let space = random_graph(&mut rng, n)?;
            let m: Vec<ProbabilityMeasure> = (0..3)
                .map(|_| random_measure(&mut rng, n, p.sparsity))
                .collect();
            let w = |x: usize, y: usize| solve_w2(&space, &m[x], &m[y]).map(|s| s.w2);
            Ok(w(0, 2)? - w(0, 1)? - w(1, 2)?)
        })
        .collect::<Result<_>>()?;
    let tiny: Vec<f64> = (0..p.tiny_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed ^ 0x7469_6e79, i as u64);
            let n = rng.gen_range(2..=3);
            let space = random_graph(&mut rng, n)?;
            let mu = random_measure(&mut rng, n, p.sparsity);
            let nu = random_measure(&mut rng, n, p.sparsity);
            let sol = solve_w2(&space, &mu, &nu)?;
            let oracle = vertex_oracle(&half_sq_cost(&space), mu.weights(), nu.weights());
            Ok((sol.certificate.primal_cost - oracle).abs())
        })
        .collect::<Result<_>>()?;

    let mut total = Audit::default();
    for a in &audits {
        total.gap.merge(&a.gap);
        total.slackness.merge(&a.slackness);
        total.feasibility.merge(&a.feasibility);
        total.marginals.merge(&a.marginals);
    }
    let mut report = Report::new(name, "ot_certificates", seed);
    for (label, t) in [
        ("relative_duality_gap", total.gap),
        ("complementary_slackness", total.slackness),
        ("dual_feasibility", total.feasibility),
        ("marginal_error", total.marginals),
    ] {
        report.check(Check::at_most(format!("{label}.worst"), t.worst, p.tol));
        report.metric(format!("{label}.instances"), t.tested as f64);
    }
    let worst_triangle = triangles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.check(Check::at_most(
        "triangle_inequality.worst_excess",
        worst_triangle.max(0.0),
        p.tol,
    ));
    report.metric("triangle_inequality.triples", triangles.len() as f64);
    let worst_tiny = tiny.iter().copied().fold(0.0, f64::max);
    report.check(Check::at_most(
        "tiny_vertex_oracle.worst_difference",
        worst_tiny,
        p.oracle_tol,
    ));
    report.metric("tiny_vertex_oracle.instances", tiny.len() as f64);
    Ok(report)
}
