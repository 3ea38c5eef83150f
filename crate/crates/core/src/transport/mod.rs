//! Exact optimal transport for the cost `½d²` on a finite space, together
//! with the algebra around it: c-transforms, push-forward through plans,
//! geodesic lifts and displacement interpolation, and metric speeds of
//! measure curves.
//!
//! Two transport models are available for distances between measures:
//! [`TransportModel::Graph`] solves the discrete problem for the space's own
//! distance matrix, while [`TransportModel::Cells`] treats each grid point of
//! an interval or circle as a cell carrying constant density and computes
//! the continuum distance between these histograms (see [`cells`]).

pub mod cells;
mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fields::{local_slope, SlopeKind};
use crate::space::FiniteMetricMeasureSpace;

/// Tolerance on total mass and marginals of validated measures.
pub const MASS_TOL: f64 = 1e-12;

/// Plan entries at or below this mass are treated as off-support.
pub const SUPPORT_TOL: f64 = 1e-14;

/// Tolerance for the certificate audits.
pub const CERT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure")]
pub struct ProbabilityMeasure {
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMeasure {
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for ProbabilityMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        Self::new(raw.weights)
    }
}

impl ProbabilityMeasure {
    /// Nonnegative weights summing to one within [`MASS_TOL`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "measure weight at {i} must be finite and nonnegative, got {}",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidArgument(format!(
                "measure weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    /// Rescales nonnegative weights with positive total to unit mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "measure weight at {i} must be finite and nonnegative, got {}",
                weights[i]
            )));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("measure has zero mass".into()));
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// The measure `ρ·m`, normalized.
    pub fn from_density(reference: &[f64], rho: &[f64]) -> Result<Self> {
        check_len(reference.len(), rho.len())?;
        Self::normalized(reference.iter().zip(rho).map(|(m, r)| m * r).collect())
    }

    /// The reference measure of `space`, normalized.
    pub fn reference(space: &FiniteMetricMeasureSpace) -> Self {
        let total = space.total_mass();
        Self {
            weights: space.measure().iter().map(|m| m / total).collect(),
        }
    }

    pub fn dirac(n: usize, at: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `ρ = weight/m`.
    pub fn density(&self, reference: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(reference)
            .map(|(w, m)| w / m)
            .collect()
    }

    /// `½ Σ |μ − ν|`.
    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// A transport plan with its marginals. Serialized as sparse triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CouplingFile", into = "CouplingFile")]
pub struct Coupling {
    rows: usize,
    cols: usize,
    plan: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingFile {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<PlanEntry>,
}

impl TryFrom<CouplingFile> for Coupling {
    type Error = Error;

    fn try_from(file: CouplingFile) -> Result<Self> {
        let mut plan = vec![0.0; file.rows * file.cols];
        for e in &file.entries {
            if e.i >= file.rows || e.j >= file.cols {
                return Err(Error::InvalidArgument(format!(
                    "plan entry ({}, {}) outside a {}×{} plan",
                    e.i, e.j, file.rows, file.cols
                )));
            }
            plan[e.i * file.cols + e.j] += e.mass;
        }
        Coupling::new(file.rows, file.cols, plan)
    }
}

impl From<Coupling> for CouplingFile {
    fn from(c: Coupling) -> Self {
        Self {
            rows: c.rows,
            cols: c.cols,
            entries: c.entries(0.0),
        }
    }
}

impl Coupling {
    /// Validates a row-major plan: nonnegative entries, total mass one.
    pub fn new(rows: usize, cols: usize, plan: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, plan.len())?;
        if let Some(k) = plan.iter().position(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "plan entry ({}, {}) must be finite and nonnegative, got {}",
                k / cols,
                k % cols,
                plan[k]
            )));
        }
        let total: f64 = plan.iter().sum();
        if (total - 1.0).abs() > MASS_TOL.max(1e-10) {
            return Err(Error::InvalidArgument(format!(
                "plan has total mass {total}, expected 1"
            )));
        }
        let mut first = vec![0.0; rows];
        let mut second = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                first[i] += plan[i * cols + j];
                second[j] += plan[i * cols + j];
            }
        }
        Ok(Self {
            rows,
            cols,
            plan,
            first,
            second,
        })
    }

    /// Diagonal plan `(id, id)_♯μ`.
    pub fn identity(mu: &ProbabilityMeasure) -> Self {
        let n = mu.len();
        let mut plan = vec![0.0; n * n];
        for (i, w) in mu.weights().iter().enumerate() {
            plan[i * n + i] = *w;
        }
        Self {
            rows: n,
            cols: n,
            plan,
            first: mu.weights().to_vec(),
            second: mu.weights().to_vec(),
        }
    }

    /// Product plan `μ ⊗ ν`.
    pub fn product(mu: &ProbabilityMeasure, nu: &ProbabilityMeasure) -> Self {
        let (rows, cols) = (mu.len(), nu.len());
        let mut plan = Vec::with_capacity(rows * cols);
        for a in mu.weights() {
            plan.extend(nu.weights().iter().map(|b| a * b));
        }
        Self {
            rows,
            cols,
            plan,
            first: mu.weights().to_vec(),
            second: nu.weights().to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    pub fn first_marginal(&self) -> &[f64] {
        &self.first
    }

    pub fn second_marginal(&self) -> &[f64] {
        &self.second
    }

    /// Entries with mass strictly above `threshold`, row-major order.
    pub fn entries(&self, threshold: f64) -> Vec<PlanEntry> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let mass = self.get(i, j);
                if mass > threshold {
                    out.push(PlanEntry { i, j, mass });
                }
            }
        }
        out
    }

    /// `Σ d²·γ`.
    pub fn squared_cost(&self, space: &FiniteMetricMeasureSpace) -> f64 {
        self.entries(0.0)
            .iter()
            .map(|e| space.dist(e.i, e.j).powi(2) * e.mass)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    #[serde(rename = "primal")]
    pub primal_cost: f64,
    #[serde(rename = "dual")]
    pub dual_value: f64,
    pub gap: f64,
}

/// Outcome of checking a certificate against a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateAudit {
    /// `max (φ(x) + ψ(y) − ½d²)⁺` over all pairs.
    pub feasibility: f64,
    /// `max |φ(x) + ψ(y) − ½d²|` over plan entries above [`SUPPORT_TOL`].
    pub slackness: f64,
    pub gap: f64,
    pub relative_gap: f64,
}

impl CertificateAudit {
    pub fn passed(&self, tol: f64) -> bool {
        self.feasibility <= tol && self.slackness <= tol && self.relative_gap.abs() <= tol
    }
}

impl DualCertificate {
    pub fn audit(&self, space: &FiniteMetricMeasureSpace, plan: &Coupling) -> CertificateAudit {
        let n = space.n();
        let mut feasibility = 0.0f64;
        for x in 0..n {
            for y in 0..n {
                let excess = self.phi[x] + self.psi[y] - 0.5 * space.dist(x, y).powi(2);
                feasibility = feasibility.max(excess);
            }
        }
        let slackness = plan
            .entries(SUPPORT_TOL)
            .iter()
            .map(|e| (self.phi[e.i] + self.psi[e.j] - 0.5 * space.dist(e.i, e.j).powi(2)).abs())
            .fold(0.0, f64::max);
        CertificateAudit {
            feasibility,
            slackness,
            gap: self.gap,
            relative_gap: self.gap / (1.0 + self.primal_cost.abs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Solution {
    pub w2: f64,
    pub plan: Coupling,
    pub certificate: DualCertificate,
    pub pivots: usize,
}

fn check_pair(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
) -> Result<()> {
    check_len(space.n(), mu.len())?;
    check_len(space.n(), nu.len())?;
    let (a, b) = (
        mu.weights().iter().sum::<f64>(),
        nu.weights().iter().sum::<f64>(),
    );
    if (a - b).abs() > MASS_TOL {
        return Err(Error::MassMismatch {
            first: a,
            second: b,
        });
    }
    Ok(())
}

/// Optimal plan for `½d²` with its dual certificate; `w2 = √(Σ d²·γ)`.
pub fn solve_w2(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
) -> Result<W2Solution> {
    check_pair(space, mu, nu)?;
    let n = space.n();
    let cost: Vec<f64> = space.dist_matrix().iter().map(|d| 0.5 * d * d).collect();
    let sol = simplex::transportation_simplex(&cost, mu.weights(), nu.weights())?;
    let phi = sol.u;
    // Tightening ψ to the c-transform of φ restores exact feasibility
    // without moving ψ on columns touched by the optimal basis.
    let psi: Vec<f64> = (0..n)
        .map(|y| {
            (0..n)
                .map(|x| cost[x * n + y] - phi[x])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let primal_cost: f64 = sol.flow.iter().zip(&cost).map(|(g, c)| g * c).sum();
    let dual_value: f64 = mu
        .weights()
        .iter()
        .zip(&phi)
        .map(|(w, p)| w * p)
        .sum::<f64>()
        + nu.weights()
            .iter()
            .zip(&psi)
            .map(|(w, p)| w * p)
            .sum::<f64>();
    let plan = Coupling::new(n, n, sol.flow)?;
    Ok(W2Solution {
        w2: (2.0 * primal_cost).max(0.0).sqrt(),
        plan,
        certificate: DualCertificate {
            phi,
            psi,
            primal_cost,
            dual_value,
            gap: primal_cost - dual_value,
        },
        pivots: sol.pivots,
    })
}

/// `φ^c(y) = min_x ½d(x,y)² − φ(x)`.
pub fn c_transform(space: &FiniteMetricMeasureSpace, phi: &[f64]) -> Vec<f64> {
    let n = space.n();
    (0..n)
        .map(|y| {
            (0..n)
                .map(|x| 0.5 * space.dist(x, y).powi(2) - phi[x])
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    /// `max |φ(x) + φ^c(y) − ½d²|` on the plan support.
    pub support_residual: f64,
    /// Smallest `max_y d(x,y) + r_x/2 − |∇⁺φ|(x)` over charged points;
    /// negative means the slope bound fails.
    pub worst_slope_slack: f64,
    pub worst_point: Option<usize>,
    pub passed: bool,
}

/// Audits `φ` as a Kantorovich potential for `plan`.
pub fn potential_certificate(
    space: &FiniteMetricMeasureSpace,
    phi: &[f64],
    plan: &Coupling,
) -> Result<PotentialReport> {
    check_len(space.n(), phi.len())?;
    check_len(space.n(), plan.rows())?;
    let phi_c = c_transform(space, phi);
    let entries = plan.entries(SUPPORT_TOL);
    let support_residual = entries
        .iter()
        .map(|e| (phi[e.i] + phi_c[e.j] - 0.5 * space.dist(e.i, e.j).powi(2)).abs())
        .fold(0.0, f64::max);
    let slope = local_slope(space, phi, SlopeKind::Ascending);
    let mut reach = vec![f64::NEG_INFINITY; space.n()];
    for e in &entries {
        reach[e.i] = reach[e.i].max(space.dist(e.i, e.j));
    }
    let mut worst_slope_slack = f64::INFINITY;
    let mut worst_point = None;
    for x in 0..space.n() {
        if reach[x] == f64::NEG_INFINITY {
            continue;
        }
        let slack = reach[x] + 0.5 * space.max_edge(x) - slope[x];
        if slack < worst_slope_slack {
            worst_slope_slack = slack;
            worst_point = Some(x);
        }
    }
    Ok(PotentialReport {
        support_residual,
        worst_slope_slack,
        worst_point,
        passed: support_residual <= CERT_TOL && worst_slope_slack >= -CERT_TOL,
    })
}

/// `γ_♯μ(y) = Σ_x γ(x,y)·μ(x)/γ₁(x)`.
pub fn push_forward_plan(plan: &Coupling, mu: &ProbabilityMeasure) -> Result<ProbabilityMeasure> {
    check_len(plan.rows(), mu.len())?;
    let mut out = vec![0.0; plan.cols()];
    for (x, &w) in mu.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let marginal = plan.first_marginal()[x];
        if !(marginal > 0.0) {
            return Err(Error::NotAbsolutelyContinuous { index: x });
        }
        for (y, o) in out.iter_mut().enumerate() {
            *o += plan.get(x, y) * w / marginal;
        }
    }
    ProbabilityMeasure::normalized(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    pub nodes: Vec<usize>,
    /// Cumulative arclength at each node, starting at 0.
    pub arclength: Vec<f64>,
    pub mass: f64,
}

impl GeodesicPath {
    pub fn length(&self) -> f64 {
        *self.arclength.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPlan {
    pub n: usize,
    pub paths: Vec<GeodesicPath>,
}

/// Shortest node path from `x` to `y`, walking back from `y` through the
/// lexicographically smallest predecessor at every step.
pub fn shortest_path(space: &FiniteMetricMeasureSpace, x: usize, y: usize) -> Result<Vec<usize>> {
    let mut rev = vec![y];
    let mut node = y;
    while node != x {
        let target = space.dist(x, node);
        let pred = space
            .neighbors(node)
            .iter()
            .filter(|nb| {
                let via = space.dist(x, nb.index) + nb.length;
                space.dist(x, nb.index) < target && (via - target).abs() <= 1e-12 * (1.0 + target)
            })
            .map(|nb| nb.index)
            .min()
            .ok_or_else(|| {
                Error::UnsupportedGeometry(format!(
                    "no neighbor of {node} lies on a shortest path from {x}; distances are not a graph metric"
                ))
            })?;
        rev.push(pred);
        node = pred;
    }
    rev.reverse();
    Ok(rev)
}

/// Assigns one shortest path to every pair charged by `plan`.
pub fn lift_geodesic_plan(
    space: &FiniteMetricMeasureSpace,
    plan: &Coupling,
) -> Result<GeodesicPlan> {
    check_len(space.n(), plan.rows())?;
    let mut paths = Vec::new();
    for e in plan.entries(0.0) {
        let nodes = shortest_path(space, e.i, e.j)?;
        let mut arclength = vec![0.0];
        for w in nodes.windows(2) {
            let last = *arclength.last().unwrap();
            arclength.push(last + space.dist(w[0], w[1]));
        }
        paths.push(GeodesicPath {
            nodes,
            arclength,
            mass: e.mass,
        });
    }
    Ok(GeodesicPlan {
        n: space.n(),
        paths,
    })
}

/// `(e_t)_♯π` with every path snapped to the node whose arclength is
/// nearest to `t·len`; ties go to the earlier node.
pub fn interpolate(gplan: &GeodesicPlan, t: f64) -> Result<ProbabilityMeasure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "t must lie in [0, 1], got {t}"
        )));
    }
    let mut out = vec![0.0; gplan.n];
    for path in &gplan.paths {
        let target = t * path.length();
        let mut best = 0;
        for (k, s) in path.arclength.iter().enumerate() {
            if (s - target).abs() < (path.arclength[best] - target).abs() {
                best = k;
            }
        }
        if t == 1.0 {
            best = path.nodes.len() - 1;
        }
        out[path.nodes[best]] += path.mass;
    }
    ProbabilityMeasure::normalized(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureCurve {
    times: Vec<f64>,
    measures: Vec<ProbabilityMeasure>,
}

impl MeasureCurve {
    pub fn new(times: Vec<f64>, measures: Vec<ProbabilityMeasure>) -> Result<Self> {
        check_len(times.len(), measures.len())?;
        if times.is_empty() {
            return Err(Error::InvalidArgument("curve has no times".into()));
        }
        if let Some(k) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "curve times must increase strictly, violated at index {}",
                k + 1
            )));
        }
        let n = measures[0].len();
        if let Some(m) = measures.iter().find(|m| m.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: m.len(),
            });
        }
        Ok(Self { times, measures })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[ProbabilityMeasure] {
        &self.measures
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Which distance between measures to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportModel {
    /// Discrete transport for the space's distance matrix.
    #[default]
    Graph,
    /// Continuum transport between cell histograms of an interval or circle.
    Cells,
}

/// `W₂(μ, ν)` under the chosen model.
pub fn w2_distance(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
    model: TransportModel,
) -> Result<f64> {
    match model {
        TransportModel::Graph => Ok(solve_w2(space, mu, nu)?.w2),
        TransportModel::Cells => {
            check_pair(space, mu, nu)?;
            let grid = cells::CellGrid::from_space(space)?;
            Ok(grid.w2(mu.weights(), nu.weights()))
        }
    }
}

/// `W₂(μ_k, μ_{k+1})/(t_{k+1} − t_k)` for every interval of the curve.
pub fn metric_speed(
    space: &FiniteMetricMeasureSpace,
    curve: &MeasureCurve,
    model: TransportModel,
) -> Result<Vec<f64>> {
    let t = curve.times();
    let mu = curve.measures();
    (0..curve.len().saturating_sub(1))
        .map(|k| Ok(w2_distance(space, &mu[k], &mu[k + 1], model)? / (t[k + 1] - t[k])))
        .collect()
}

#[cfg(test)]
mod tests;
