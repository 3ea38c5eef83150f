//! Heat flow of a Dirichlet form: implicit-Euler resolvents `(I − λΔ)⁻¹`,
//! chained into trajectories, and the audits of mass conservation, energy
//! and convex-entropy monotonicity along them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{inner, DirichletForm};
use crate::linalg::conjugate_gradient;

/// Relative residual required from every resolvent solve.
pub const SOLVE_TOL: f64 = 1e-12;

/// Densities with a value at or below this threshold are not audited with
/// log-based diagnostics.
pub const DEGENERATE_FLOOR: f64 = 1e-13;

/// Tolerance for the flow audits.
pub const AUDIT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolvent {
    pub field: Vec<f64>,
    /// `‖M f − (M + λK) f^λ‖₂ / ‖M f‖₂`.
    pub residual: f64,
    pub iterations: usize,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "resolvent parameter must be nonnegative, got {lambda}"
        )))
    }
}

/// Solves `f^λ − λΔf^λ = f`, i.e. `(M + λK) f^λ = M f`.
pub fn resolvent(form: &DirichletForm, f: &[f64], lambda: f64) -> Result<Resolvent> {
    check_lambda(lambda)?;
    form.check_field(f)?;
    resolvent_from(form, f, lambda, f)
}

fn resolvent_from(
    form: &DirichletForm,
    f: &[f64],
    lambda: f64,
    guess: &[f64],
) -> Result<Resolvent> {
    let m = form.measure();
    if lambda == 0.0 {
        return Ok(Resolvent {
            field: f.to_vec(),
            residual: 0.0,
            iterations: 0,
        });
    }
    let rhs: Vec<f64> = m.iter().zip(f).map(|(m, f)| m * f).collect();
    if rhs.iter().all(|r| *r == 0.0) {
        return Ok(Resolvent {
            field: vec![0.0; f.len()],
            residual: 0.0,
            iterations: 0,
        });
    }
    let diag: Vec<f64> = (0..form.n())
        .map(|x| m[x] + lambda * form.adjacency(x).iter().map(|(_, c)| c).sum::<f64>())
        .collect();
    let apply = |u: &[f64]| {
        let mut out = form.stiffness_apply(u);
        for ((o, mx), ux) in out.iter_mut().zip(m).zip(u) {
            *o = mx * ux + lambda * *o;
        }
        out
    };
    let max_iter = 20 * form.n() + 200;
    let out = conjugate_gradient(apply, &diag, &rhs, Some(guess), SOLVE_TOL, max_iter)?;
    let scale = crate::linalg::norm2(&rhs);
    Ok(Resolvent {
        field: out.x,
        residual: out.residual / scale,
        iterations: out.iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub time: f64,
    /// `Σ m f`.
    pub mass: f64,
    /// Dirichlet energy `C(f)`.
    pub energy: f64,
    /// `Σ m f log f` when `f > 0`.
    pub entropy: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub lambda: f64,
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &[f64] {
        self.fields.last().unwrap()
    }
}

fn log_entropy(m: &[f64], f: &[f64]) -> Option<f64> {
    if f.iter().any(|v| *v <= DEGENERATE_FLOOR) {
        return None;
    }
    Some(m.iter().zip(f).map(|(m, f)| m * f * f.ln()).sum())
}

fn diagnostics(
    form: &DirichletForm,
    time: f64,
    f: &[f64],
    residual: f64,
    iterations: usize,
) -> StepDiagnostics {
    let m = form.measure();
    StepDiagnostics {
        time,
        mass: m.iter().zip(f).map(|(m, f)| m * f).sum(),
        energy: form.energy(f),
        entropy: log_entropy(m, f),
        residual,
        iterations,
    }
}

/// `n_steps` resolvent steps with `λ = t_end/n_steps`.
pub fn heat_flow(
    form: &DirichletForm,
    f0: &[f64],
    t_end: f64,
    n_steps: usize,
) -> Result<FlowTrajectory> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    form.check_field(f0)?;
    let lambda = t_end / n_steps as f64;
    let mut times = vec![0.0];
    let mut fields = vec![f0.to_vec()];
    let mut diags = vec![diagnostics(form, 0.0, f0, 0.0, 0)];
    for k in 1..=n_steps {
        let prev = fields.last().unwrap();
        let step = resolvent_from(form, prev, lambda, prev)?;
        let time = k as f64 * lambda;
        diags.push(diagnostics(
            form,
            time,
            &step.field,
            step.residual,
            step.iterations,
        ));
        times.push(time);
        fields.push(step.field);
    }
    Ok(FlowTrajectory {
        lambda,
        times,
        fields,
        diagnostics: diags,
    })
}

/// Convex entropy densities `e` with `e(0) = 0` for the monotonicity audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexEntropy {
    /// `e(r) = r²/2`.
    Quadratic,
    /// `e(r) = r log r` with `0 log 0 = 0`.
    Boltzmann,
}

impl ConvexEntropy {
    pub fn eval(self, r: f64) -> f64 {
        match self {
            Self::Quadratic => 0.5 * r * r,
            Self::Boltzmann if r == 0.0 => 0.0,
            Self::Boltzmann => r * r.ln(),
        }
    }

    /// `Σ m e(f)`, undefined for the Boltzmann entropy at negative values.
    pub fn total(self, m: &[f64], f: &[f64]) -> Option<f64> {
        if self == Self::Boltzmann && f.iter().any(|v| *v < 0.0) {
            return None;
        }
        Some(m.iter().zip(f).map(|(m, f)| m * self.eval(*f)).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub entropy: ConvexEntropy,
    /// `|mass_k − mass_{k−1}|` per step.
    pub mass_drift: Vec<f64>,
    /// `(E_k − E_{k−1})⁺` per step.
    pub entropy_increase: Vec<f64>,
    /// `½‖f_k‖² + 2λC(f_k) − ½‖f_{k−1}‖²` per step, quadratic entropy only.
    pub energy_identity: Option<Vec<f64>>,
    /// Steps skipped by the Boltzmann audit because a value was not positive.
    pub degenerate_steps: Vec<usize>,
    pub flagged: Vec<String>,
}

impl FlowReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.mass_drift.iter().copied().fold(0.0, f64::max)
    }
}

/// Audits a trajectory against mass conservation, monotonicity of
/// `Σ m e(f_t)` and, for the quadratic entropy, the discrete energy identity.
pub fn flow_diagnostics(
    form: &DirichletForm,
    traj: &FlowTrajectory,
    entropy: ConvexEntropy,
) -> FlowReport {
    let m = form.measure();
    let mut report = FlowReport {
        entropy,
        mass_drift: Vec::new(),
        entropy_increase: Vec::new(),
        energy_identity: (entropy == ConvexEntropy::Quadratic).then(Vec::new),
        degenerate_steps: Vec::new(),
        flagged: Vec::new(),
    };
    for k in 1..traj.fields.len() {
        let (prev, cur) = (&traj.fields[k - 1], &traj.fields[k]);
        let mass = |f: &[f64]| m.iter().zip(f).map(|(m, f)| m * f).sum::<f64>();
        let drift = (mass(cur) - mass(prev)).abs();
        report.mass_drift.push(drift);
        if drift > AUDIT_TOL {
            report
                .flagged
                .push(format!("step {k}: mass drift {drift:e}"));
        }
        match (entropy.total(m, prev), entropy.total(m, cur)) {
            (Some(a), Some(b))
                if entropy == ConvexEntropy::Quadratic
                    || cur.iter().all(|v| *v > DEGENERATE_FLOOR) =>
            {
                let inc = (b - a).max(0.0);
                report.entropy_increase.push(inc);
                if inc > 1e-12 * (1.0 + a.abs()) {
                    report
                        .flagged
                        .push(format!("step {k}: entropy increased by {inc:e}"));
                }
            }
            _ => {
                report.entropy_increase.push(0.0);
                report.degenerate_steps.push(k);
            }
        }
        if let Some(identity) = report.energy_identity.as_mut() {
            let lambda = traj.times[k] - traj.times[k - 1];
            let lhs = 0.5 * inner(m, cur, cur) + 2.0 * lambda * form.energy(cur);
            let excess = lhs - 0.5 * inner(m, prev, prev);
            identity.push(excess);
            if excess > 1e-12 * (1.0 + inner(m, prev, prev)) {
                report
                    .flagged
                    .push(format!("step {k}: energy identity excess {excess:e}"));
            }
        }
    }
    report
}

/// `−Σ m (1 + log f) Δf = Σ_edges c (f_y − f_x)(log f_y − log f_x)`, the
/// instantaneous entropy dissipation; `None` when `f` is not positive.
pub fn entropy_dissipation(form: &DirichletForm, f: &[f64]) -> Option<f64> {
    if f.iter().any(|v| *v <= DEGENERATE_FLOOR) {
        return None;
    }
    Some(
        form.edges()
            .iter()
            .map(|e| e.c * (f[e.j] - f[e.i]) * (f[e.j].ln() - f[e.i].ln()))
            .sum(),
    )
}
