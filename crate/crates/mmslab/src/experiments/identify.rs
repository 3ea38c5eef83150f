//! Identification of the heat flow with the entropy's Wasserstein gradient
//! flow at continuum scale: the heat trajectory against an exact Fourier
//! reference, its energy-dissipation balance, the entropy dissipation rate,
//! and minimizing-movement (JKO) trajectories against the heat flow along a
//! grid and step-size ladder.

use std::f64::consts::PI;

use mmslab_core::entropyflow::{ede_report, entropy_of, fisher_density, jko_flow, JkoOptions};
use mmslab_core::fields::DirichletForm;
use mmslab_core::heatflow::{entropy_dissipation, heat_flow};
use mmslab_core::space::{build_space, SpaceKind, SpaceSpec};
use mmslab_core::transport::{w2_distance, MeasureCurve, ProbabilityMeasure, TransportModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::max_abs_diff;
use crate::error::{HarnessError, Result};
use crate::profiles::Profile;
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyParams {
    pub t_end: f64,
    /// Grid of the heat-trajectory checks.
    pub n: usize,
    pub heat_steps: usize,
    /// `(n, h)` rungs along which both the grid step and `h` are refined.
    pub ladder: Vec<(usize, f64)>,
    /// Step sizes compared on the grid `n`.
    pub h_ladder: Vec<f64>,
    /// Also run every `(grid, h)` combination of the two ladders.
    pub full_matrix: bool,
    /// Implicit-Euler steps of the heat reference for the JKO comparison.
    pub reference_steps: usize,
    pub fourier_tol: f64,
    pub ede_tol: f64,
    pub dissipation_tol: f64,
    pub exact_tol: f64,
    /// Bound on the JKO total-variation error relative to the heat
    /// solution's total-variation distance from equilibrium.
    pub tv_tol: f64,
}

impl Default for IdentifyParams {
    fn default() -> Self {
        Self {
            t_end: 0.05,
            n: 64,
            heat_steps: 500,
            ladder: vec![(64, 1e-3), (128, 5e-4), (256, 2.5e-4)],
            h_ladder: vec![5e-3, 2.5e-3, 1.25e-3],
            full_matrix: true,
            reference_steps: 5000,
            fourier_tol: 1e-2,
            ede_tol: 0.05,
            dissipation_tol: 0.02,
            exact_tol: 1e-12,
            tv_tol: 0.05,
        }
    }
}

impl IdentifyParams {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("experiment.{k}");
        for (k, v) in [
            ("t_end", self.t_end),
            ("fourier_tol", self.fourier_tol),
            ("ede_tol", self.ede_tol),
            ("dissipation_tol", self.dissipation_tol),
            ("exact_tol", self.exact_tol),
            ("tv_tol", self.tv_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::config(key(k), "must be positive"));
            }
        }
        if self.n < 3 || self.heat_steps < 3 || self.reference_steps == 0 {
            return Err(HarnessError::config(
                key("heat_steps"),
                "need n >= 3, heat_steps >= 3, reference_steps >= 1",
            ));
        }
        if self.ladder.is_empty() {
            return Err(HarnessError::config(
                key("ladder"),
                "ladder must not be empty",
            ));
        }
        for w in self.ladder.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 < w[0].1) {
                return Err(HarnessError::config(
                    key("ladder"),
                    "ladder must refine strictly: n increasing and h decreasing",
                ));
            }
        }
        if self.ladder.iter().any(|(n, h)| *n < 3 || !(*h > 0.0)) {
            return Err(HarnessError::config(
                key("ladder"),
                "rungs need n >= 3 and h > 0",
            ));
        }
        for w in self.h_ladder.windows(2) {
            if !(w[1] < w[0]) {
                return Err(HarnessError::config(
                    key("h_ladder"),
                    "h_ladder must be strictly decreasing",
                ));
            }
        }
        if self.h_ladder.iter().any(|h| !(*h > 0.0)) {
            return Err(HarnessError::config(
                key("h_ladder"),
                "step sizes must be positive",
            ));
        }
        let divides = |h: f64| {
            let steps = self.t_end / h;
            (steps - steps.round()).abs() <= 1e-9 * steps.max(1.0)
        };
        if self.ladder.iter().any(|r| !divides(r.1)) {
            return Err(HarnessError::config(
                key("ladder"),
                "step sizes must divide t_end",
            ));
        }
        if self.h_ladder.iter().any(|h| !divides(*h)) {
            return Err(HarnessError::config(
                key("h_ladder"),
                "step sizes must divide t_end",
            ));
        }
        Ok(())
    }
}

/// Errors of one JKO run against the heat reference on the same grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoError {
    pub n: usize,
    pub h: f64,
    pub tv: f64,
    pub relative_tv: f64,
    pub w2: f64,
    pub fourier_tv: Option<f64>,
}

/// Exact continuum heat solution for a cosine profile on a circle.
fn fourier_density(profile: &Profile, coords: &[f64], length: f64, t: f64) -> Option<Vec<f64>> {
    match profile {
        Profile::Cosine {
            amplitude,
            mode,
            phase,
        } => {
            let k = 2.0 * PI * *mode as f64 / length;
            let decay = (-k * k * t).exp();
            Some(
                coords
                    .iter()
                    .map(|x| 1.0 + amplitude * decay * (k * x + phase).cos())
                    .collect(),
            )
        }
        Profile::Uniform => Some(vec![1.0; coords.len()]),
        _ => None,
    }
}

fn circle(base: &SpaceSpec, n: usize) -> Result<mmslab_core::space::FiniteMetricMeasureSpace> {
    let mut spec = base.clone();
    spec.n = n;
    Ok(build_space(&spec)?)
}

pub fn jko_error(
    base: &SpaceSpec,
    initial: &Profile,
    n: usize,
    h: f64,
    p: &IdentifyParams,
) -> Result<JkoError> {
    let space = circle(base, n)?;
    let form = DirichletForm::grid(&space);
    let mu0 = initial.measure(&space)?;
    let rho0 = mu0.density(space.measure());
    let heat = heat_flow(&form, &rho0, p.t_end, p.reference_steps)?;
    let heat_end = ProbabilityMeasure::from_density(space.measure(), heat.last())?;
    let jko = jko_flow(&space, &mu0, h, p.t_end, &JkoOptions::cells())?;
    let end = jko.at(p.t_end);
    let tv = end.total_variation(&heat_end);
    let spread = heat_end.total_variation(&ProbabilityMeasure::reference(&space));
    let length = space.geometry().length.unwrap_or(1.0);
    let fourier_tv = match fourier_density(
        initial,
        &space.coordinates().unwrap_or_default(),
        length,
        p.t_end,
    ) {
        Some(rho) => {
            Some(end.total_variation(&ProbabilityMeasure::from_density(space.measure(), &rho)?))
        }
        None => None,
    };
    Ok(JkoError {
        n,
        h,
        tv,
        relative_tv: if spread > 0.0 { tv / spread } else { tv },
        w2: w2_distance(&space, end, &heat_end, TransportModel::Cells)?,
        fourier_tv,
    })
}

pub fn run(
    name: &str,
    seed: u64,
    base: &SpaceSpec,
    initial: &Profile,
    p: &IdentifyParams,
) -> Result<Report> {
    p.validate()?;
    if base.kind != SpaceKind::Circle {
        return Err(HarnessError::config(
            "space.kind",
            "identify runs on circle grids",
        ));
    }
    let mut report = Report::new(name, "identify", seed);

    // Heat trajectory on the base grid.
    let space = circle(base, p.n)?;
    let form = DirichletForm::grid(&space);
    let m = space.measure().to_vec();
    let mu0 = initial.measure(&space)?;
    let rho0 = mu0.density(&m);
    let heat = heat_flow(&form, &rho0, p.t_end, p.heat_steps)?;
    let dt = heat.lambda;
    let length = space.geometry().length.unwrap_or(1.0);
    let coords = space.coordinates().unwrap_or_default();
    match fourier_density(initial, &coords, length, p.t_end) {
        Some(exact) => {
            let err = max_abs_diff(heat.last(), &exact);
            report.check(Check::at_most("heat_vs_fourier.linf", err, p.fourier_tol));
        }
        None => report.metric("heat_vs_fourier.available", 0.0),
    }

    let measures: Vec<ProbabilityMeasure> = heat
        .fields
        .iter()
        .map(|f| ProbabilityMeasure::from_density(&m, f))
        .collect::<mmslab_core::Result<_>>()?;
    let curve = MeasureCurve::new(heat.times.clone(), measures)?;
    let ede = ede_report(&space, &form, &curve, TransportModel::Cells)?;
    report.check(Check::at_most(
        "ede.relative_residual",
        ede.relative_deficit.abs(),
        p.ede_tol,
    ));
    report.metric("ede.entropy_drop", ede.entropy_drop);
    report.metric("ede.kinetic", ede.kinetic);
    report.metric("ede.slope_term", ede.slope_term);
    report.metric("ede.signed_relative_residual", ede.relative_deficit);

    let ent: Vec<f64> = heat
        .fields
        .iter()
        .map(|f| {
            let w: Vec<f64> = f.iter().zip(&m).map(|(f, m)| f * m).collect();
            entropy_of(&m, &w)
        })
        .collect();
    let fisher: Vec<f64> = heat
        .fields
        .iter()
        .map(|f| fisher_density(&form, f))
        .collect();
    let mut worst_rate = 0.0f64;
    let mut rate_series = Vec::new();
    for k in 1..heat.fields.len() - 1 {
        let rate = (ent[k + 1] - ent[k - 1]) / (2.0 * dt);
        let rel = (rate + fisher[k]).abs() / fisher[k].max(f64::MIN_POSITIVE);
        worst_rate = worst_rate.max(rel);
        rate_series.push((heat.times[k], -rate));
    }
    report.check(Check::at_most(
        "dissipation_rate.worst_relative",
        worst_rate,
        p.dissipation_tol,
    ));
    let mut worst_fisher_slack = f64::INFINITY;
    let mut worst_dissipation_slack = f64::INFINITY;
    for k in 0..heat.fields.len() - 1 {
        let drop = (ent[k] - ent[k + 1]) / dt;
        let scale = 1.0 + fisher[k + 1];
        worst_fisher_slack = worst_fisher_slack.min((drop - fisher[k + 1]) / scale);
        let d = entropy_dissipation(&form, &heat.fields[k + 1]).unwrap_or(f64::NAN);
        worst_dissipation_slack = worst_dissipation_slack.min((drop - d) / scale);
    }
    report.check(Check::at_least(
        "entropy_drop_dominates_fisher.worst_slack",
        worst_fisher_slack,
        -p.exact_tol,
    ));
    report.check(Check::at_least(
        "entropy_drop_dominates_dissipation.worst_slack",
        worst_dissipation_slack,
        -p.exact_tol,
    ));
    report.series(
        "heat.entropy",
        heat.times
            .iter()
            .copied()
            .zip(ent.iter().copied())
            .collect(),
    );
    report.series(
        "heat.fisher",
        heat.times
            .iter()
            .copied()
            .zip(fisher.iter().copied())
            .collect(),
    );
    report.series("heat.entropy_decay_rate", rate_series);
    report.series(
        "heat.metric_speed_squared",
        heat.times
            .windows(2)
            .zip(&ede.speeds)
            .map(|(t, s)| (0.5 * (t[0] + t[1]), s * s))
            .collect(),
    );

    // JKO against the heat flow.
    let mut runs: Vec<(usize, f64)> = p.ladder.clone();
    runs.extend(p.h_ladder.iter().map(|&h| (p.n, h)));
    if p.full_matrix {
        let hs: Vec<f64> = p
            .ladder
            .iter()
            .map(|r| r.1)
            .chain(p.h_ladder.iter().copied())
            .collect();
        for &(n, _) in &p.ladder {
            runs.extend(hs.iter().map(|&h| (n, h)));
        }
    }
    runs.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    runs.dedup();
    let errors: Vec<JkoError> = runs
        .par_iter()
        .map(|&(n, h)| jko_error(base, initial, n, h, p))
        .collect::<Result<_>>()?;
    let find = |n: usize, h: f64| errors.iter().find(|e| e.n == n && e.h == h).copied();

    let ladder: Vec<JkoError> = p.ladder.iter().filter_map(|&(n, h)| find(n, h)).collect();
    let first = ladder[0];
    report.check(Check::at_most(
        format!("jko.n{}_h{}.relative_tv", first.n, first.h),
        first.relative_tv,
        p.tv_tol,
    ));
    report.metric(format!("jko.n{}_h{}.tv", first.n, first.h), first.tv);
    let decreasing = ladder.windows(2).filter(|w| !(w[1].tv < w[0].tv)).count();
    report.check(Check::zero(
        "jko.ladder_tv_not_strictly_decreasing",
        decreasing,
    ));
    let h_runs: Vec<JkoError> = p.h_ladder.iter().filter_map(|&h| find(p.n, h)).collect();
    let h_decreasing = h_runs.windows(2).filter(|w| !(w[1].tv < w[0].tv)).count();
    report.check(Check::zero("jko.h_ladder_tv_not_decreasing", h_decreasing));

    report.series(
        "jko.ladder_tv",
        ladder.iter().map(|e| (e.h, e.tv)).collect(),
    );
    report.series(
        "jko.ladder_w2",
        ladder.iter().map(|e| (e.h, e.w2)).collect(),
    );
    report.series(
        "jko.h_ladder_tv",
        h_runs.iter().map(|e| (e.h, e.tv)).collect(),
    );
    report.table(
        "jko.error_matrix[n,h,tv,relative_tv,w2,fourier_tv]",
        errors
            .iter()
            .map(|e| {
                vec![
                    e.n as f64,
                    e.h,
                    e.tv,
                    e.relative_tv,
                    e.w2,
                    e.fourier_tv.unwrap_or(f64::NAN),
                ]
            })
            .collect(),
    );
    Ok(report)
}
