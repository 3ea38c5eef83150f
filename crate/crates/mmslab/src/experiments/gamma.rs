//! Stability of the heat flow under increasing reference measures
//! `m_k = θ_k m` with `θ_k = 1 − 2^{−k}·bump ↑ 1`.

use mmslab_core::fields::{inner, Conductance, DirichletForm};
use mmslab_core::heatflow::heat_flow;
use mmslab_core::space::{build_space, SpaceSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::profiles::Profile;
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaParams {
    pub t_end: f64,
    pub steps: usize,
    /// Exponents `k` of the rungs, strictly increasing.
    pub rungs: Vec<u32>,
    /// Shape of the perturbation, with values in `[0, 1]`.
    pub bump: Profile,
    pub final_tol: f64,
}

impl Default for GammaParams {
    fn default() -> Self {
        Self {
            t_end: 0.05,
            steps: 200,
            rungs: vec![4, 6, 8, 10],
            bump: Profile::Bump {
                center: vec![0.5],
                width: 0.1,
                floor: 0.0,
            },
            final_tol: 1e-3,
        }
    }
}

impl GammaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.final_tol > 0.0) || self.steps == 0 {
            return Err(HarnessError::config(
                "experiment.t_end",
                "t_end, steps and final_tol must be positive",
            ));
        }
        if self.rungs.is_empty()
            || self.rungs.windows(2).any(|w| w[1] <= w[0])
            || self.rungs[0] == 0
        {
            return Err(HarnessError::config(
                "experiment.rungs",
                "rungs must be nonempty, positive and strictly increasing",
            ));
        }
        self.bump.validate("experiment.bump")
    }
}

/// The form with measure `θm` and conductances scaled by the edge average
/// of `θ`.
pub fn weighted_form(
    form: &DirichletForm,
    space: &mmslab_core::space::FiniteMetricMeasureSpace,
    theta: &[f64],
) -> Result<DirichletForm> {
    let measure: Vec<f64> = form
        .measure()
        .iter()
        .zip(theta)
        .map(|(m, t)| m * t)
        .collect();
    let edges: Vec<Conductance> = form
        .edges()
        .iter()
        .map(|e| Conductance {
            i: e.i,
            j: e.j,
            c: e.c * 0.5 * (theta[e.i] + theta[e.j]),
        })
        .collect();
    Ok(DirichletForm::from_edges(
        &space.with_measure(measure)?,
        &edges,
    )?)
}

pub fn run(
    name: &str,
    seed: u64,
    base: &SpaceSpec,
    initial: &Profile,
    p: &GammaParams,
) -> Result<Report> {
    p.validate()?;
    let space = build_space(base)?;
    let form = DirichletForm::grid(&space);
    let f0 = initial.values(&space)?;
    let bump = p.bump.values(&space)?;
    if bump.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(HarnessError::config(
            "experiment.bump",
            "bump values must lie in [0, 1]",
        ));
    }
    let reference = heat_flow(&form, &f0, p.t_end, p.steps)?;
    let m = form.measure().to_vec();
    let errors: Vec<f64> = p
        .rungs
        .par_iter()
        .map(|&k| {
            let scale = 0.5f64.powi(k as i32);
            let theta: Vec<f64> = bump.iter().map(|b| 1.0 - scale * b).collect();
            let flow = heat_flow(
                &weighted_form(&form, &space, &theta)?,
                &f0,
                p.t_end,
                p.steps,
            )?;
            let d: Vec<f64> = flow
                .last()
                .iter()
                .zip(reference.last())
                .map(|(a, b)| a - b)
                .collect();
            Ok(inner(&m, &d, &d).sqrt())
        })
        .collect::<Result<_>>()?;
    let mut report = Report::new(name, "gamma_monotone", seed);
    for (k, e) in p.rungs.iter().zip(&errors) {
        report.metric(format!("rung{k}.l2_error"), *e);
    }
    let increases = errors.windows(2).filter(|w| w[1] > w[0]).count();
    report.check(Check::zero("error_increases_along_rungs", increases));
    report.check(Check::at_most(
        "final_rung.l2_error",
        *errors.last().unwrap(),
        p.final_tol,
    ));
    report.series(
        "l2_error_vs_rung",
        p.rungs
            .iter()
            .zip(&errors)
            .map(|(k, e)| (*k as f64, *e))
            .collect(),
    );
    Ok(report)
}
