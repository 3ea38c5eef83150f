//! Exact audits of the Hopf-Lax semigroup on random finite spaces.

use mmslab_core::fields::{lipschitz_constant, oscillation};
use mmslab_core::hopflax::{hj_subsolution_report, hopf_lax, HopfLaxResult};
use mmslab_core::space::FiniteMetricMeasureSpace;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{instance_rng, random_graph, Tally};
use crate::error::{HarnessError, Result};
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopflaxParams {
    pub instances: usize,
    pub max_n: usize,
    pub times: usize,
    /// Range of the log-uniform time draws.
    pub t_min: f64,
    pub t_max: f64,
    pub fd_step: f64,
    /// Half-width of the window in which a changing argmin set disqualifies
    /// a point from the finite-difference comparison.
    pub tie_window: f64,
    pub fd_tol: f64,
    pub tol: f64,
    pub lipschitz_factor: f64,
}

impl Default for HopflaxParams {
    fn default() -> Self {
        Self {
            instances: 100,
            max_n: 12,
            times: 5,
            t_min: 0.05,
            t_max: 5.0,
            fd_step: 1e-7,
            tie_window: 1e-6,
            fd_tol: 1e-6,
            tol: 1e-12,
            lipschitz_factor: 2.0,
        }
    }
}

impl HopflaxParams {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("experiment.{k}");
        if self.instances == 0 || self.times == 0 {
            return Err(HarnessError::config(
                key("instances"),
                "instances and times must be positive",
            ));
        }
        if self.max_n < 2 {
            return Err(HarnessError::config(
                key("max_n"),
                "max_n must be at least 2",
            ));
        }
        for (k, v) in [
            ("t_min", self.t_min),
            ("t_max", self.t_max),
            ("fd_step", self.fd_step),
            ("tie_window", self.tie_window),
            ("fd_tol", self.fd_tol),
            ("tol", self.tol),
            ("lipschitz_factor", self.lipschitz_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::config(key(k), "must be positive"));
            }
        }
        if self.t_min >= self.t_max || self.tie_window >= self.t_min {
            return Err(HarnessError::config(
                key("t_min"),
                "need tie_window < t_min < t_max",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct Outcome {
    monotone: Tally,
    basic_mono: Tally,
    semigroup: Tally,
    bounds: Tally,
    dini: Tally,
    lipschitz: Tally,
    pair: Tally,
    residual: Tally,
    fd_skipped: usize,
}

fn same_argmins(a: &HopfLaxResult, b: &HopfLaxResult, x: usize) -> bool {
    a.argmins[x] == b.argmins[x] && a.argmins[x].len() == 1
}

fn instance(
    space: &FiniteMetricMeasureSpace,
    f: &[f64],
    times: &[f64],
    p: &HopflaxParams,
) -> Result<Outcome> {
    let n = space.n();
    let mut out = Outcome::default();
    let scale = |v: f64| 1.0 + v.abs();
    let runs: Vec<HopfLaxResult> = times
        .iter()
        .map(|&t| hopf_lax(space, f, t))
        .collect::<mmslab_core::Result<_>>()?;
    let (inf_f, sup_f) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let osc = oscillation(f);
    for (k, r) in runs.iter().enumerate() {
        let t = r.t;
        for x in 0..n {
            out.bounds
                .record((inf_f - r.q[x]).max(r.q[x] - sup_f) / scale(r.q[x]), p.tol);
        }
        if let Some(next) = runs.get(k + 1) {
            for x in 0..n {
                out.monotone
                    .record((next.q[x] - r.q[x]) / scale(r.q[x]), p.tol);
                out.basic_mono.record(r.d_plus[x] - next.d_minus[x], p.tol);
            }
        }
        for s in &runs {
            let outer = hopf_lax(space, &r.q, s.t)?;
            let joint = hopf_lax(space, f, t + s.t)?;
            for x in 0..n {
                out.semigroup
                    .record((joint.q[x] - outer.q[x]) / scale(outer.q[x]), p.tol);
            }
        }
        let bound = p.lipschitz_factor * (osc / t).sqrt();
        out.lipschitz
            .record(lipschitz_constant(space, &r.q) - bound * (1.0 + p.tol), 0.0);

        let report = hj_subsolution_report(space, f, t)?;
        out.pair.record(report.pair_violations.len() as f64, 0.0);
        out.residual.record(report.flagged.len() as f64, 0.0);

        let before = hopf_lax(space, f, t - p.tie_window)?;
        let after = hopf_lax(space, f, t + p.tie_window)?;
        let lo = hopf_lax(space, f, t - p.fd_step)?;
        let hi = hopf_lax(space, f, t + p.fd_step)?;
        for x in 0..n {
            if !(same_argmins(&before, r, x) && same_argmins(r, &after, x)) {
                out.fd_skipped += 1;
                continue;
            }
            let fd = (hi.q[x] - lo.q[x]) / (2.0 * p.fd_step);
            let left = -r.d_minus[x].powi(2) / (2.0 * t * t);
            let right = -r.d_plus[x].powi(2) / (2.0 * t * t);
            let err = (fd - left).abs().max((fd - right).abs()) / left.abs().max(1.0);
            out.dini.record(err, p.fd_tol);
        }
    }
    Ok(out)
}

pub fn run(name: &str, seed: u64, p: &HopflaxParams) -> Result<Report> {
    p.validate()?;
    let outcomes: Vec<Outcome> = (0..p.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i as u64);
            let n = rng.gen_range(2..=p.max_n);
            let space = random_graph(&mut rng, n)?;
            let integer_valued = rng.gen_bool(0.25);
            let f: Vec<f64> = (0..n)
                .map(|_| {
                    if integer_valued {
                        rng.gen_range(-2..=2) as f64
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            let (a, b) = (p.t_min.ln(), p.t_max.ln());
            let mut times: Vec<f64> = (0..p.times).map(|_| rng.gen_range(a..b).exp()).collect();
            times.sort_by(f64::total_cmp);
            instance(&space, &f, &times, p)
        })
        .collect::<Result<_>>()?;
    let mut total = Outcome::default();
    for o in &outcomes {
        total.monotone.merge(&o.monotone);
        total.basic_mono.merge(&o.basic_mono);
        total.semigroup.merge(&o.semigroup);
        total.bounds.merge(&o.bounds);
        total.dini.merge(&o.dini);
        total.lipschitz.merge(&o.lipschitz);
        total.pair.merge(&o.pair);
        total.residual.merge(&o.residual);
        total.fd_skipped += o.fd_skipped;
    }
    let mut report = Report::new(name, "hopflax_suite", seed);
    for (label, tally) in [
        ("monotone_in_time", total.monotone),
        ("argmin_distance_monotone", total.basic_mono),
        ("semigroup_inequality", total.semigroup),
        ("a_priori_bounds", total.bounds),
        ("time_derivative_vs_finite_difference", total.dini),
        ("lipschitz_bound", total.lipschitz),
        ("pair_inequality", total.pair),
        ("subsolution_residual", total.residual),
    ] {
        report.check(
            Check::zero(format!("{label}.violations"), tally.violations).with_detail(format!(
                "{} comparisons, worst excess {:.3e}",
                tally.tested, tally.worst
            )),
        );
        report.metric(format!("{label}.tested"), tally.tested as f64);
        report.metric(format!("{label}.worst_excess"), tally.worst);
    }
    report.check(Check::at_least(
        "finite_difference_points",
        total.dini.tested as f64,
        1.0,
    ));
    report.metric(
        "finite_difference_skipped_near_ties",
        total.fd_skipped as f64,
    );
    report.metric("tolerance", p.tol);
    report.metric("finite_difference_tolerance", p.fd_tol);
    report.metric("finite_difference_step", p.fd_step);
    Ok(report)
}
