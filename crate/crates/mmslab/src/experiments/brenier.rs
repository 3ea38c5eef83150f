//! Metric Brenier audit: on an optimal plan the transport distance equals
//! the ascending slope of the Kantorovich potential at the source point.

use mmslab_core::fields::{lipschitz_constant, local_slope, SlopeKind};
use mmslab_core::space::{build_space, FiniteMetricMeasureSpace, SpaceKind, SpaceSpec};
use mmslab_core::transport::{c_transform, solve_w2, ProbabilityMeasure, SUPPORT_TOL};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::profiles::Profile;
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrenierParams {
    pub ladder: Vec<usize>,
    /// Bound on the plan-weighted RMS at the finest rung, as a fraction of
    /// the potential's Lipschitz constant.
    pub lip_fraction: f64,
    /// Grid of the interval example `δ₀ → uniform`.
    pub example_n: usize,
    pub example_tol: f64,
}

impl Default for BrenierParams {
    fn default() -> Self {
        Self {
            ladder: vec![32, 64, 128],
            lip_fraction: 0.1,
            example_n: 400,
            example_tol: 5e-3,
        }
    }
}

impl BrenierParams {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty()
            || self.ladder.windows(2).any(|w| w[1] <= w[0])
            || self.ladder[0] < 3
        {
            return Err(HarnessError::config(
                "experiment.ladder",
                "ladder must be nonempty, strictly increasing and start at n >= 3",
            ));
        }
        if !(self.lip_fraction > 0.0 && self.example_tol > 0.0) || self.example_n < 2 {
            return Err(HarnessError::config(
                "experiment.example_tol",
                "tolerances must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrenierRung {
    pub n: usize,
    pub spacing: f64,
    /// `(Σ γ(x,y)(d(x,y) − |∇⁺φ|(x))²)^½`.
    pub rms: f64,
    pub lipschitz: f64,
    /// `Σ |∇⁺φ|² μ`.
    pub slope_energy: f64,
    pub w2_squared: f64,
    /// Largest `|φ(x) + ψ(y) − ½d²|` on the plan support.
    pub support_residual: f64,
}

/// Solves the transport problem, replaces `φ` by the c-transform of the dual
/// `ψ` (the c-concave potential, independent of which optimal basis the
/// solver returned) and compares distances with slopes.
pub fn audit(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbabilityMeasure,
    nu: &ProbabilityMeasure,
) -> Result<BrenierRung> {
    let sol = solve_w2(space, mu, nu)?;
    let psi = &sol.certificate.psi;
    let phi = c_transform(space, psi);
    let slope = local_slope(space, &phi, SlopeKind::Ascending);
    let mut sq = 0.0;
    let mut support_residual = 0.0f64;
    for e in sol.plan.entries(SUPPORT_TOL) {
        let d = space.dist(e.i, e.j);
        sq += e.mass * (d - slope[e.i]).powi(2);
        support_residual = support_residual.max((phi[e.i] + psi[e.j] - 0.5 * d * d).abs());
    }
    let slope_energy = mu
        .weights()
        .iter()
        .zip(&slope)
        .map(|(w, s)| w * s * s)
        .sum();
    Ok(BrenierRung {
        n: space.n(),
        spacing: space.spacing().unwrap_or(space.min_edge()),
        rms: sq.sqrt(),
        lipschitz: lipschitz_constant(space, &phi),
        slope_energy,
        w2_squared: sol.w2 * sol.w2,
        support_residual,
    })
}

pub fn run(
    name: &str,
    seed: u64,
    base: &SpaceSpec,
    mu: &Profile,
    nu: &Profile,
    p: &BrenierParams,
) -> Result<Report> {
    p.validate()?;
    if base.kind != SpaceKind::Circle {
        return Err(HarnessError::config(
            "space.kind",
            "the Brenier ladder runs on circle grids",
        ));
    }
    let rungs: Vec<BrenierRung> = p
        .ladder
        .par_iter()
        .map(|&n| {
            let mut spec = base.clone();
            spec.n = n;
            let space = build_space(&spec)?;
            audit(&space, &mu.measure(&space)?, &nu.measure(&space)?)
        })
        .collect::<Result<_>>()?;
    let mut report = Report::new(name, "brenier", seed);
    for r in &rungs {
        report.metric(format!("n{}.rms", r.n), r.rms);
        report.metric(format!("n{}.rms_over_spacing", r.n), r.rms / r.spacing);
        report.metric(format!("n{}.lipschitz", r.n), r.lipschitz);
        report.metric(format!("n{}.slope_energy", r.n), r.slope_energy);
        report.metric(format!("n{}.w2_squared", r.n), r.w2_squared);
        report.metric(
            format!("n{}.slope_energy_minus_w2_squared", r.n),
            r.slope_energy - r.w2_squared,
        );
        report.check(Check::at_most(
            format!("n{}.support_residual", r.n),
            r.support_residual,
            1e-9,
        ));
    }
    let increases = rungs.windows(2).filter(|w| !(w[1].rms < w[0].rms)).count();
    report.check(Check::zero("rms_not_decreasing_along_ladder", increases));
    let last = rungs.last().expect("nonempty ladder");
    report.check(
        Check::at_most(
            format!("n{}.rms", last.n),
            last.rms,
            p.lip_fraction * last.lipschitz,
        )
        .with_detail(format!("bound = {} x Lip(phi)", p.lip_fraction)),
    );
    let gaps: Vec<f64> = rungs
        .iter()
        .map(|r| (r.slope_energy - r.w2_squared).abs())
        .collect();
    report.metric("slope_energy_gap_finest", *gaps.last().unwrap());
    report.series(
        "rms_vs_n",
        rungs.iter().map(|r| (r.n as f64, r.rms)).collect(),
    );
    report.series(
        "slope_energy_gap_vs_n",
        rungs
            .iter()
            .zip(&gaps)
            .map(|(r, g)| (r.n as f64, *g))
            .collect(),
    );

    // δ₀ → uniform on [0, 1]: the potential is flat at the source although
    // all mass travels.
    let space = build_space(&SpaceSpec::interval(p.example_n, 1.0))?;
    let example = audit(
        &space,
        &ProbabilityMeasure::dirac(p.example_n, 0),
        &ProbabilityMeasure::reference(&space),
    )?;
    report.check(Check::at_most(
        "dirac_example.slope_energy",
        example.slope_energy,
        p.example_tol,
    ));
    report.check(Check::at_most(
        "dirac_example.w2_squared_minus_one_third",
        (example.w2_squared - 1.0 / 3.0).abs(),
        p.example_tol,
    ));
    report.metric("dirac_example.w2_squared", example.w2_squared);
    Ok(report)
}
