//! Exactness audits of the implicit-Euler heat flow on random Dirichlet
//! forms.

use mmslab_core::fields::{inner, Conductance, DirichletForm};
use mmslab_core::heatflow::{flow_diagnostics, heat_flow, ConvexEntropy};
use mmslab_core::space::FiniteMetricMeasureSpace;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{instance_rng, random_density, random_graph, Tally};
use crate::error::{HarnessError, Result};
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatParams {
    pub instances: usize,
    pub max_n: usize,
    pub steps: usize,
    pub mass_tol: f64,
    pub tol: f64,
    /// `(t_end, steps)` runs of the two-point spectral comparison.
    pub two_point_runs: Vec<(f64, usize)>,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            instances: 200,
            max_n: 24,
            steps: 10,
            mass_tol: 1e-10,
            tol: 1e-12,
            two_point_runs: vec![(0.1, 5), (0.3, 10), (1.0, 40), (2.0, 100), (5.0, 50)],
        }
    }
}

impl HeatParams {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.steps == 0 {
            return Err(HarnessError::config(
                "experiment.steps",
                "instances and steps must be positive",
            ));
        }
        if self.max_n < 2 {
            return Err(HarnessError::config(
                "experiment.max_n",
                "max_n must be at least 2",
            ));
        }
        if !(self.mass_tol > 0.0 && self.tol > 0.0) {
            return Err(HarnessError::config(
                "experiment.tol",
                "tolerances must be positive",
            ));
        }
        if self
            .two_point_runs
            .iter()
            .any(|(t, n)| !(*t > 0.0) || *n == 0)
        {
            return Err(HarnessError::config(
                "experiment.two_point_runs",
                "need t > 0 and steps > 0",
            ));
        }
        Ok(())
    }
}

/// Random conductances on the edges of a random graph.
pub fn random_form(rng: &mut ChaCha8Rng, n: usize) -> Result<DirichletForm> {
    let space: FiniteMetricMeasureSpace = random_graph(rng, n)?;
    let edges: Vec<Conductance> = space
        .edges()
        .into_iter()
        .map(|(i, j, _)| Conductance {
            i,
            j,
            c: rng.gen_range(0.1..3.0),
        })
        .collect();
    Ok(DirichletForm::from_edges(&space, &edges)?)
}

#[derive(Default)]
struct Outcome {
    mass: Tally,
    comparison: Tally,
    l1: Tally,
    l2: Tally,
    linf: Tally,
    quadratic: Tally,
    boltzmann: Tally,
}

fn instance(seed: u64, i: usize, p: &HeatParams) -> Result<Outcome> {
    let mut rng = instance_rng(seed, i as u64);
    let n = rng.gen_range(2..=p.max_n);
    let form = random_form(&mut rng, n)?;
    let m = form.measure().to_vec();
    let t_end = 10f64.powf(rng.gen_range(-2.0..1.0));
    let f = random_density(&mut rng, n, 0.01, 2.0);
    let g: Vec<f64> = f.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
    let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let tf = heat_flow(&form, &f, t_end, p.steps)?;
    let tg = heat_flow(&form, &g, t_end, p.steps)?;
    let th = heat_flow(&form, &h, t_end, p.steps)?;

    let mut out = Outcome::default();
    let l1 = |d: &[f64]| d.iter().zip(&m).map(|(d, m)| d.abs() * m).sum::<f64>();
    let l2 = |d: &[f64]| inner(&m, d, d).sqrt();
    let linf = |d: &[f64]| d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for k in 1..=p.steps {
        let (fk, gk, hk) = (&tf.fields[k], &tg.fields[k], &th.fields[k]);
        for x in 0..n {
            out.comparison
                .record((fk[x] - gk[x]) / (1.0 + gk[x].abs()), p.tol);
        }
        let d_in: Vec<f64> = tf.fields[k - 1]
            .iter()
            .zip(&th.fields[k - 1])
            .map(|(a, b)| a - b)
            .collect();
        let d_out: Vec<f64> = fk.iter().zip(hk).map(|(a, b)| a - b).collect();
        out.l1
            .record((l1(&d_out) - l1(&d_in)) / (1.0 + l1(&d_in)), p.tol);
        out.l2
            .record((l2(&d_out) - l2(&d_in)) / (1.0 + l2(&d_in)), p.tol);
        out.linf
            .record((linf(&d_out) - linf(&d_in)) / (1.0 + linf(&d_in)), p.tol);
    }
    for traj in [&tf, &tg, &th] {
        let quad = flow_diagnostics(&form, traj, ConvexEntropy::Quadratic);
        for d in &quad.mass_drift {
            out.mass.record(*d, p.mass_tol);
        }
        for v in &quad.entropy_increase {
            out.quadratic.record(*v, p.tol);
        }
    }
    for traj in [&tf, &tg] {
        let boltz = flow_diagnostics(&form, traj, ConvexEntropy::Boltzmann);
        let totals: Vec<f64> = traj
            .fields
            .iter()
            .map(|f| ConvexEntropy::Boltzmann.total(&m, f).unwrap_or(f64::NAN))
            .collect();
        for (k, v) in boltz.entropy_increase.iter().enumerate() {
            out.boltzmann.record(*v / (1.0 + totals[k].abs()), p.tol);
        }
    }
    Ok(out)
}

/// `(t_end, steps, squared error, (t/steps)·C(f₀))` for the two-point flow
/// from `(1, 0)` with unit conductance and unit masses.
pub fn two_point_runs(runs: &[(f64, usize)]) -> Result<Vec<(f64, usize, f64, f64)>> {
    let space = FiniteMetricMeasureSpace::from_edges(2, &[(0, 1, 1.0)], vec![1.0, 1.0])?;
    let form = DirichletForm::from_edges(&space, &[Conductance { i: 0, j: 1, c: 1.0 }])?;
    let f0 = [1.0, 0.0];
    runs.iter()
        .map(|&(t, steps)| {
            let traj = heat_flow(&form, &f0, t, steps)?;
            let exact = 0.5 + 0.5 * (-2.0 * t).exp();
            let end = traj.last();
            let err2 = (end[0] - exact).powi(2) + (end[1] - (1.0 - exact)).powi(2);
            Ok((t, steps, err2, t / steps as f64 * form.energy(&f0)))
        })
        .collect()
}

pub fn run(name: &str, seed: u64, p: &HeatParams) -> Result<Report> {
    p.validate()?;
    let outcomes: Vec<Outcome> = (0..p.instances)
        .into_par_iter()
        .map(|i| instance(seed, i, p))
        .collect::<Result<_>>()?;
    let mut total = Outcome::default();
    for o in &outcomes {
        total.mass.merge(&o.mass);
        total.comparison.merge(&o.comparison);
        total.l1.merge(&o.l1);
        total.l2.merge(&o.l2);
        total.linf.merge(&o.linf);
        total.quadratic.merge(&o.quadratic);
        total.boltzmann.merge(&o.boltzmann);
    }
    let mut report = Report::new(name, "heat_exactness", seed);
    report.check(Check::at_most(
        "mass_drift_per_step.worst",
        total.mass.worst,
        p.mass_tol,
    ));
    for (label, t) in [
        ("comparison_principle", total.comparison),
        ("l1_contraction", total.l1),
        ("l2_contraction", total.l2),
        ("linf_contraction", total.linf),
        ("quadratic_entropy_monotone", total.quadratic),
        ("boltzmann_entropy_monotone", total.boltzmann),
    ] {
        report.check(
            Check::zero(format!("{label}.violations"), t.violations)
                .with_detail(format!("{} comparisons, worst {:.3e}", t.tested, t.worst)),
        );
        report.metric(format!("{label}.worst"), t.worst);
    }
    for (t, steps, err2, bound) in two_point_runs(&p.two_point_runs)? {
        report.check(Check::at_most(
            format!("two_point_spectral.t{t}_n{steps}.squared_error"),
            err2,
            bound,
        ));
    }
    report.metric("tolerance", p.tol);
    Ok(report)
}
