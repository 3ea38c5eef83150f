//! Convexity audits: Fisher information, the squared entropy slope (with
//! the candidate lower bound) and the plan functional `G_γ`.

use mmslab_core::entropyflow::{
    entropy_slope, fisher_density, g_gamma, oracle_candidates, slope_oracle, JkoOptions,
    OracleCandidates,
};
use mmslab_core::fields::DirichletForm;
use mmslab_core::transport::{Coupling, ProbabilityMeasure, TransportModel};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::heat::random_form;
use super::{instance_rng, random_density, random_graph, random_measure, Tally};
use crate::error::{HarnessError, Result};
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvexityParams {
    pub trials: usize,
    pub max_n: usize,
    pub plan_points: usize,
    /// Triples on which the candidate lower bound is also compared.
    pub oracle_triples: usize,
    pub oracle_candidates: OracleCandidates,
    pub tol: f64,
}

impl Default for ConvexityParams {
    fn default() -> Self {
        Self {
            trials: 1000,
            max_n: 12,
            plan_points: 5,
            oracle_triples: 40,
            oracle_candidates: OracleCandidates {
                samples: 16,
                local_samples: 16,
                jko_steps: vec![1e-3],
                seed: 0,
            },
            tol: 1e-10,
        }
    }
}

impl ConvexityParams {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.max_n < 2 || self.plan_points < 2 {
            return Err(HarnessError::config(
                "experiment.trials",
                "need trials >= 1, max_n >= 2, plan_points >= 2",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(HarnessError::config("experiment.tol", "must be positive"));
        }
        Ok(())
    }
}

fn mix(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect()
}

fn maybe_zeros(rng: &mut rand_chacha::ChaCha8Rng, mut v: Vec<f64>) -> Vec<f64> {
    for x in v.iter_mut() {
        if rng.gen_bool(0.15) {
            *x = 0.0;
        }
    }
    v
}

fn fisher_trial(seed: u64, i: usize, p: &ConvexityParams) -> Result<f64> {
    let mut rng = instance_rng(seed, i as u64);
    let n = rng.gen_range(2..=p.max_n);
    let form = random_form(&mut rng, n)?;
    let r1 = random_density(&mut rng, n, 0.0, 3.0);
    let r1 = maybe_zeros(&mut rng, r1);
    let r2 = random_density(&mut rng, n, 0.0, 3.0);
    let r2 = maybe_zeros(&mut rng, r2);
    let alpha = rng.gen_range(0.0..1.0);
    let lhs = fisher_density(&form, &mix(&r1, &r2, alpha));
    Ok(lhs - alpha * fisher_density(&form, &r1) - (1.0 - alpha) * fisher_density(&form, &r2))
}

/// Returns `(slope² excess, oracle² excess if compared)`.
fn slope_trial(seed: u64, i: usize, p: &ConvexityParams) -> Result<(f64, Option<f64>)> {
    let mut rng = instance_rng(seed, i as u64);
    let n = rng.gen_range(2..=p.max_n.min(8));
    let space = random_graph(&mut rng, n)?;
    let form = DirichletForm::from_neighbors(&space);
    let mu1 = random_measure(&mut rng, n, 0.2);
    let mu2 = random_measure(&mut rng, n, 0.2);
    let alpha = rng.gen_range(0.0..1.0);
    let mixed = ProbabilityMeasure::normalized(mix(mu1.weights(), mu2.weights(), alpha))?;
    let s = |mu: &ProbabilityMeasure| entropy_slope(&form, mu).powi(2);
    let rhs = alpha * s(&mu1) + (1.0 - alpha) * s(&mu2);
    let excess = s(&mixed) - rhs;
    let oracle = if i < p.oracle_triples {
        let spec = OracleCandidates {
            seed: rng.gen(),
            ..p.oracle_candidates.clone()
        };
        let candidates = oracle_candidates(&space, &mixed, &spec, &JkoOptions::default())?;
        let bound = slope_oracle(&space, &mixed, &candidates, TransportModel::Graph)?;
        Some(bound.value.powi(2) - rhs)
    } else {
        None
    };
    Ok((excess, oracle))
}

fn g_gamma_trial(seed: u64, i: usize, p: &ConvexityParams) -> Result<f64> {
    let mut rng = instance_rng(seed, i as u64);
    let n = p.plan_points;
    let space = random_graph(&mut rng, n)?;
    let plan: Vec<f64> = (0..n * n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    let mut plan = plan;
    for x in 0..n {
        plan[x * n + rng.gen_range(0..n)] += 0.1;
    }
    let total: f64 = plan.iter().sum();
    plan.iter_mut().for_each(|v| *v /= total);
    let gamma = Coupling::new(n, n, plan)?;
    let mu1 = random_measure(&mut rng, n, 0.2);
    let mu2 = random_measure(&mut rng, n, 0.2);
    let alpha = [0.25, 0.5, 0.75][i % 3];
    let mixed = ProbabilityMeasure::normalized(mix(mu1.weights(), mu2.weights(), alpha))?;
    let g = |mu: &ProbabilityMeasure| g_gamma(&space, &gamma, mu);
    Ok(g(&mixed)? - alpha * g(&mu1)? - (1.0 - alpha) * g(&mu2)?)
}

pub fn run(name: &str, seed: u64, p: &ConvexityParams) -> Result<Report> {
    p.validate()?;
    let fisher: Vec<f64> = (0..p.trials)
        .into_par_iter()
        .map(|i| fisher_trial(seed, i, p))
        .collect::<Result<_>>()?;
    let slope: Vec<(f64, Option<f64>)> = (0..p.trials)
        .into_par_iter()
        .map(|i| slope_trial(seed ^ 0x736c_6f70, i, p))
        .collect::<Result<_>>()?;
    let g: Vec<f64> = (0..p.trials)
        .into_par_iter()
        .map(|i| g_gamma_trial(seed ^ 0x6767_616d, i, p))
        .collect::<Result<_>>()?;

    let tally = |v: &mut dyn Iterator<Item = f64>| {
        let mut t = Tally::default();
        v.for_each(|x| t.record(x, p.tol));
        t
    };
    let mut report = Report::new(name, "convexity", seed);
    for (label, t) in [
        ("fisher", tally(&mut fisher.iter().copied())),
        ("squared_slope", tally(&mut slope.iter().map(|s| s.0))),
        (
            "squared_slope_oracle",
            tally(&mut slope.iter().filter_map(|s| s.1)),
        ),
        ("g_gamma", tally(&mut g.iter().copied())),
    ] {
        report.check(
            Check::zero(format!("{label}.violations"), t.violations)
                .with_detail(format!("{} trials, worst excess {:.3e}", t.tested, t.worst)),
        );
        report.metric(format!("{label}.worst_excess"), t.worst);
        report.metric(format!("{label}.trials"), t.tested as f64);
    }
    report.metric("tolerance", p.tol);
    Ok(report)
}
