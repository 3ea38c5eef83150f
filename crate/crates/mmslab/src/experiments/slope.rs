//! Consistency of the entropy slope `√F` with the finite-candidate lower
//! bound `sup (Ent(μ) − Ent(ν))⁺ / W₂(μ, ν)`.

use mmslab_core::entropyflow::{
    entropy_slope, oracle_candidates, slope_oracle, JkoOptions, OracleCandidates,
};
use mmslab_core::fields::DirichletForm;
use mmslab_core::space::{build_space, SpaceKind, SpaceSpec};
use mmslab_core::transport::TransportModel;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{instance_rng, random_graph, random_measure, Tally};
use crate::error::{HarnessError, Result};
use crate::profiles::Profile;
use crate::report::{Check, Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlopeParams {
    pub instances: usize,
    pub max_n: usize,
    pub candidates: OracleCandidates,
    pub tol: f64,
    pub ladder: Vec<usize>,
    pub ladder_candidates: OracleCandidates,
    pub ratio_tol: f64,
}

impl Default for SlopeParams {
    fn default() -> Self {
        Self {
            instances: 50,
            max_n: 6,
            candidates: OracleCandidates::default(),
            tol: 1e-6,
            ladder: vec![32, 64, 128],
            ladder_candidates: OracleCandidates {
                samples: 8,
                local_samples: 8,
                jko_steps: vec![1e-6, 1e-5, 1e-4],
                seed: 0,
            },
            ratio_tol: 0.1,
        }
    }
}

impl SlopeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_n < 2 {
            return Err(HarnessError::config(
                "experiment.max_n",
                "max_n must be at least 2",
            ));
        }
        if self.ladder.is_empty()
            || self.ladder.windows(2).any(|w| w[1] <= w[0])
            || self.ladder[0] < 3
        {
            return Err(HarnessError::config(
                "experiment.ladder",
                "ladder must be nonempty, strictly increasing and start at n >= 3",
            ));
        }
        if !(self.tol > 0.0 && self.ratio_tol > 0.0) {
            return Err(HarnessError::config(
                "experiment.tol",
                "tolerances must be positive",
            ));
        }
        for (k, c) in [
            ("candidates", &self.candidates),
            ("ladder_candidates", &self.ladder_candidates),
        ] {
            if c.jko_steps.iter().any(|h| !(*h > 0.0)) {
                return Err(HarnessError::config(
                    format!("experiment.{k}.jko_steps"),
                    "steps must be positive",
                ));
            }
        }
        Ok(())
    }
}

pub fn run(
    name: &str,
    seed: u64,
    base: &SpaceSpec,
    profile: &Profile,
    p: &SlopeParams,
) -> Result<Report> {
    p.validate()?;
    if base.kind != SpaceKind::Circle {
        return Err(HarnessError::config(
            "space.kind",
            "the slope ladder runs on circle grids",
        ));
    }
    let small: Vec<(f64, f64)> = (0..p.instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, i as u64);
            let n = rng.gen_range(2..=p.max_n);
            let space = random_graph(&mut rng, n)?;
            let form = DirichletForm::from_neighbors(&space);
            let mu = random_measure(&mut rng, n, 0.2);
            let spec = OracleCandidates {
                seed: rng.gen(),
                ..p.candidates.clone()
            };
            let candidates = oracle_candidates(&space, &mu, &spec, &JkoOptions::default())?;
            let bound = slope_oracle(&space, &mu, &candidates, TransportModel::Graph)?;
            Ok((bound.value, entropy_slope(&form, &mu)))
        })
        .collect::<Result<_>>()?;
    let mut tally = Tally::default();
    for (oracle, slope) in &small {
        tally.record(oracle - slope, p.tol);
    }
    let mut report = Report::new(name, "slope_consistency", seed);
    report.check(
        Check::zero("oracle_exceeds_slope.violations", tally.violations).with_detail(format!(
            "{} instances, worst excess {:.3e}",
            tally.tested, tally.worst
        )),
    );
    report.metric("oracle_exceeds_slope.worst_excess", tally.worst);
    let ratios: Vec<f64> = small
        .iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(o, s)| o / s)
        .collect();
    report.metric(
        "small_instances.max_ratio",
        ratios.iter().copied().fold(0.0, f64::max),
    );

    let ladder: Vec<(usize, f64, f64)> = p
        .ladder
        .par_iter()
        .map(|&n| {
            let mut spec = base.clone();
            spec.n = n;
            let space = build_space(&spec)?;
            let form = DirichletForm::grid(&space);
            let mu = profile.measure(&space)?;
            let candidates =
                oracle_candidates(&space, &mu, &p.ladder_candidates, &JkoOptions::cells())?;
            let bound = slope_oracle(&space, &mu, &candidates, TransportModel::Cells)?;
            Ok((n, bound.value, entropy_slope(&form, &mu)))
        })
        .collect::<Result<_>>()?;
    for (n, oracle, slope) in &ladder {
        report.metric(format!("ladder.n{n}.oracle"), *oracle);
        report.metric(format!("ladder.n{n}.slope"), *slope);
        report.metric(format!("ladder.n{n}.ratio"), oracle / slope);
    }
    let (n, oracle, slope) = *ladder.last().expect("nonempty ladder");
    report.check(Check::at_most(
        format!("ladder.n{n}.ratio_deviation"),
        (oracle / slope - 1.0).abs(),
        p.ratio_tol,
    ));
    report.series(
        "ladder_ratio",
        ladder.iter().map(|(n, o, s)| (*n as f64, o / s)).collect(),
    );
    Ok(report)
}
