//! Relative entropy, Fisher information and the entropy slope; the JKO
//! minimizing-movement scheme; energy-dissipation audits of measure curves;
//! and the plan functional `G_γ(μ) = Ent(μ) − Ent(γ_♯μ)`.
//!
//! The descending slope of the entropy is defined computationally as
//! `√F(ρ)` with `F(ρ) = 8·C(√ρ)`. The supremum of entropy decrease over
//! transport distance is only available as a lower bound from a finite
//! candidate set ([`slope_oracle`]).

mod jko;

pub use jko::{jko_flow, jko_step, JkoDiagnostics, JkoOptions, JkoRecord, JkoTrajectory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::fields::DirichletForm;
use crate::space::FiniteMetricMeasureSpace;
use crate::transport::{
    metric_speed, push_forward_plan, w2_distance, Coupling, MeasureCurve, ProbabilityMeasure,
    TransportModel,
};

/// `Σ w log(w/m)` with `0 log 0 = 0`.
pub fn entropy_of(reference: &[f64], weights: &[f64]) -> f64 {
    weights
        .iter()
        .zip(reference)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, m)| w * (w / m).ln())
        .sum()
}

/// Relative entropy `Ent(μ | m) = Σ m ρ log ρ`.
pub fn entropy(space: &FiniteMetricMeasureSpace, mu: &ProbabilityMeasure) -> f64 {
    entropy_of(space.measure(), mu.weights())
}

/// `F(ρ) = 8·C(√ρ) = 4 Σ_edges c (√ρ_y − √ρ_x)²`.
pub fn fisher_density(form: &DirichletForm, rho: &[f64]) -> f64 {
    form.edges()
        .iter()
        .map(|e| 4.0 * e.c * (rho[e.j].sqrt() - rho[e.i].sqrt()).powi(2))
        .sum()
}

/// Fisher information of `μ` relative to the form's measure.
pub fn fisher(form: &DirichletForm, mu: &ProbabilityMeasure) -> f64 {
    fisher_density(form, &mu.density(form.measure()))
}

/// `|∇⁻Ent|(μ) := √F(μ)`.
pub fn entropy_slope(form: &DirichletForm, mu: &ProbabilityMeasure) -> f64 {
    fisher(form, mu).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeBound {
    /// `max (Ent(μ) − Ent(ν))⁺ / W₂(μ, ν)` over the candidates.
    pub value: f64,
    /// Index of the maximizing candidate, if any candidate decreased the
    /// entropy.
    pub best: Option<usize>,
    pub evaluated: usize,
}

/// Lower bound for the descending slope of the entropy at `μ` from a finite
/// candidate set. Candidates at zero distance from `μ` are skipped.
pub fn slope_oracle(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbabilityMeasure,
    candidates: &[ProbabilityMeasure],
    model: TransportModel,
) -> Result<SlopeBound> {
    let ent = entropy(space, mu);
    let mut bound = SlopeBound {
        value: 0.0,
        best: None,
        evaluated: 0,
    };
    for (k, nu) in candidates.iter().enumerate() {
        check_len(space.n(), nu.len())?;
        let drop = ent - entropy(space, nu);
        if drop <= 0.0 {
            bound.evaluated += 1;
            continue;
        }
        let d = w2_distance(space, mu, nu, model)?;
        bound.evaluated += 1;
        if d <= 1e-14 {
            continue;
        }
        if drop / d > bound.value {
            bound.value = drop / d;
            bound.best = Some(k);
        }
    }
    Ok(bound)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCandidates {
    /// Uniformly random points of the simplex.
    pub samples: usize,
    /// Random points of the segment from `μ` towards a random simplex
    /// point, at fractions drawn log-uniformly from `[1e-4, 1]`.
    pub local_samples: usize,
    /// Step sizes of the JKO one-step candidates.
    pub jko_steps: Vec<f64>,
    pub seed: u64,
}

impl Default for OracleCandidates {
    fn default() -> Self {
        Self {
            samples: 32,
            local_samples: 32,
            jko_steps: vec![1e-4, 1e-3, 1e-2],
            seed: 0,
        }
    }
}

/// The reference measure, random simplex points, local perturbations and
/// JKO one-step outputs from `μ`.
pub fn oracle_candidates(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbabilityMeasure,
    spec: &OracleCandidates,
    jko: &JkoOptions,
) -> Result<Vec<ProbabilityMeasure>> {
    let n = space.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let simplex_point = |rng: &mut ChaCha8Rng| {
        let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        ProbabilityMeasure::normalized(w)
    };
    let mut out = vec![ProbabilityMeasure::reference(space)];
    for _ in 0..spec.samples {
        out.push(simplex_point(&mut rng)?);
    }
    for _ in 0..spec.local_samples {
        let target = simplex_point(&mut rng)?;
        let frac = 10f64.powf(rng.gen_range(-4.0..0.0));
        let w = mu
            .weights()
            .iter()
            .zip(target.weights())
            .map(|(a, b)| (1.0 - frac) * a + frac * b)
            .collect();
        out.push(ProbabilityMeasure::normalized(w)?);
    }
    for &h in &spec.jko_steps {
        out.push(jko_step(space, mu, h, jko)?.0);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdeReport {
    pub entropy_drop: f64,
    /// `½∫|μ̇|²` from interval speeds.
    pub kinetic: f64,
    /// `½∫F(ρ_t)` by the trapezoid rule.
    pub slope_term: f64,
    /// `kinetic + slope_term − entropy_drop`; nonnegative for any curve in
    /// the continuum, zero along the gradient flow.
    pub deficit: f64,
    pub relative_deficit: f64,
    pub speeds: Vec<f64>,
    pub fisher: Vec<f64>,
    /// `|μ̇|² / F − 1` per interval, with `F` averaged over the endpoints.
    pub velocity_excess: Vec<f64>,
    pub velocity_tolerance: f64,
    pub velocity_violations: usize,
}

/// Default tolerance on `|μ̇|² ≤ F` per interval.
pub const VELOCITY_TOL: f64 = 0.05;

/// Energy-dissipation balance of a measure curve.
pub fn ede_report(
    space: &FiniteMetricMeasureSpace,
    form: &DirichletForm,
    curve: &MeasureCurve,
    model: TransportModel,
) -> Result<EdeReport> {
    let speeds = metric_speed(space, curve, model)?;
    let fisher: Vec<f64> = curve.measures().iter().map(|mu| fisher(form, mu)).collect();
    let t = curve.times();
    let ents: Vec<f64> = curve
        .measures()
        .iter()
        .map(|mu| entropy(space, mu))
        .collect();
    let mut kinetic = 0.0;
    let mut slope_term = 0.0;
    let mut velocity_excess = Vec::with_capacity(speeds.len());
    for k in 0..speeds.len() {
        let dt = t[k + 1] - t[k];
        kinetic += 0.5 * speeds[k] * speeds[k] * dt;
        let f_mid = 0.5 * (fisher[k] + fisher[k + 1]);
        slope_term += 0.5 * f_mid * dt;
        velocity_excess.push(if f_mid > 0.0 {
            speeds[k] * speeds[k] / f_mid - 1.0
        } else if speeds[k] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
    }
    let entropy_drop = ents.first().copied().unwrap_or(0.0) - ents.last().copied().unwrap_or(0.0);
    let deficit = kinetic + slope_term - entropy_drop;
    let scale = entropy_drop.abs().max(kinetic + slope_term);
    let velocity_violations = velocity_excess
        .iter()
        .filter(|v| **v > VELOCITY_TOL)
        .count();
    Ok(EdeReport {
        entropy_drop,
        kinetic,
        slope_term,
        deficit,
        relative_deficit: if scale > 0.0 { deficit / scale } else { 0.0 },
        speeds,
        fisher,
        velocity_excess,
        velocity_tolerance: VELOCITY_TOL,
        velocity_violations,
    })
}

/// `G_γ(μ) = Ent(μ) − Ent(γ_♯μ)`.
pub fn g_gamma(
    space: &FiniteMetricMeasureSpace,
    plan: &Coupling,
    mu: &ProbabilityMeasure,
) -> Result<f64> {
    let pushed = push_forward_plan(plan, mu)?;
    Ok(entropy(space, mu) - entropy(space, &pushed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub entropy: f64,
    pub fisher: f64,
    /// Squared slope through the identification `|∇⁻Ent|² = F`.
    pub slope_squared: f64,
    pub oracle_lower_bound: Option<f64>,
    pub ede: Option<EdeReport>,
}

pub fn entropy_report(
    space: &FiniteMetricMeasureSpace,
    form: &DirichletForm,
    mu: &ProbabilityMeasure,
    oracle: Option<&SlopeBound>,
) -> EntropyReport {
    let f = fisher(form, mu);
    EntropyReport {
        entropy: entropy(space, mu),
        fisher: f,
        slope_squared: f,
        oracle_lower_bound: oracle.map(|o| o.value),
        ede: None,
    }
}

#[cfg(test)]
mod tests;
