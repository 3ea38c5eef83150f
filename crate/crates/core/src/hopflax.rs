//! Exact Hopf-Lax semigroup on a finite space.
//!
//! `Q_t f(x) = min_y f(y) + d(x,y)²/(2t)` is evaluated by enumeration. The
//! minimizer set at each point determines `D⁻`/`D⁺`, the extreme distances to
//! minimizers, and through them the one-sided time derivatives
//! `−D∓(x,t)²/(2t²)`. On a finite space with finite `f` the blow-up time is
//! infinite, so it is not tracked.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::fields::{local_slope, SlopeKind};
use crate::space::FiniteMetricMeasureSpace;

/// Relative tolerance deciding membership in the argmin set.
pub const TIE_TOL: f64 = 1e-12;

/// Threshold above which a subsolution residual is flagged.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfLaxResult {
    pub t: f64,
    pub q: Vec<f64>,
    pub argmins: Vec<Vec<usize>>,
    pub d_minus: Vec<f64>,
    pub d_plus: Vec<f64>,
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "time must be positive, got {t}"
        )))
    }
}

/// Minimum of `F(t,x,·)` and its near-minimizers at a single point.
fn minimize_at(space: &FiniteMetricMeasureSpace, f: &[f64], t: f64, x: usize) -> (f64, Vec<usize>) {
    let n = space.n();
    let cost = |y: usize| f[y] + space.dist(x, y).powi(2) / (2.0 * t);
    let q = (0..n).map(cost).fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * (1.0 + q.abs());
    let argmins = (0..n).filter(|&y| cost(y) - q <= tol).collect();
    (q, argmins)
}

/// `Q_t f` with minimizer sets and `D±`.
pub fn hopf_lax(space: &FiniteMetricMeasureSpace, f: &[f64], t: f64) -> Result<HopfLaxResult> {
    check_time(t)?;
    check_len(space.n(), f.len())?;
    check_finite(f, "f")?;
    let mut q = Vec::with_capacity(space.n());
    let mut argmins = Vec::with_capacity(space.n());
    for x in 0..space.n() {
        let (qx, ax) = minimize_at(space, f, t, x);
        q.push(qx);
        argmins.push(ax);
    }
    let (d_minus, d_plus) = extreme_distances(space, &argmins);
    Ok(HopfLaxResult {
        t,
        q,
        argmins,
        d_minus,
        d_plus,
    })
}

fn extreme_distances(
    space: &FiniteMetricMeasureSpace,
    argmins: &[Vec<usize>],
) -> (Vec<f64>, Vec<f64>) {
    argmins
        .iter()
        .enumerate()
        .map(|(x, set)| {
            set.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &y| {
                let d = space.dist(x, y);
                (lo.min(d), hi.max(d))
            })
        })
        .unzip()
}

/// `(D⁻, D⁺)` of a Hopf-Lax result.
pub fn min_distances(result: &HopfLaxResult) -> (Vec<f64>, Vec<f64>) {
    (result.d_minus.clone(), result.d_plus.clone())
}

/// Left and right time derivatives of `t ↦ Q_t f(x)`:
/// `(−D⁻(x,t)²/(2t²), −D⁺(x,t)²/(2t²))`.
pub fn hj_derivatives(
    space: &FiniteMetricMeasureSpace,
    f: &[f64],
    t: f64,
    x: usize,
) -> Result<(f64, f64)> {
    check_time(t)?;
    check_len(space.n(), f.len())?;
    if x >= space.n() {
        return Err(Error::InvalidArgument(format!("point {x} out of range")));
    }
    let (_, argmins) = minimize_at(space, f, t, x);
    let (lo, hi) = argmins
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &y| {
            let d = space.dist(x, y);
            (lo.min(d), hi.max(d))
        });
    let s = 2.0 * t * t;
    Ok((-lo * lo / s, -hi * hi / s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairViolation {
    pub x: usize,
    pub y: usize,
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsolutionReport {
    pub t: f64,
    /// Pairs where `Q(x) − Q(y) ≤ d(x,y)(D⁻(y)/t + d(x,y)/(2t))` fails by more
    /// than [`RESIDUAL_TOL`].
    pub pair_violations: Vec<PairViolation>,
    /// Smallest slack of the pair inequality over all pairs (0 at `x = y`).
    pub min_pair_slack: f64,
    /// Per-point `∂⁻_t Q + ½((|∇⁺Q| − r_x/(2t))⁺)²`, expected `≤ 0`.
    pub residuals: Vec<f64>,
    /// Points whose residual exceeds [`RESIDUAL_TOL`].
    pub flagged: Vec<usize>,
}

impl SubsolutionReport {
    pub fn passed(&self) -> bool {
        self.pair_violations.is_empty() && self.flagged.is_empty()
    }
}

/// Audits the finite-space subsolution inequalities of `Q_t f`.
pub fn hj_subsolution_report(
    space: &FiniteMetricMeasureSpace,
    f: &[f64],
    t: f64,
) -> Result<SubsolutionReport> {
    let hl = hopf_lax(space, f, t)?;
    let n = space.n();
    let mut pair_violations = Vec::new();
    let mut min_pair_slack = f64::INFINITY;
    for x in 0..n {
        for y in 0..n {
            let d = space.dist(x, y);
            let bound = d * (hl.d_minus[y] / t + d / (2.0 * t));
            let slack = bound - (hl.q[x] - hl.q[y]);
            min_pair_slack = min_pair_slack.min(slack);
            let scale = 1.0 + hl.q[x].abs().max(hl.q[y].abs());
            if -slack > RESIDUAL_TOL * scale {
                pair_violations.push(PairViolation {
                    x,
                    y,
                    excess: -slack,
                });
            }
        }
    }
    let ascending = local_slope(space, &hl.q, SlopeKind::Ascending);
    let residuals: Vec<f64> = (0..n)
        .map(|x| {
            let left = -hl.d_minus[x].powi(2) / (2.0 * t * t);
            let reduced = (ascending[x] - space.max_edge(x) / (2.0 * t)).max(0.0);
            left + 0.5 * reduced * reduced
        })
        .collect();
    let flagged = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > RESIDUAL_TOL)
        .map(|(x, _)| x)
        .collect();
    Ok(SubsolutionReport {
        t,
        pair_violations,
        min_pair_slack,
        residuals,
        flagged,
    })
}

/// Below this time `Q_t f = f` exactly: `min_edge²/(2·osc f)`.
pub fn identity_time(space: &FiniteMetricMeasureSpace, f: &[f64]) -> f64 {
    let osc = crate::fields::oscillation(f);
    if osc == 0.0 {
        f64::INFINITY
    } else {
        // Any y ≠ x has d(x,y) ≥ the smallest pairwise distance.
        let n = space.n();
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                dmin = dmin.min(space.dist(i, j));
            }
        }
        dmin * dmin / (2.0 * osc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{lipschitz_constant, oscillation};
    use crate::space::{build_space, SpaceSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_point() -> FiniteMetricMeasureSpace {
        FiniteMetricMeasureSpace::from_edges(2, &[(0, 1, 1.0)], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn two_point_values() {
        let s = two_point();
        let f = [0.0, 1.0];
        let r = hopf_lax(&s, &f, 0.25).unwrap();
        assert_eq!(r.q, vec![0.0, 1.0]);
        assert_eq!(r.argmins[1], vec![1]);
        assert_eq!((r.d_minus[1], r.d_plus[1]), (0.0, 0.0));

        let r = hopf_lax(&s, &f, 1.0).unwrap();
        assert_eq!(r.q, vec![0.0, 0.5]);
        assert_eq!(r.argmins[1], vec![0]);
        assert_eq!((r.d_minus[1], r.d_plus[1]), (1.0, 1.0));

        let r = hopf_lax(&s, &f, 0.5).unwrap();
        assert_eq!(r.argmins[1], vec![0, 1]);
        let (dm, dp) = min_distances(&r);
        assert_eq!((dm[1], dp[1]), (0.0, 1.0));
    }

    #[test]
    fn nonpositive_time_rejected() {
        let s = two_point();
        assert!(hopf_lax(&s, &[0.0, 1.0], 0.0).is_err());
        assert!(hopf_lax(&s, &[0.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn two_point_derivatives() {
        let s = two_point();
        let f = [0.0, 1.0];
        assert_eq!(hj_derivatives(&s, &f, 1.0, 1).unwrap(), (-0.5, -0.5));
        assert_eq!(hj_derivatives(&s, &f, 0.5, 1).unwrap(), (0.0, -2.0));
        let c = [2.0, 2.0];
        for t in [0.1, 1.0, 7.0] {
            for x in 0..2 {
                assert_eq!(hj_derivatives(&s, &c, t, x).unwrap(), (0.0, -0.0));
            }
        }
    }

    #[test]
    fn two_point_pair_slack() {
        let s = two_point();
        let r = hj_subsolution_report(&s, &[0.0, 1.0], 1.0).unwrap();
        assert!(r.passed());
        // pair (x=1, y=0): Q(1) − Q(0) = 0.5, bound 1·(1/1 + 0.5) = 1.5.
        // Pair (x=1, y=0): Q(1) − Q(0) = 0.5 and D⁻(0,1) = 0 (point 0 is its
        // own unique minimizer), so the bound 1·(0 + 1/2) is attained.
        let hl = hopf_lax(&s, &[0.0, 1.0], 1.0).unwrap();
        assert_eq!(hl.d_minus[0], 0.0);
        let slack = 1.0 * (hl.d_minus[0] / 1.0 + 0.5) - (hl.q[1] - hl.q[0]);
        assert_abs_diff_eq!(slack, 0.0, epsilon = 1e-15);
        // Pair (x=0, y=1): D⁻(1,1) = 1, bound 1.5, difference −0.5.
        let slack_01 = 1.0 * (hl.d_minus[1] / 1.0 + 0.5) - (hl.q[0] - hl.q[1]);
        assert_abs_diff_eq!(slack_01, 2.0, epsilon = 1e-15);
        assert_eq!(r.min_pair_slack, 0.0);
    }

    #[test]
    fn constant_field_report_is_clean() {
        let s = build_space(&SpaceSpec::circle(9, 1.0)).unwrap();
        let r = hj_subsolution_report(&s, &[1.5; 9], 0.3).unwrap();
        assert!(r.passed());
        assert_eq!(r.min_pair_slack, 0.0);
        assert!(r.residuals.iter().all(|v| *v <= 0.0));
    }

    #[test]
    fn random_fields_match_enumeration() {
        let s = build_space(&SpaceSpec::point_cloud(
            (0..8)
                .map(|i| vec![(i as f64).cos() * 2.0, (i as f64 * 1.3).sin()])
                .collect(),
            2.5,
        ))
        .unwrap();
        let f: Vec<f64> = (0..8).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let r = hopf_lax(&s, &f, 0.7).unwrap();
        for x in 0..8 {
            let mut best = f64::INFINITY;
            for y in 0..8 {
                best = best.min(f[y] + s.dist(x, y).powi(2) / 1.4);
            }
            assert_eq!(r.q[x], best);
        }
    }

    #[test]
    fn small_times_reproduce_f() {
        let s = build_space(&SpaceSpec::interval(7, 1.0)).unwrap();
        let f = [0.0, 0.3, -0.2, 0.8, 0.1, -0.5, 0.4];
        let t = identity_time(&s, &f) * 0.999;
        assert_eq!(hopf_lax(&s, &f, t).unwrap().q, f.to_vec());
    }

    fn instance() -> impl Strategy<Value = (FiniteMetricMeasureSpace, Vec<f64>)> {
        (
            3usize..10,
            prop::collection::vec(-1.0f64..1.0, 20),
            prop::collection::vec(-2.0f64..2.0, 10),
        )
            .prop_map(|(n, coords, f)| {
                let pts: Vec<Vec<f64>> = (0..n)
                    .map(|i| vec![coords[2 * i] * 3.0, coords[2 * i + 1]])
                    .collect();
                let s = build_space(&SpaceSpec::point_cloud(pts, 100.0)).unwrap();
                (s, f[..n].to_vec())
            })
    }

    proptest! {
        #[test]
        fn semigroup_invariants((space, f) in instance(), t in 0.05f64..2.0, s in 0.05f64..2.0) {
            let qt = hopf_lax(&space, &f, t).unwrap();
            let qs = hopf_lax(&space, &f, t + s).unwrap();
            for x in 0..space.n() {
                prop_assert!(qs.q[x] <= qt.q[x]);
                prop_assert!(qt.d_plus[x] <= qs.d_minus[x] + 1e-12);
                prop_assert!(qt.d_minus[x] <= qt.d_plus[x]);
            }
            let composed = hopf_lax(&space, &qt.q, s).unwrap();
            for x in 0..space.n() {
                prop_assert!(qs.q[x] <= composed.q[x] + 1e-12);
            }
            let (lo, hi) = (f.iter().cloned().fold(f64::INFINITY, f64::min), f.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            for v in &qt.q {
                prop_assert!(lo <= *v + 1e-15 && *v <= hi + 1e-15);
            }
            let lip = lipschitz_constant(&space, &qt.q);
            prop_assert!(lip <= 2.0 * (oscillation(&f) / t).sqrt() + 1e-12);
            prop_assert!(hj_subsolution_report(&space, &f, t).unwrap().passed());
        }
    }
}
