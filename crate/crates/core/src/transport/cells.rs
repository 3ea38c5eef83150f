//! Continuum quadratic transport between cell histograms in one dimension.
//!
//! Grid point `i` of an interval or circle owns the cell
//! `[x_i − Δx/2, x_i + Δx/2]` (clipped to `[0, L]` on the interval), whose
//! length equals its reference mass. A measure on the grid is read as the
//! density that is constant on every cell. Quantile functions of such
//! densities are piecewise linear, so `∫|Q_ν − Q_μ|²` is integrated exactly
//! on the merged breakpoints. On the circle both measures are lifted from the
//! same cut and the cost is minimized over the shift `θ` of `Q_μ(· + θ)`,
//! which is a convex problem.

use crate::error::{Error, Result};
use crate::space::{FiniteMetricMeasureSpace, SpaceKind};

#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    periodic: bool,
    bounds: Vec<f64>,
    widths: Vec<f64>,
    length: f64,
}

/// A stretch `[p, q]` of quantile levels on which both quantile functions
/// are affine: `ν` is in cell `i`, `μ` in cell `j` (lifted by `k·L`).
#[derive(Clone, Copy, Debug)]
struct Piece {
    p: f64,
    q: f64,
    i: usize,
    /// `Q_ν − Q_μ` at `p` and `q`.
    dp: f64,
    dq: f64,
    slope_nu: f64,
    slope_mu: f64,
    /// `Q_μ` at `p` and `q`.
    mu_p: f64,
    mu_q: f64,
}

struct Segment {
    start: f64,
    end: f64,
    x0: f64,
    slope: f64,
}

impl Segment {
    fn at(&self, s: f64) -> f64 {
        self.x0 + (s - self.start) * self.slope
    }
}

/// Derivatives of `½W₂²(ν, μ)` with respect to the cumulative masses `F_b`
/// of `ν` at the cell boundaries, at the optimal shift.
#[derive(Clone, Debug)]
pub(crate) struct TransportDerivatives {
    pub theta: f64,
    /// `∂/∂F_b`, `b = 0..=n`.
    pub grad: Vec<f64>,
    /// Tridiagonal Hessian at fixed shift: diagonal and superdiagonal.
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    /// Mixed derivatives `∂²/∂F_b∂θ` and `∂²/∂θ²`.
    pub mixed: Vec<f64>,
    pub theta_curvature: f64,
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(weights.len() + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for w in weights {
        acc += w;
        cum.push(acc);
    }
    for c in cum.iter_mut() {
        *c /= acc;
    }
    cum
}

impl CellGrid {
    pub fn interval(n: usize, length: f64) -> Self {
        let dx = length / (n - 1) as f64;
        let mut bounds = vec![0.0];
        bounds.extend((1..n).map(|b| (b as f64 - 0.5) * dx));
        bounds.push(length);
        Self::from_bounds(bounds, false, length)
    }

    pub fn circle(n: usize, length: f64) -> Self {
        let dx = length / n as f64;
        let bounds = (0..=n).map(|b| (b as f64 - 0.5) * dx).collect();
        Self::from_bounds(bounds, true, length)
    }

    fn from_bounds(bounds: Vec<f64>, periodic: bool, length: f64) -> Self {
        let widths = bounds.windows(2).map(|w| w[1] - w[0]).collect();
        Self {
            periodic,
            bounds,
            widths,
            length,
        }
    }

    /// Cell grid of an interval or circle space whose reference measure is
    /// the cell length.
    pub fn from_space(space: &FiniteMetricMeasureSpace) -> Result<Self> {
        let geometry = space.geometry();
        let grid = match (geometry.kind, geometry.length) {
            (SpaceKind::Interval, Some(l)) => Self::interval(space.n(), l),
            (SpaceKind::Circle, Some(l)) => Self::circle(space.n(), l),
            _ => {
                return Err(Error::UnsupportedGeometry(
                    "cell transport needs an interval or circle grid".into(),
                ))
            }
        };
        let matches = grid
            .widths
            .iter()
            .zip(space.measure())
            .all(|(w, m)| (w - m).abs() <= 1e-12 * w);
        if !matches {
            return Err(Error::UnsupportedGeometry(
                "cell transport needs the uniform grid measure".into(),
            ));
        }
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    fn segments(&self, weights: &[f64], theta: f64) -> Vec<Segment> {
        let cum = cumulative(weights);
        let lifts: &[i32] = if self.periodic { &[-1, 0, 1] } else { &[0] };
        let mut out = Vec::with_capacity(lifts.len() * weights.len());
        for &k in lifts {
            let k = k as f64;
            for (j, &w) in weights.iter().enumerate() {
                if w <= 0.0 || cum[j + 1] <= cum[j] {
                    continue;
                }
                let start = cum[j] + k - theta;
                out.push(Segment {
                    start,
                    end: cum[j + 1] + k - theta,
                    x0: self.bounds[j] + k * self.length,
                    slope: self.widths[j] / (cum[j + 1] - cum[j]),
                });
            }
        }
        out
    }

    /// Merged pieces of `Q_ν(s)` and `Q_μ(s + θ)` over `s ∈ [0, 1]`.
    fn pieces(&self, nu: &[f64], mu: &[f64], theta: f64) -> Vec<Piece> {
        let cum_nu = cumulative(nu);
        let mu_segs = self.segments(mu, theta);
        let mut out = Vec::with_capacity(2 * nu.len() + 2);
        let mut jj = 0;
        for (i, &w) in nu.iter().enumerate() {
            let (a, b) = (cum_nu[i], cum_nu[i + 1]);
            if w <= 0.0 || b <= a {
                continue;
            }
            let slope_nu = self.widths[i] / (b - a);
            let x_nu = |s: f64| self.bounds[i] + (s - a) * slope_nu;
            while jj < mu_segs.len() && mu_segs[jj].end <= a {
                jj += 1;
            }
            let mut kk = jj;
            while kk < mu_segs.len() && mu_segs[kk].start < b {
                let seg = &mu_segs[kk];
                let (p, q) = (a.max(seg.start), b.min(seg.end));
                if q > p {
                    out.push(Piece {
                        p,
                        q,
                        i,
                        dp: x_nu(p) - seg.at(p),
                        dq: x_nu(q) - seg.at(q),
                        slope_nu,
                        slope_mu: seg.slope,
                        mu_p: seg.at(p),
                        mu_q: seg.at(q),
                    });
                }
                if seg.end <= b {
                    kk += 1;
                } else {
                    break;
                }
            }
            jj = kk;
        }
        out
    }

    /// `(½W₂², ∂/∂θ, ∂²/∂θ²)` at shift `θ`.
    fn shift_profile(&self, nu: &[f64], mu: &[f64], theta: f64) -> (f64, f64, f64) {
        let mut cost = 0.0;
        let mut grad = 0.0;
        let mut curv = 0.0;
        let mut prev: Option<Piece> = None;
        for pc in self.pieces(nu, mu, theta) {
            let len = pc.q - pc.p;
            let dm = 0.5 * (pc.dp + pc.dq);
            cost += 0.5 * len / 6.0 * (pc.dp * pc.dp + 4.0 * dm * dm + pc.dq * pc.dq);
            grad -= pc.slope_mu * len * dm;
            curv += pc.slope_mu * pc.slope_nu * len;
            // A jump of Q_μ (empty cells of μ) sweeps left as θ grows.
            if let Some(pv) = prev {
                let jump = pc.mu_p - pv.mu_q;
                if pv.q == pc.p && jump > 1e-15 * self.length {
                    let nu_left = pv.dq + pv.mu_q;
                    grad += 0.5 * ((nu_left - pc.mu_p).powi(2) - (nu_left - pv.mu_q).powi(2));
                    curv += pv.slope_nu * jump;
                }
            }
            prev = Some(pc);
        }
        (cost, grad, curv)
    }

    /// Optimal shift and `½W₂²`. Safeguarded Newton on the convex profile,
    /// bracketed by `[−1, 1]`.
    pub(crate) fn optimal_shift(&self, nu: &[f64], mu: &[f64], guess: f64) -> (f64, f64) {
        if !self.periodic {
            return (0.0, self.shift_profile(nu, mu, 0.0).0);
        }
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut theta = guess.clamp(-0.999, 0.999);
        let mut cost = f64::NAN;
        for _ in 0..200 {
            let (c, g, h) = self.shift_profile(nu, mu, theta);
            cost = c;
            if g == 0.0 {
                break;
            }
            if g > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let newton = theta - g / h;
            let next = if h > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - theta).abs() <= 1e-16 * (1.0 + theta.abs()) || hi - lo <= 1e-15 {
                break;
            }
            theta = next;
        }
        if cost.is_nan() {
            cost = self.shift_profile(nu, mu, theta).0;
        }
        (theta, cost)
    }

    /// `W₂²(μ, ν)` between the cell histograms of two probability vectors.
    pub fn squared_w2(&self, mu: &[f64], nu: &[f64]) -> f64 {
        2.0 * self.optimal_shift(nu, mu, 0.0).1
    }

    pub fn w2(&self, mu: &[f64], nu: &[f64]) -> f64 {
        self.squared_w2(mu, nu).max(0.0).sqrt()
    }

    /// Shift-aware `½W₂²` with warm start, returning `(θ, cost)`.
    pub(crate) fn half_cost(&self, nu: &[f64], mu: &[f64], guess: f64) -> (f64, f64) {
        self.optimal_shift(nu, mu, guess)
    }

    pub(crate) fn derivatives(&self, nu: &[f64], mu: &[f64], guess: f64) -> TransportDerivatives {
        let n = self.n();
        let (theta, _) = self.optimal_shift(nu, mu, guess);
        let cum_nu = cumulative(nu);
        let mut grad = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut upper = vec![0.0; n + 1];
        let mut mixed = vec![0.0; n + 1];
        let mut theta_curvature = 0.0;
        for pc in self.pieces(nu, mu, theta) {
            let i = pc.i;
            let nu_i = cum_nu[i + 1] - cum_nu[i];
            let fall = |s: f64| (cum_nu[i + 1] - s) / nu_i;
            let rise = |s: f64| (s - cum_nu[i]) / nu_i;
            let len = pc.q - pc.p;
            let mid = 0.5 * (pc.p + pc.q);
            let dm = 0.5 * (pc.dp + pc.dq);
            let simpson = |f: &dyn Fn(f64) -> f64, a: f64, m: f64, b: f64| {
                len / 6.0 * (f(pc.p) * a + 4.0 * f(mid) * m + f(pc.q) * b)
            };
            grad[i] -= pc.slope_nu * simpson(&fall, pc.dp, dm, pc.dq);
            grad[i + 1] -= pc.slope_nu * simpson(&rise, pc.dp, dm, pc.dq);
            let kappa = pc.slope_nu * pc.slope_mu;
            let (fp, fm, fq) = (fall(pc.p), fall(mid), fall(pc.q));
            let (rp, rm, rq) = (rise(pc.p), rise(mid), rise(pc.q));
            let simp = |a: f64, m: f64, b: f64| len / 6.0 * (a + 4.0 * m + b);
            diag[i] += kappa * simp(fp * fp, fm * fm, fq * fq);
            diag[i + 1] += kappa * simp(rp * rp, rm * rm, rq * rq);
            upper[i] += kappa * simp(fp * rp, fm * rm, fq * rq);
            mixed[i] += kappa * 0.5 * len * (fp + fq);
            mixed[i + 1] += kappa * 0.5 * len * (rp + rq);
            theta_curvature += kappa * len;
        }
        TransportDerivatives {
            theta,
            grad,
            diag,
            upper,
            mixed,
            theta_curvature,
        }
    }
}
