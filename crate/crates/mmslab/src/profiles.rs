//! Named initial-data profiles evaluated at point coordinates.

use std::f64::consts::PI;

use mmslab_core::space::{FiniteMetricMeasureSpace, SpaceKind};
use mmslab_core::transport::ProbabilityMeasure;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// Constant density 1.
    Uniform,
    /// `1 + amplitude·cos(2π·mode·x/L + phase)` in the first coordinate.
    Cosine {
        amplitude: f64,
        #[serde(default = "one")]
        mode: u32,
        #[serde(default)]
        phase: f64,
    },
    /// `floor + exp(−r²/(2·width²))` with `r` the (periodic) distance to
    /// `center`.
    Bump {
        center: Vec<f64>,
        width: f64,
        #[serde(default)]
        floor: f64,
    },
    /// All mass at one point.
    Dirac { at: usize },
    /// Explicit per-point values.
    Values { values: Vec<f64> },
}

fn one() -> u32 {
    1
}

impl Profile {
    pub fn validate(&self, key: &str) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::config(key, m));
        match self {
            Profile::Cosine { amplitude, .. } if !amplitude.is_finite() => {
                bad("amplitude must be finite")
            }
            Profile::Bump { width, .. } if !(*width > 0.0) => bad("width must be positive"),
            Profile::Bump { floor, .. } if !(*floor >= 0.0) => bad("floor must be nonnegative"),
            Profile::Values { values } if values.iter().any(|v| !v.is_finite()) => {
                bad("values must be finite")
            }
            _ => Ok(()),
        }
    }

    /// Point values of the profile; `Dirac` gives the indicator of its point.
    pub fn values(&self, space: &FiniteMetricMeasureSpace) -> Result<Vec<f64>> {
        let n = space.n();
        let labels = || {
            space.labels().ok_or_else(|| {
                HarnessError::config(
                    "profile",
                    "coordinate profiles need a space with coordinates",
                )
            })
        };
        let period = match space.kind() {
            SpaceKind::Circle | SpaceKind::Torus2d => space.geometry().length,
            _ => None,
        };
        match self {
            Profile::Uniform => Ok(vec![1.0; n]),
            Profile::Cosine {
                amplitude,
                mode,
                phase,
            } => {
                let length = space.geometry().length.unwrap_or(1.0);
                Ok(labels()?
                    .iter()
                    .map(|p| {
                        1.0 + amplitude * (2.0 * PI * *mode as f64 * p[0] / length + phase).cos()
                    })
                    .collect())
            }
            Profile::Bump {
                center,
                width,
                floor,
            } => {
                let labels = labels()?;
                if labels.first().map(Vec::len) != Some(center.len()) {
                    return Err(HarnessError::config(
                        "profile.center",
                        "center dimension differs from the space coordinates",
                    ));
                }
                Ok(labels
                    .iter()
                    .map(|p| {
                        let r2: f64 = p
                            .iter()
                            .zip(center)
                            .map(|(a, b)| {
                                let mut d = (a - b).abs();
                                if let Some(l) = period {
                                    d = d.rem_euclid(l);
                                    d = d.min(l - d);
                                }
                                d * d
                            })
                            .sum();
                        floor + (-r2 / (2.0 * width * width)).exp()
                    })
                    .collect())
            }
            Profile::Dirac { at } => {
                if *at >= n {
                    return Err(HarnessError::config(
                        "profile.at",
                        format!("point {at} out of range"),
                    ));
                }
                let mut v = vec![0.0; n];
                v[*at] = 1.0;
                Ok(v)
            }
            Profile::Values { values } => {
                if values.len() != n {
                    return Err(HarnessError::config(
                        "profile.values",
                        format!("expected {n} values, got {}", values.len()),
                    ));
                }
                Ok(values.clone())
            }
        }
    }

    /// The normalized probability measure with this density against the
    /// space's measure.
    pub fn measure(&self, space: &FiniteMetricMeasureSpace) -> Result<ProbabilityMeasure> {
        let v = self.values(space)?;
        let m = match self {
            Profile::Dirac { at } => ProbabilityMeasure::dirac(space.n(), *at),
            _ => ProbabilityMeasure::from_density(space.measure(), &v)?,
        };
        Ok(m)
    }
}
