//! TOML scenario files: which experiment to run, on which space, from which
//! initial data, with which knobs.

use std::fs;
use std::path::{Path, PathBuf};

use mmslab_core::space::{SpaceKind, SpaceSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiments::brenier::{self, BrenierParams};
use crate::experiments::convexity::{self, ConvexityParams};
use crate::experiments::gamma::{self, GammaParams};
use crate::experiments::heat::{self, HeatParams};
use crate::experiments::hopflax::{self, HopflaxParams};
use crate::experiments::identify::{self, IdentifyParams};
use crate::experiments::ot::{self, OtParams};
use crate::experiments::slope::{self, SlopeParams};
use crate::profiles::Profile;
use crate::report::Report;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropertyParams {
    pub ot: OtParams,
    pub heat: HeatParams,
    pub convexity: ConvexityParams,
    pub slope: SlopeParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Experiment {
    HopflaxSuite(HopflaxParams),
    Identify(IdentifyParams),
    Brenier(BrenierParams),
    GammaMonotone(GammaParams),
    PropertySuites(PropertyParams),
    OtCertificates(OtParams),
    HeatExactness(HeatParams),
    Convexity(ConvexityParams),
    SlopeConsistency(SlopeParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::HopflaxSuite(_) => "hopflax_suite",
            Experiment::Identify(_) => "identify",
            Experiment::Brenier(_) => "brenier",
            Experiment::GammaMonotone(_) => "gamma_monotone",
            Experiment::PropertySuites(_) => "property_suites",
            Experiment::OtCertificates(_) => "ot_certificates",
            Experiment::HeatExactness(_) => "heat_exactness",
            Experiment::Convexity(_) => "convexity",
            Experiment::SlopeConsistency(_) => "slope_consistency",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Base space; ladders override its point count.
    #[serde(default)]
    pub space: Option<SpaceSpec>,
    /// Initial density or field.
    #[serde(default)]
    pub initial: Option<Profile>,
    /// Target density of the transport experiments.
    #[serde(default)]
    pub target: Option<Profile>,
    pub experiment: Experiment,
    /// Output directory; defaults to `<out-dir>/<name>`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn cosine(amplitude: f64) -> Profile {
    Profile::Cosine {
        amplitude,
        mode: 1,
        phase: 0.0,
    }
}

impl Scenario {
    pub fn new(name: impl Into<String>, experiment: Experiment) -> Self {
        Self {
            name: name.into(),
            seed: None,
            space: None,
            initial: None,
            target: None,
            experiment,
            out_dir: None,
        }
    }

    pub fn space_or_default(&self) -> SpaceSpec {
        self.space.clone().unwrap_or_else(|| {
            let n = match &self.experiment {
                Experiment::Brenier(p) => p.ladder[0],
                Experiment::Identify(p) => p.n,
                _ => 64,
            };
            SpaceSpec::circle(n, 1.0)
        })
    }

    pub fn initial_or_default(&self) -> Profile {
        self.initial.clone().unwrap_or_else(|| cosine(0.5))
    }

    pub fn target_or_default(&self) -> Profile {
        self.target.clone().unwrap_or_else(|| cosine(-0.5))
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        {
            return Err(HarnessError::config(
                "name",
                "must be nonempty and use only letters, digits, '_', '-' and '.'",
            ));
        }
        if let Some(space) = &self.space {
            space
                .validate()
                .map_err(|e| HarnessError::config("space", e.to_string()))?;
        }
        if let Some(p) = &self.initial {
            p.validate("initial")?;
        }
        if let Some(p) = &self.target {
            p.validate("target")?;
        }
        let circle_only = matches!(
            self.experiment,
            Experiment::Identify(_)
                | Experiment::Brenier(_)
                | Experiment::SlopeConsistency(_)
                | Experiment::PropertySuites(_)
        );
        if circle_only && self.space_or_default().kind != SpaceKind::Circle {
            return Err(HarnessError::config(
                "space.kind",
                "this experiment runs on circle grids",
            ));
        }
        match &self.experiment {
            Experiment::HopflaxSuite(p) => p.validate(),
            Experiment::Identify(p) => p.validate(),
            Experiment::Brenier(p) => p.validate(),
            Experiment::GammaMonotone(p) => p.validate(),
            Experiment::PropertySuites(p) => {
                p.ot.validate()?;
                p.heat.validate()?;
                p.convexity.validate()?;
                p.slope.validate()
            }
            Experiment::OtCertificates(p) => p.validate(),
            Experiment::HeatExactness(p) => p.validate(),
            Experiment::Convexity(p) => p.validate(),
            Experiment::SlopeConsistency(p) => p.validate(),
        }
    }

    /// Output directory under `root`.
    pub fn output_dir(&self, root: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if dir.is_absolute() => dir.clone(),
            Some(dir) => root.join(dir),
            None => root.join(&self.name),
        }
    }

    /// Runs the experiment. `seed` overrides the scenario's own seed.
    pub fn run(&self, seed: Option<u64>) -> Result<Report> {
        self.validate()?;
        let seed = seed.or(self.seed).unwrap_or(0);
        let name = self.name.as_str();
        let space = self.space_or_default();
        let initial = self.initial_or_default();
        match &self.experiment {
            Experiment::HopflaxSuite(p) => hopflax::run(name, seed, p),
            Experiment::Identify(p) => identify::run(name, seed, &space, &initial, p),
            Experiment::Brenier(p) => {
                brenier::run(name, seed, &space, &initial, &self.target_or_default(), p)
            }
            Experiment::GammaMonotone(p) => gamma::run(name, seed, &space, &initial, p),
            Experiment::PropertySuites(p) => {
                let mut report = Report::new(name, "property_suites", seed);
                report.absorb(ot::run(name, seed, &p.ot)?);
                report.absorb(heat::run(name, seed, &p.heat)?);
                report.absorb(convexity::run(name, seed, &p.convexity)?);
                report.absorb(slope::run(name, seed, &space, &initial, &p.slope)?);
                Ok(report)
            }
            Experiment::OtCertificates(p) => ot::run(name, seed, p),
            Experiment::HeatExactness(p) => heat::run(name, seed, p),
            Experiment::Convexity(p) => convexity::run(name, seed, p),
            Experiment::SlopeConsistency(p) => slope::run(name, seed, &space, &initial, p),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, column)
}

/// Line of the first assignment to the top-level field of `key` inside the
/// `[experiment]` table.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let field = key.strip_prefix("experiment.")?.split(['.', '[']).next()?;
    let mut inside = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            inside = line == "[experiment]";
        } else if inside {
            if let Some(rest) = line.strip_prefix(field) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn probe<P: DeserializeOwned>(value: toml::Value) -> Option<(String, String)> {
    serde_path_to_error::deserialize::<_, P>(value)
        .err()
        .map(|e| (e.path().to_string(), e.inner().message().trim().to_string()))
}

/// The tagged experiment table is buffered during deserialization, which
/// loses the key path; deserializing the table on its own recovers it.
fn experiment_error(text: &str) -> Option<(String, String)> {
    let doc: toml::Table = text.parse().ok()?;
    let mut table = doc.get("experiment")?.as_table()?.clone();
    let kind = table.remove("kind")?.as_str()?.to_string();
    let value = toml::Value::Table(table);
    let (key, message) = match kind.as_str() {
        "hopflax_suite" => probe::<HopflaxParams>(value),
        "identify" => probe::<IdentifyParams>(value),
        "brenier" => probe::<BrenierParams>(value),
        "gamma_monotone" => probe::<GammaParams>(value),
        "property_suites" => probe::<PropertyParams>(value),
        "ot_certificates" => probe::<OtParams>(value),
        "heat_exactness" => probe::<HeatParams>(value),
        "convexity" => probe::<ConvexityParams>(value),
        "slope_consistency" => probe::<SlopeParams>(value),
        _ => None,
    }?;
    Some((format!("experiment.{key}"), message))
}

/// Parses a scenario, reporting the offending key and position on failure,
/// then validates it.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario> {
    let de = toml::Deserializer::new(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let mut key = e.path().to_string();
        let inner = e.into_inner();
        let (mut line, mut column) = inner.span().map_or((0, 0), |s| line_col(text, s.start));
        let mut message = inner.message().trim().to_string();
        if key.starts_with("experiment") {
            if let Some((k, m)) = experiment_error(text) {
                if let Some(l) = key_line(text, &k) {
                    (line, column) = (l, 1);
                }
                key = k;
                message = m;
            }
        }
        HarnessError::Parse {
            path: path.to_path_buf(),
            key: (key != "." && !key.is_empty()).then_some(key),
            line,
            column,
            message,
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_scenario(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario> {
        parse_scenario(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = parse("name = \"h\"\n[experiment]\nkind = \"hopflax_suite\"\n").unwrap();
        assert_eq!(
            s.experiment,
            Experiment::HopflaxSuite(HopflaxParams::default())
        );
        assert_eq!(s.space_or_default(), SpaceSpec::circle(64, 1.0));
    }

    #[test]
    fn wrong_type_names_the_key() {
        let err = parse("name = \"h\"\n[experiment]\nkind = \"brenier\"\nladder = [32, \"x\"]\n")
            .unwrap_err();
        match err {
            HarnessError::Parse { key, line, .. } => {
                assert!(key.unwrap().contains("ladder"));
                assert_eq!(line, 4);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("name = \"h\"\nsed = 3\n[experiment]\nkind = \"identify\"\n").unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse("name = \"h\n").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn non_increasing_ladder_is_rejected_before_running() {
        let err = parse("name = \"b\"\n[experiment]\nkind = \"brenier\"\nladder = [64, 32]\n")
            .unwrap_err();
        assert!(
            matches!(err, HarnessError::Config { ref key, .. } if key == "experiment.ladder"),
            "{err}"
        );
    }

    #[test]
    fn negative_knob_is_rejected() {
        let err = parse("name = \"g\"\n[experiment]\nkind = \"gamma_monotone\"\nt_end = -1.0\n")
            .unwrap_err();
        assert!(matches!(err, HarnessError::Config { .. }), "{err}");
    }

    #[test]
    fn profiles_and_space_parse() {
        let s = parse(
            "name = \"i\"\n[space]\nkind = \"circle\"\nn = 32\nlength = 1.0\n\
             [initial]\nprofile = \"bump\"\ncenter = [0.5]\nwidth = 0.1\nfloor = 0.2\n\
             [experiment]\nkind = \"identify\"\nn = 32\n",
        )
        .unwrap();
        assert_eq!(s.space.unwrap().n, 32);
        assert!(matches!(s.initial, Some(Profile::Bump { .. })));
    }
}
