//! Self-describing experiment reports: every check carries the tolerance it
//! was judged against. Wall-clock time is deliberately kept out of the files
//! so reports are reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// Passes when `value ≤ tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            comparison: Comparison::AtMost,
            passed: value <= tolerance,
            detail: None,
        }
    }

    /// Passes when `value ≥ tolerance`; NaN fails.
    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            comparison: Comparison::AtLeast,
            passed: value >= tolerance,
            detail: None,
        }
    }

    /// A violation count that must be zero.
    pub fn zero(name: impl Into<String>, count: usize) -> Self {
        Self::at_most(name, count as f64, 0.0)
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub experiment: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tables: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(skip)]
    pub series: Vec<Series>,
}

impl Report {
    pub fn new(scenario: impl Into<String>, experiment: impl Into<String>, seed: u64) -> Self {
        Self {
            scenario: scenario.into(),
            experiment: experiment.into(),
            seed,
            passed: true,
            checks: Vec::new(),
            metrics: BTreeMap::new(),
            tables: BTreeMap::new(),
            series: Vec::new(),
        }
    }

    pub fn check(&mut self, check: Check) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    pub fn table(&mut self, key: impl Into<String>, rows: Vec<Vec<f64>>) {
        self.tables.insert(key.into(), rows);
    }

    pub fn series(&mut self, name: impl Into<String>, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            name: name.into(),
            points,
        });
    }

    /// Appends another report's content with its names prefixed.
    pub fn absorb(&mut self, other: Report) {
        let prefix = other.experiment;
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.check(c);
        }
        for (k, v) in other.metrics {
            self.metrics.insert(format!("{prefix}.{k}"), v);
        }
        for (k, v) in other.tables {
            self.tables.insert(format!("{prefix}.{k}"), v);
        }
        for mut s in other.series {
            s.name = format!("{prefix}.{}", s.name);
            self.series.push(s);
        }
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Writes `report.json` and `series.csv` (columns `x,y,series`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let json = serde_json::to_string_pretty(self)?;
        let path = dir.join("report.json");
        fs::write(&path, json + "\n").map_err(|e| HarnessError::io(&path, e))?;
        let path = dir.join("series.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["x", "y", "series"])?;
        for s in &self.series {
            for (x, y) in &s.points {
                w.write_record([x.to_string(), y.to_string(), s.name.clone()])?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        Ok(())
    }

    /// One line per check, for terminal output.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} [{}] {}\n",
            self.scenario,
            self.experiment,
            if self.passed { "PASS" } else { "FAIL" }
        );
        for c in &self.checks {
            let op = match c.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            out.push_str(&format!(
                "  {} {}: {:.6e} {op} {:.3e}\n",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_fails_both_comparisons() {
        assert!(!Check::at_most("a", f64::NAN, 1.0).passed);
        assert!(!Check::at_least("a", f64::NAN, 1.0).passed);
        assert!(Check::zero("a", 0).passed);
        assert!(!Check::zero("a", 1).passed);
    }

    #[test]
    fn absorb_prefixes_and_propagates_failure() {
        let mut inner = Report::new("s", "inner", 1);
        inner.check(Check::at_most("x", 2.0, 1.0));
        inner.metric("m", 3.0);
        let mut outer = Report::new("s", "outer", 1);
        outer.check(Check::at_most("y", 0.0, 1.0));
        outer.absorb(inner);
        assert!(!outer.passed);
        assert_eq!(outer.checks[1].name, "inner.x");
        assert_eq!(outer.metrics["inner.m"], 3.0);
    }
}
