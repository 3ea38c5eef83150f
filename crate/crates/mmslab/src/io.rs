//! JSON and TOML input/output for the command-line tools.

use std::fs;
use std::path::Path;

use mmslab_core::fields::{Conductance, DirichletForm};
use mmslab_core::space::{FiniteMetricMeasureSpace, SpaceFile, SpaceKind, SpaceSpec};
use mmslab_core::transport::ProbabilityMeasure;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HarnessError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Reads JSON, reporting the failing key path and position.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        HarnessError::Parse {
            path: path.to_path_buf(),
            key: (key != ".").then_some(key),
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// A space specification from a `.json` or `.toml` file.
pub fn read_space_spec(path: &Path) -> Result<SpaceSpec> {
    if path.extension().is_some_and(|e| e == "json") {
        return read_json(path);
    }
    let text = read(path)?;
    serde_path_to_error::deserialize(toml::Deserializer::new(&text)).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let (line, column) = inner.span().map_or((0, 0), |s| {
            let before = &text[..s.start];
            (
                before.matches('\n').count() + 1,
                before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1,
            )
        });
        HarnessError::Parse {
            path: path.to_path_buf(),
            key: (key != ".").then_some(key),
            line,
            column,
            message: inner.message().trim().to_string(),
        }
    })
}

pub fn read_space(path: &Path) -> Result<FiniteMetricMeasureSpace> {
    let file: SpaceFile = read_json(path)?;
    Ok(FiniteMetricMeasureSpace::from_file(file)?)
}

pub fn read_field(path: &Path) -> Result<Vec<f64>> {
    read_json(path)
}

/// Weights from a JSON array, renormalized to total mass one.
pub fn read_measure(path: &Path) -> Result<ProbabilityMeasure> {
    let w: Vec<f64> = read_json(path)?;
    Ok(ProbabilityMeasure::normalized(w)?)
}

/// The form from a conductance list, or the canonical one of the space.
pub fn read_form(space: &FiniteMetricMeasureSpace, path: Option<&Path>) -> Result<DirichletForm> {
    match path {
        Some(p) => {
            let edges: Vec<Conductance> = read_json(p)?;
            Ok(DirichletForm::from_edges(space, &edges)?)
        }
        None => Ok(default_form(space)),
    }
}

/// Grid conductances on grids, `½(m_x + m_y)/len²` otherwise.
pub fn default_form(space: &FiniteMetricMeasureSpace) -> DirichletForm {
    match space.kind() {
        SpaceKind::Interval | SpaceKind::Circle | SpaceKind::Torus2d => DirichletForm::grid(space),
        _ => DirichletForm::from_neighbors(space),
    }
}
