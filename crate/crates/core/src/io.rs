//! Scenario files, control CSV input and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ControlTrajectory, Grid};
use crate::error::{Error, Result};
use crate::model::Scenario;

/// Parses a scenario document without validating it.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.to_string();
        let located = format!("line {} column {}", inner.line(), inner.column());
        match msg
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            Some(field) => {
                let key = if path == "." { field.to_string() } else { format!("{path}.{field}") };
                Error::Parse(format!("missing key `{key}` ({located})"))
            }
            None => Error::Parse(format!("at `{path}`: {msg}")),
        }
    })
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path)?;
    let scenario = parse_scenario(&text)?;
    scenario.validate().into_result()?;
    Ok(scenario)
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    serde_json::to_string_pretty(scenario).expect("scenario serializes")
}

pub fn save_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    fs::write(path, scenario_to_json(scenario) + "\n")?;
    Ok(())
}

/// Reads a control CSV `t,u1..un` with one row per grid node.
pub fn read_control_csv(path: &Path, grid: Grid, n: usize) -> Result<ControlTrajectory> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.len() != n + 1 {
        return Err(Error::Parse(format!(
            "{}: expected {} columns (t,u1..u{n}), found {}",
            path.display(),
            n + 1,
            headers.len()
        )));
    }
    let mut values = Vec::with_capacity(grid.nodes() * n);
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("{}: row {}: bad number `{field}`", path.display(), line + 2))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != grid.nodes() {
        return Err(Error::GridMismatch(format!(
            "{} has {rows} rows, the grid has {} nodes",
            path.display(),
            grid.nodes()
        )));
    }
    ControlTrajectory::from_values(grid, n, values)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `preset:<name>` or the scenario path.
    pub source: String,
    pub command: String,
    pub solver: Option<serde_json::Value>,
    pub output_dir: PathBuf,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path)?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

impl RunManifest {
    /// Checksums `names` inside `output_dir`.
    pub fn collect(
        source: String,
        command: &str,
        solver: Option<serde_json::Value>,
        output_dir: &Path,
        names: &[&str],
    ) -> Result<Self> {
        let files = names
            .iter()
            .map(|name| {
                let (sha256, bytes) = sha256_file(&output_dir.join(name))?;
                Ok(FileEntry {
                    name: name.to_string(),
                    sha256,
                    bytes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunManifest {
            source,
            command: command.to_string(),
            solver,
            output_dir: output_dir.to_path_buf(),
            files,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n")?;
        Ok(())
    }

    /// Names of listed files that are missing or whose checksum changed.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let path = self.output_dir.join(&f.name);
            match sha256_file(&path) {
                Ok((sum, _)) if sum == f.sha256 => {}
                Ok(_) => bad.push(f.name.clone()),
                Err(Error::Io(_)) => bad.push(f.name.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, PRESET_NAMES};

    #[test]
    fn presets_round_trip() {
        for name in PRESET_NAMES {
            let sc = preset(name).unwrap();
            let back = parse_scenario(&scenario_to_json(&sc)).unwrap();
            assert_eq!(back, sc, "{name}");
        }
    }

    #[test]
    fn missing_key_is_named() {
        let sc = preset("sir_paper_qq_008").unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&sc)).unwrap();
        v["cost"].as_object_mut().unwrap().remove("q");
        let err = parse_scenario(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("cost.q"), "{err}");
    }
}
