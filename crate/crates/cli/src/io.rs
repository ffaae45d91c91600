//! Trajectory CSV files and JSON artifacts.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use structnode::benchsys::{InputSpec, System, Trajectory};
use structnode::odesolve::{SampledSignal, TimeGrid};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Writes `header` then `rows`, floats in shortest round-trip form.
pub fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))?;
    w.write_record(header).map_err(|e| CliError::format(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| CliError::format(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

/// Columns `t, y1.., u1.., x1..`.
pub fn write_trajectory(path: &Path, tr: &Trajectory) -> CliResult<()> {
    let d_u = tr.u.as_ref().map_or(0, |u| u.channels);
    let d_x = tr.x.as_ref().map_or(0, |x| x.channels);
    let mut header = vec!["t".to_string()];
    header.extend(numbered("y", tr.y.channels));
    header.extend(numbered("u", d_u));
    header.extend(numbered("x", d_x));
    let rows = (0..tr.grid.n).map(|i| {
        let mut row = vec![tr.grid.time(i)];
        row.extend_from_slice(tr.y.row(i));
        if let Some(u) = &tr.u {
            row.extend_from_slice(u.row(i));
        }
        if let Some(x) = &tr.x {
            row.extend_from_slice(x.row(i));
        }
        row
    });
    write_rows(path, &header, rows)
}

fn channel_columns(header: &csv::StringRecord, prefix: char) -> Vec<usize> {
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
        .map(|(i, _)| i)
        .collect()
}

/// Reads a trajectory of `sys` and checks its columns.
pub fn read_trajectory(path: &Path, sys: &System, input: InputSpec) -> CliResult<Trajectory> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::io(path, std::io::Error::other(e.to_string())),
        _ => CliError::format(path, e),
    })?;
    let header = r.headers().map_err(|e| CliError::format(path, e))?.clone();
    if header.get(0) != Some("t") {
        return Err(CliError::format(path, "first column must be `t`"));
    }
    let (ys, us, xs) = (channel_columns(&header, 'y'), channel_columns(&header, 'u'), channel_columns(&header, 'x'));
    if ys.len() != sys.d_y() || us.len() != sys.d_u() || !(xs.is_empty() || xs.len() == sys.d_x()) {
        return Err(CliError::format(
            path,
            format!(
                "{} expects {} y, {} u and 0 or {} x columns, found {}, {}, {}",
                sys.name(),
                sys.d_y(),
                sys.d_u(),
                sys.d_x(),
                ys.len(),
                us.len(),
                xs.len()
            ),
        ));
    }
    let (mut t, mut y, mut u, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let field = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::format(path, format!("line {}: column {} is not a number", line + 2, i + 1)))
        };
        t.push(field(0)?);
        for &i in &ys {
            y.push(field(i)?);
        }
        for &i in &us {
            u.push(field(i)?);
        }
        for &i in &xs {
            x.push(field(i)?);
        }
    }
    if t.len() < 2 {
        return Err(CliError::format(path, "a trajectory needs at least two samples"));
    }
    let dt = t[1] - t[0];
    let uniform = t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
    if !(dt > 0.0) || !uniform {
        return Err(CliError::format(path, "time column must be uniformly increasing"));
    }
    let grid = TimeGrid::new(t[0], dt, t.len())?;
    Ok(Trajectory {
        grid,
        y: SampledSignal::new(grid, ys.len(), y)?,
        u: if us.is_empty() { None } else { Some(SampledSignal::new(grid, us.len(), u)?) },
        x: if xs.is_empty() { None } else { Some(SampledSignal::new(grid, xs.len(), x)?) },
        input,
    })
}

/// Dataset description written next to the trajectory files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub system: System,
    pub seed: u64,
    pub noise_variance: f64,
    pub dt: f64,
    pub trajectories: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub x0: Vec<f64>,
    pub input: InputSpec,
}

pub fn write_dataset(dir: &Path, data: &[Trajectory], sys: &System, seed: u64, noise_variance: f64) -> CliResult<()> {
    create_dir(dir)?;
    let mut entries = Vec::with_capacity(data.len());
    for (j, tr) in data.iter().enumerate() {
        let file = format!("traj_{j:04}.csv");
        write_trajectory(&dir.join(&file), tr)?;
        entries.push(ManifestEntry {
            file,
            x0: tr.x.as_ref().map(|x| x.row(0).to_vec()).unwrap_or_default(),
            input: tr.input,
        });
    }
    let manifest = Manifest {
        schema_version: structnode::experiment::SCHEMA_VERSION,
        system: *sys,
        seed,
        noise_variance,
        dt: data.first().map_or(0.0, |tr| tr.grid.dt),
        trajectories: entries,
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

/// Reads every trajectory listed in the manifest of `dir`.
pub fn read_dataset(dir: &Path, sys: &System) -> CliResult<Vec<Trajectory>> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.system.name() != sys.name() {
        return Err(CliError::format(
            dir.join(MANIFEST),
            format!("dataset is for {}, config asks for {}", manifest.system.name(), sys.name()),
        ));
    }
    manifest
        .trajectories
        .iter()
        .map(|e| read_trajectory(&dir.join(&e.file), sys, e.input))
        .collect()
}

