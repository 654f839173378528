//! Deterministic CSV and JSON writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use poddp::{EpisodeTrace, LatentSet};
use serde::Serialize;

use crate::{io_err, CliError, Result, SummaryRow};

pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<Self> {
        Self::create(self.root.join(name))
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(io_err(path))?,
    ))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

fn json_err(path: &Path, e: serde_json::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| json_err(path, e))?;
    writeln!(w).map_err(io_err(path))?;
    finish(w, path)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    lines: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut w = create(path)?;
    for line in lines {
        serde_json::to_writer(&mut w, line).map_err(|e| json_err(path, e))?;
        writeln!(w).map_err(io_err(path))?;
    }
    finish(w, path)
}

/// Comment lines carrying the hash and the resolved config, then the table.
fn csv_with_header(
    path: &Path,
    hash: &str,
    config_json: &str,
) -> Result<csv::Writer<BufWriter<fs::File>>> {
    let mut w = create(path)?;
    writeln!(w, "# config_hash: {hash}").map_err(io_err(path))?;
    writeln!(w, "# config: {config_json}").map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(w))
}

fn close_csv(w: csv::Writer<BufWriter<fs::File>>, path: &Path) -> Result<()> {
    let inner = w.into_inner().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    finish(inner, path)
}

#[derive(Serialize)]
struct EpisodeRow<'a> {
    seed: u64,
    planner: &'a str,
    true_z: usize,
    true_z_label: &'a str,
    cumulative_cost: f64,
    final_cost: f64,
    replans: usize,
    converged: bool,
}

pub fn write_episodes_csv<'a>(
    path: &Path,
    hash: &str,
    config_json: &str,
    traces: impl IntoIterator<Item = &'a EpisodeTrace>,
    labels: &LatentSet,
) -> Result<()> {
    let mut w = csv_with_header(path, hash, config_json)?;
    for t in traces {
        w.serialize(EpisodeRow {
            seed: t.seed,
            planner: t.planner.name(),
            true_z: t.true_z,
            true_z_label: labels.label(t.true_z),
            cumulative_cost: t.cumulative_cost,
            final_cost: t.final_cost,
            replans: t.replans,
            converged: t.converged,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    close_csv(w, path)
}

#[derive(Serialize)]
struct SweepRow<'a> {
    sigma_level: f64,
    planner: &'a str,
    n: usize,
    mean: f64,
    stderr: f64,
    stderr_defined: bool,
    nonconverged: usize,
    config_hash: &'a str,
}

pub(crate) fn write_sweep_csv(
    path: &Path,
    hash: &str,
    config_json: &str,
    rows: &[(f64, SummaryRow)],
) -> Result<()> {
    let mut w = csv_with_header(path, hash, config_json)?;
    for (sigma, r) in rows {
        w.serialize(SweepRow {
            sigma_level: *sigma,
            planner: r.planner.name(),
            n: r.n,
            mean: r.mean,
            stderr: r.stderr,
            stderr_defined: r.stderr_defined,
            nonconverged: r.nonconverged,
            config_hash: &r.config_hash,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    close_csv(w, path)
}
