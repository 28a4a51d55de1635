//! On-disk runs: the artifact tree for a single experiment, grid sweeps,
//! and regenerating tables from a finished run.
//!
//! ```text
//! out/
//!   resolved-config.json
//!   rounds/round_000/{uploads.jsonl, server.json, reports.jsonl}
//!   metrics.csv
//!   summary.json
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{read_reports_jsonl, write_metrics_csv, RoundReport};
use crate::config::{sweep_key, ExperimentConfig};
use crate::error::{Error, Result};
use crate::federation::{run_experiment_with, ExperimentResult, RoundArtifacts};

pub const CONFIG_FILE: &str = "resolved-config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn round_dir(out: &Path, round: usize) -> PathBuf {
    out.join("rounds").join(format!("round_{round:03}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Make `dir` an empty directory. An existing non-empty directory is only
/// cleared with `force`.
pub fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                return Err(Error::config(
                    "output_dir",
                    format!("{} is not empty (pass --force to overwrite)", dir.display()),
                ));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_round(out: &Path, artifacts: &RoundArtifacts) -> Result<()> {
    let dir = round_dir(out, artifacts.round);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_jsonl(&dir.join("uploads.jsonl"), &artifacts.uploads)?;
    write_json(&dir.join("server.json"), &artifacts.server)?;
    write_jsonl(&dir.join("reports.jsonl"), &artifacts.report.clients)
}

fn write_tables(out: &Path, result: &ExperimentResult) -> Result<()> {
    let path = out.join(METRICS_FILE);
    let mut w = create(&path)?;
    write_metrics_csv(&mut w, &result.rounds).map_err(|e| Error::io(&path, e))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&out.join(SUMMARY_FILE), result)
}

/// Run one experiment and write its full artifact tree under `out`.
pub fn run(config: &ExperimentConfig, out: &Path, force: bool) -> Result<ExperimentResult> {
    config.validate()?;
    prepare_output(out, force)?;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, config.to_json()).map_err(|e| Error::io(&path, e))?;
    let result = run_experiment_with(config, |a| write_round(out, a))?;
    write_tables(out, &result)?;
    Ok(result)
}

/// Rebuild `metrics.csv` and `summary.json` from a run's per-round reports.
pub fn report(out: &Path) -> Result<ExperimentResult> {
    let cfg_path = out.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let mut config = ExperimentConfig::default();
    config.merge_document(&text)?;

    let rounds_dir = out.join("rounds");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&rounds_dir)
        .map_err(|e| Error::io(&rounds_dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(&rounds_dir, e)))
        .collect::<Result<_>>()?;
    dirs.sort();
    let mut by_round: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for dir in dirs {
        let path = dir.join("reports.jsonl");
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        for record in read_reports_jsonl(BufReader::new(file))? {
            by_round.entry(record.round).or_default().push(record);
        }
    }
    let rounds = by_round
        .into_iter()
        .map(|(round, mut clients)| {
            clients.sort_by_key(|c| c.client);
            RoundReport::new(round, clients)
        })
        .collect();
    let result = ExperimentResult::from_rounds(&config, rounds);
    write_tables(out, &result)?;
    Ok(result)
}

/// One axis of a sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: &'static str,
    pub values: Vec<String>,
}

/// Parse `name=v1,v2,...`; `name` may be a short alias such as `n`.
pub fn parse_axis(spec: &str) -> Result<GridAxis> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("grid", format!("expected key=v1,v2, got `{spec}`")))?;
    let key = sweep_key(name.trim())?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::config(key, "grid axis has no values"));
    }
    Ok(GridAxis { key, values })
}

/// Cartesian product of the axes; the last axis varies fastest.
pub fn expand_grid(base: &ExperimentConfig, axes: &[GridAxis]) -> Result<Vec<(Vec<String>, ExperimentConfig)>> {
    let mut points = vec![(Vec::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for (labels, cfg) in &points {
            for v in &axis.values {
                let mut cfg = cfg.clone();
                cfg.set(axis.key, v)?;
                let mut labels = labels.clone();
                labels.push(v.clone());
                next.push((labels, cfg));
            }
        }
        points = next;
    }
    for (_, cfg) in &points {
        cfg.validate()?;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub values: Vec<String>,
    pub result: ExperimentResult,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Ingestion {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Run every grid point into `out/points/pNNN/` and write `sweep.csv`
/// (one row per point and round) and `final.csv` (one row per point).
/// Points run in parallel; tables are ordered by point index.
pub fn sweep(
    base: &ExperimentConfig,
    axes: &[GridAxis],
    out: &Path,
    force: bool,
) -> Result<Vec<SweepPoint>> {
    let grid = expand_grid(base, axes)?;
    prepare_output(out, force)?;
    let points = grid
        .into_par_iter()
        .enumerate()
        .map(|(index, (values, cfg))| {
            let dir = out.join("points").join(format!("p{index:03}"));
            let result = run(&cfg, &dir, false)?;
            Ok(SweepPoint {
                index,
                values,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let keys: Vec<&str> = axes.iter().map(|a| a.key).collect();
    let path = out.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["point"];
    header.extend(&keys);
    header.extend(["round", "macro_acc", "loss_total", "upload_params", "download_params"]);
    w.write_record(&header).map_err(csv_err(&path))?;
    for p in &points {
        for r in &p.result.rounds {
            let mut row = vec![format!("p{:03}", p.index)];
            row.extend(p.values.iter().cloned());
            row.extend([
                r.round.to_string(),
                r.macro_accuracy.to_string(),
                opt(r.mean_loss_total()),
                r.upload_params().to_string(),
                r.download_params().to_string(),
            ]);
            w.write_record(&row).map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("final.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["point"];
    header.extend(&keys);
    header.extend(["final_macro_acc", "upload_total", "download_total", "monotone_fraction"]);
    w.write_record(&header).map_err(csv_err(&path))?;
    for p in &points {
        let mut row = vec![format!("p{:03}", p.index)];
        row.extend(p.values.iter().cloned());
        row.extend([
            p.result.final_macro_accuracy.to_string(),
            p.result.upload_total.to_string(),
            p.result.download_total.to_string(),
            opt(p.result.diagnostics.as_ref().map(|d| d.monotone_fraction)),
        ]);
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(points)
}
