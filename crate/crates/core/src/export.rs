//! CSV and JSON artifacts.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! gives bit-identical values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::save_config;
use crate::error::{Error, Result};
use crate::fit::HarmonicFit;
use crate::hilbert::{SampleSeries, SeriesMeta};
use crate::model::ValidatedConfig;
use crate::pipeline::{BatchReport, EstimationResult, ExperimentReport, SweepTable};

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    t: f64,
    value: f64,
    #[serde(default)]
    std_error: Option<f64>,
}

/// `t,value,std_error`, one row per grid point.
pub fn series_csv(series: &SampleSeries) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..series.len() {
        w.serialize(SeriesRow {
            t: series.times[i],
            value: series.values[i],
            std_error: Some(series.std_errors[i]),
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Read a series written by [`series_csv`]. A missing `std_error` column
/// reads as zero.
pub fn parse_series_csv(text: &str, meta: SeriesMeta) -> Result<SampleSeries> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let (mut times, mut values, mut std_errors) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in r.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("series row {}: {e}", i + 1)))?;
        let s = row.std_error.unwrap_or(0.0);
        if !(row.t.is_finite() && row.value.is_finite() && s.is_finite() && s >= 0.0) {
            return Err(Error::Parse(format!(
                "series row {}: non-finite or negative entry",
                i + 1
            )));
        }
        times.push(row.t);
        values.push(row.value);
        std_errors.push(s);
    }
    if times.is_empty() {
        return Err(Error::Parse("series file has no rows".into()));
    }
    Ok(SampleSeries {
        times,
        values,
        std_errors,
        meta,
    })
}

pub fn series_meta_json(series: &SampleSeries) -> Result<String> {
    Ok(serde_json::to_string_pretty(&series.meta)?)
}

pub fn fit_json(fit: &HarmonicFit) -> Result<String> {
    Ok(serde_json::to_string_pretty(fit)?)
}

/// Missing fields take their defaults, so `{"modes": [...]}` is accepted.
pub fn parse_fit_json(text: &str) -> Result<HarmonicFit> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Serialize)]
struct ResultRow<'a> {
    index: &'a str,
    #[serde(rename = "J_true")]
    j_true: Option<f64>,
    #[serde(rename = "J_hat")]
    j_hat: f64,
    rel_error: Option<f64>,
}

/// `index,J_true,J_hat,rel_error`; unknown truth leaves the columns empty.
pub fn result_csv(est: &EstimationResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, label) in est.labels.iter().enumerate() {
        w.serialize(ResultRow {
            index: label,
            j_true: est.couplings_true.as_ref().map(|t| t[i]),
            j_hat: est.couplings_hat[i],
            rel_error: est.rel_errors.as_ref().map(|r| r[i]),
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn result_json(est: &EstimationResult) -> Result<String> {
    Ok(serde_json::to_string_pretty(est)?)
}

#[derive(Serialize)]
struct TrialRow<'a> {
    index: usize,
    seed: u64,
    couplings_true: &'a str,
    couplings_hat: &'a str,
    max_rel_error: Option<f64>,
    mean_rel_error: Option<f64>,
    flagged: bool,
}

fn joined(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// One row per trial; coupling lists are `;`-separated.
pub fn batch_csv(batch: &BatchReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in &batch.trials {
        let truth = joined(&t.couplings_true);
        let hat = t.couplings_hat.as_deref().map(joined).unwrap_or_default();
        w.serialize(TrialRow {
            index: t.index,
            seed: t.seed,
            couplings_true: &truth,
            couplings_hat: &hat,
            max_rel_error: t.max_rel_error,
            mean_rel_error: t.mean_rel_error,
            flagged: t.flagged,
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    dimension: &'a str,
    value: f64,
    repeats: usize,
    mean_max_rel_error: Option<f64>,
    median_max_rel_error: Option<f64>,
    max_max_rel_error: Option<f64>,
    mean_mean_rel_error: Option<f64>,
    flagged: usize,
}

pub fn sweep_csv(table: &SweepTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &table.rows {
        w.serialize(SweepCsvRow {
            dimension: table.dimension.as_str(),
            value: r.value,
            repeats: r.repeats,
            mean_max_rel_error: r.mean_max_rel_error,
            median_max_rel_error: r.median_max_rel_error,
            max_max_rel_error: r.max_max_rel_error,
            mean_mean_rel_error: r.mean_mean_rel_error,
            flagged: r.flagged,
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

#[derive(Serialize)]
struct Summary<'a> {
    config_hash: &'a str,
    seed: u64,
    n_sites: usize,
    flagged: bool,
    sign_convention: &'a str,
    max_rel_error: Option<f64>,
    mean_rel_error: Option<f64>,
    couplings_hat: Option<&'a [f64]>,
    passes: Vec<PassSummary<'a>>,
}

#[derive(Serialize)]
struct PassSummary<'a> {
    basis: &'a str,
    fit_flags: &'a [crate::fit::FitFlag],
    fit_residual_rms: f64,
    couplings: Option<&'a [f64]>,
    issues: &'a [String],
}

/// Summary JSON of a run. Excludes wall time, so it is deterministic.
pub fn summary_json(report: &ExperimentReport) -> Result<String> {
    let s = Summary {
        config_hash: &report.config_hash,
        seed: report.seed,
        n_sites: report.n_sites,
        flagged: report.flagged,
        sign_convention: &report.sign_convention,
        max_rel_error: report.max_rel_error(),
        mean_rel_error: report.mean_rel_error(),
        couplings_hat: report.estimate.as_ref().map(|e| e.couplings_hat.as_slice()),
        passes: report
            .passes
            .iter()
            .map(|p| PassSummary {
                basis: p.basis.as_str(),
                fit_flags: &p.fit.flags,
                fit_residual_rms: p.fit.residual_rms,
                couplings: p.couplings.as_deref(),
                issues: &p.issues,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&s)?)
}

/// Write `text` to `dir/name` and return the path.
pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

/// Write the series CSV and its meta sidecar as `<stem>.csv`, `<stem>.json`.
pub fn write_series(dir: &Path, stem: &str, series: &SampleSeries) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    Ok(vec![
        write_file(dir, &format!("{stem}.csv"), &series_csv(series)?)?,
        write_file(dir, &format!("{stem}.json"), &series_meta_json(series)?)?,
    ])
}

/// Report bundle: `config.toml`, `series_<basis>.csv/.json`,
/// `fit_<basis>.json`, `result.csv/.json`, `summary.json`, `timing.json`.
/// Everything but `timing.json` depends only on the configuration.
pub fn write_report(
    dir: &Path,
    cfg: &ValidatedConfig,
    report: &ExperimentReport,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = vec![write_file(dir, "config.toml", &save_config(cfg)?)?];
    for p in &report.passes {
        let b = p.basis.as_str();
        out.extend(write_series(dir, &format!("series_{b}"), &p.series)?);
        out.push(write_file(
            dir,
            &format!("fit_{b}.json"),
            &fit_json(&p.fit)?,
        )?);
    }
    if let Some(est) = &report.estimate {
        out.push(write_file(dir, "result.csv", &result_csv(est)?)?);
        out.push(write_file(dir, "result.json", &result_json(est)?)?);
    }
    out.push(write_file(dir, "summary.json", &summary_json(report)?)?);
    let timing = serde_json::json!({ "wall_time_s": report.wall_time.as_secs_f64() });
    out.push(write_file(
        dir,
        "timing.json",
        &serde_json::to_string_pretty(&timing)?,
    )?);
    Ok(out)
}
