//! Experiment directories:
//!
//! ```text
//! <root>/<name>/manifest.json   resolved config, version, sha256 of every file
//! <root>/<name>/summary.json
//! <root>/<name>/timing.json     wall-clock durations, excluded from the manifest
//! <root>/<name>/panels/*.csv
//! <root>/<name>/checkpoints/<run id>/
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::series::{smooth, MetricSeries};
use crate::trainer::Run;

use super::config::ExperimentConfig;

/// Environment variable that overrides `[output] dir`.
pub const OUT_ENV: &str = "DLLAB_OUT";

/// A metric cell that could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub panel: String,
    pub run_id: String,
    pub epoch: f64,
    pub error: String,
    /// The cell failed because a run diverged.
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub experiment: String,
    pub config: ExperimentConfig,
    /// Panel name to CSV text. Names become `panels/<name>.csv`.
    pub panels: BTreeMap<String, String>,
    pub summary: Value,
    pub failures: Vec<CellFailure>,
    /// Runs whose checkpoints are written under `checkpoints/`.
    pub runs: Vec<Run>,
    /// Seconds spent per stage.
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        Report {
            experiment: experiment.to_string(),
            config: config.clone(),
            panels: BTreeMap::new(),
            summary: json!({}),
            failures: Vec::new(),
            runs: Vec::new(),
            timing: BTreeMap::new(),
        }
    }

    pub fn add_series(&mut self, name: &str, series: &MetricSeries) {
        self.panels.insert(name.to_string(), series.to_csv());
    }

    pub fn fail(&mut self, panel: &str, run_id: &str, epoch: f64, err: &Error) {
        self.failures.push(CellFailure {
            panel: panel.to_string(),
            run_id: run_id.to_string(),
            epoch,
            error: err.to_string(),
            diverged: matches!(err, Error::Diverged(_)),
        });
    }

    /// True when cells failed and every failure is a divergence.
    pub fn diverged_only(&self) -> bool {
        !self.failures.is_empty() && self.failures.iter().all(|f| f.diverged)
    }

    pub fn series(&self, name: &str) -> Result<MetricSeries> {
        let csv = self
            .panels
            .get(name)
            .ok_or_else(|| Error::invalid(format!("report has no panel `{name}`")))?;
        MetricSeries::from_csv(csv)
    }

    /// Directory the report is written to.
    pub fn dir(&self) -> PathBuf {
        output_root(&self.config).join(&self.config.output.name)
    }

    /// Writes the report to [`Report::dir`] and returns that path.
    pub fn write(&self) -> Result<PathBuf> {
        let dir = self.dir();
        self.write_to(&dir)?;
        Ok(dir)
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("panels"))?;
        let mut files: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |rel: String, bytes: &[u8]| -> Result<()> {
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
            files.insert(rel, sha256_hex(bytes));
            Ok(())
        };
        for (name, csv) in &self.panels {
            put(format!("panels/{name}.csv"), csv.as_bytes())?;
        }
        let mut summary = self.summary.clone();
        summary["experiment"] = json!(self.experiment);
        summary["failures"] = serde_json::to_value(&self.failures)?;
        put("summary.json".into(), &pretty(&summary)?)?;
        if self.config.output.save_checkpoints {
            for run in &self.runs {
                let rel = format!("checkpoints/{}", run.run_id);
                run.save(dir.join(&rel))?;
                let mut names: Vec<_> = std::fs::read_dir(dir.join(&rel))?
                    .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
                    .collect::<std::io::Result<_>>()?;
                names.sort();
                for n in names {
                    let bytes = std::fs::read(dir.join(&rel).join(&n))?;
                    files.insert(format!("{rel}/{n}"), sha256_hex(&bytes));
                }
            }
        }
        let manifest = json!({
            "experiment": self.experiment,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "files": files,
        });
        std::fs::write(dir.join("manifest.json"), pretty(&manifest)?)?;
        std::fs::write(dir.join("timing.json"), pretty(&json!(self.timing))?)?;
        Ok(())
    }
}

fn pretty(v: &Value) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(64);
    for b in Sha256::digest(bytes) {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Output root: `DLLAB_OUT` when set, else the configured directory.
pub fn output_root(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output.dir.clone(),
    }
}

/// Writes `panels_smoothed/<name>.csv` with a `±window` epoch moving average
/// for every panel in MetricSeries format. Raw panels are left untouched.
/// Returns the smoothed file paths.
pub fn smooth_report(dir: &Path, window: f64) -> Result<Vec<PathBuf>> {
    if !(window >= 0.0) {
        return Err(Error::invalid("smoothing window must be non-negative"));
    }
    let panels = dir.join("panels");
    let mut names: Vec<PathBuf> = std::fs::read_dir(&panels)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let out_dir = dir.join("panels_smoothed");
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();
    for path in names {
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        // Heatmaps and plane scans have their own layouts.
        let Ok(series) = MetricSeries::from_csv(&text) else { continue };
        let target = out_dir.join(path.file_name().expect("listed file"));
        smooth(&series, window)?.write_csv(&target)?;
        written.push(target);
    }
    Ok(written)
}

/// Reads `summary.json` of a written report.
pub fn read_summary(dir: &Path) -> Result<Value> {
    Ok(serde_json::from_slice(&std::fs::read(dir.join("summary.json"))?)?)
}
