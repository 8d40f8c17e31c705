//! The `run` and `bounds` commands, independent of argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use seqdetect_core::{lower_bounds, run_experiment, write_csv, AggregateStats, ThresholdSpec};

use crate::config::StudyFile;
use crate::error::CliError;

/// Everything needed to rerun a study and reproduce its CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub study: String,
    pub version: String,
    pub base_seed: u64,
    pub workers: usize,
    pub wall_time_seconds: f64,
    pub csv: String,
    pub config: StudyFile,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub stats: Vec<AggregateStats>,
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Run a study and write `<name>.csv` and `<name>.manifest.json` into `out_dir`.
pub fn run_study(file: &StudyFile, workers: usize, out_dir: &Path) -> Result<RunOutput, CliError> {
    let config = file.experiment()?;
    let name = file.study.name.as_str();
    check_name(name)?;
    let start = Instant::now();
    let stats = run_experiment(&config, workers)?;
    let wall_time_seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(out_dir)?;
    let csv_name = format!("{name}.csv");
    let csv_path = out_dir.join(&csv_name);
    write_csv(&stats, fs::File::create(&csv_path)?)?;

    let manifest = Manifest {
        study: name.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        base_seed: file.study.base_seed,
        workers,
        wall_time_seconds,
        csv: csv_name,
        config: file.clone(),
    };
    let manifest_path = out_dir.join(format!("{name}.manifest.json"));
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(RunOutput {
        csv_path,
        manifest_path,
        stats,
    })
}

/// Write `<name>_bounds.csv` with one row per `k`. The error budgets come
/// from calibrated thresholds in the file.
pub fn run_bounds(file: &StudyFile, out_dir: &Path) -> Result<PathBuf, CliError> {
    let config = file.experiment()?;
    let ThresholdSpec::Calibrated { alpha, beta, .. } = config.thresholds else {
        return Err(CliError::Config(
            "bounds need error budgets: set thresholds.alpha/beta or pass --alpha/--beta".into(),
        ));
    };
    check_name(&file.study.name)?;
    let report = lower_bounds(&config.models, &config.truth, alpha, beta)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("{}_bounds.csv", file.study.name));
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut rows = vec![[
        "k",
        "lower_bound",
        "asymptotic_bound",
        "t_stop_bound",
        "asymptotic_t_stop",
    ]
    .map(String::from)];
    for (k, (bound, asym)) in report.per_k_bounds.iter().zip(&report.asymptotic_per_k).enumerate() {
        rows.push([
            (k + 1).to_string(),
            bound.to_string(),
            asym.to_string(),
            report.t_stop_bound.to_string(),
            report.asymptotic_t_stop.to_string(),
        ]);
    }
    for row in rows {
        w.write_record(row).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(path)
}

fn check_name(name: &str) -> Result<(), CliError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if ok && !name.starts_with('.') {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "study name `{name}` must be non-empty and use only letters, digits, `_`, `-` and `.`"
        )))
    }
}
