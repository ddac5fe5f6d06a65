//! CSV and manifest serialization of campaign results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CampaignResult, ExperimentConfig};
use crate::error::Result;

pub const RESULTS_HEADER: &str =
    "scheme,sigma,dt_max,l1,l1_stderr,l2,l2_stderr,avg_dt,soft_zero_fraction,num_paths,status";
pub const RATES_HEADER: &str = "scheme,sigma,norm,slope,slope_stderr,intercept";

/// 17 significant digits in scientific notation; `NaN` for missing values.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn results_csv(result: &CampaignResult) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for row in &result.rows {
        let nan = f64::NAN;
        let (l1, l1e, l2, l2e, avg, frac, n) = match &row.stats {
            Some(s) => (
                s.l1,
                s.l1_stderr,
                s.l2,
                s.l2_stderr,
                s.avg_dt,
                s.soft_zero_fraction,
                s.num_paths,
            ),
            None => (nan, nan, nan, nan, nan, nan, 0),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.scheme,
            format_f64(row.sigma),
            format_f64(row.dt_max),
            format_f64(l1),
            format_f64(l1e),
            format_f64(l2),
            format_f64(l2e),
            format_f64(avg),
            format_f64(frac),
            n,
            row.status
        );
    }
    out
}

pub fn rates_csv(result: &CampaignResult) -> String {
    let mut out = String::from(RATES_HEADER);
    out.push('\n');
    for r in &result.rates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme,
            format_f64(r.sigma),
            r.norm.as_str(),
            format_f64(r.slope),
            format_f64(r.slope_stderr),
            format_f64(r.intercept)
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub warnings: Vec<String>,
    pub annotations: Vec<String>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig, threads: usize, started_unix: f64) -> Self {
        Manifest {
            tool: "cirlab",
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            threads,
            started_unix,
            finished_unix: started_unix,
            warnings: Vec::new(),
            annotations: Vec::new(),
        }
    }
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignFiles {
    pub results: PathBuf,
    pub rates: PathBuf,
    pub manifest: PathBuf,
}

/// Writes `results.csv`, `rates.csv` and `manifest.json` into `dir`.
pub fn write_campaign(
    dir: &Path,
    result: &CampaignResult,
    manifest: &Manifest,
) -> Result<CampaignFiles> {
    fs::create_dir_all(dir)?;
    let files = CampaignFiles {
        results: dir.join("results.csv"),
        rates: dir.join("rates.csv"),
        manifest: dir.join("manifest.json"),
    };
    fs::write(&files.results, results_csv(result))?;
    fs::write(&files.rates, rates_csv(result))?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| crate::error::CirError::Io(e.to_string()))?;
    fs::write(&files.manifest, json)?;
    Ok(files)
}
