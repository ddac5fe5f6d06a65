//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 on
//! numerical-domain errors.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{CirError, Result};
use crate::experiment::{
    self, moment_check, run_campaign, unix_now, write_campaign, ErrorFunctional, ExperimentConfig,
    GridConfig, Manifest, Preset,
};
use crate::mesh::{ControllerKind, DEFAULT_RHO};
use crate::model::{classify_regime, CirParams};
use crate::schemes::{run_trajectory, SchemeId};
use crate::wiener::{GridSpec, WienerGrid};

pub const THREADS_ENV: &str = "CIRLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cirlab", version, about = "CIR strong-convergence laboratory")]
pub struct Cli {
    /// Worker threads; affects wall-clock only. Falls back to CIRLAB_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate trajectories and dump them as CSV, one file per (scheme, path).
    Paths(PathsArgs),
    /// Check the first-moment bound E[X(T)] <= X0 + kappa*theta*T.
    Moments(MomentsArgs),
    /// Run a convergence campaign and write results.csv, rates.csv, manifest.json.
    Rates(RatesArgs),
    /// Classify volatilities against the parameter regimes.
    Regimes(RegimesArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.02)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
}

#[derive(Debug, Args)]
pub struct RegimesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// One or more volatilities (comma separated or repeated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigma: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PathsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.8)]
    pub sigma: f64,
    /// Schemes to run (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "SplitSoftZero")]
    pub scheme: Vec<String>,
    /// Controller override applied to every scheme.
    #[arg(long)]
    pub controller: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub dt_max: f64,
    #[arg(long, default_value_t = 1)]
    pub paths: u64,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long, default_value = "paths")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    pub sigma: Vec<f64>,
    #[arg(long, default_value = "SplitLie")]
    pub scheme: String,
    #[arg(long)]
    pub controller: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub dt_max: f64,
    #[arg(long, default_value_t = 1000)]
    pub paths: u64,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    /// JSON campaign configuration; the desk preset is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configured output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replaces dt_ref and the dt ladder with a preset.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Report the maximum error over shared mesh nodes instead of at T.
    #[arg(long)]
    pub max_over_nodes: bool,
}

fn parse_controller(s: &str) -> Result<ControllerKind> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| CirError::InvalidConfig(format!("unknown controller {s}")))
}

fn model_params(m: &ModelArgs, sigma: f64) -> Result<CirParams> {
    CirParams::new(m.kappa, m.theta, sigma, m.x0, m.horizon)
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.12}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// One line of `regimes` output.
pub fn describe_regime(p: &CirParams) -> String {
    let r = classify_regime(p);
    let mut line = format!(
        "alpha={}, feller={}, regime={}",
        trim_float(r.alpha),
        r.feller,
        r.kind
    );
    if let Some(b) = r.boundary {
        line.push_str(&format!(" (boundary: {b})"));
    }
    line
}

fn cmd_regimes(args: &RegimesArgs, out: &mut dyn Write) -> Result<()> {
    let many = args.sigma.len() > 1;
    for &s in &args.sigma {
        let p = model_params(&args.model, s)?;
        if many {
            writeln!(out, "sigma={s}: {}", describe_regime(&p))?;
        } else {
            writeln!(out, "{}", describe_regime(&p))?;
        }
    }
    Ok(())
}

fn cmd_paths(args: &PathsArgs, out: &mut dyn Write) -> Result<()> {
    let p = model_params(&args.model, args.sigma)?;
    let spec = GridSpec::new(args.preset.dt_ref(), p.horizon)?;
    let schemes: Vec<SchemeId> = args
        .scheme
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let override_ctl = args
        .controller
        .as_deref()
        .map(parse_controller)
        .transpose()?;
    std::fs::create_dir_all(&args.out)?;
    for path in 0..args.paths {
        let grid = WienerGrid::generate(args.seed, path, spec);
        for &scheme in &schemes {
            let kind = override_ctl.unwrap_or_else(|| scheme.default_controller());
            let ctl = kind.build(args.dt_max, args.rho, &p)?;
            let tr = run_trajectory(scheme, &ctl, &p, &grid)?;
            let mut csv = String::from("t,x,step_kind,dt\n");
            csv.push_str(&format!(
                "{},{},initial,{}\n",
                experiment::format_f64(tr.times[0]),
                experiment::format_f64(tr.states[0]),
                experiment::format_f64(0.0)
            ));
            for (k, kind) in tr.step_kinds.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    experiment::format_f64(tr.times[k + 1]),
                    experiment::format_f64(tr.states[k + 1]),
                    kind.as_str(),
                    experiment::format_f64(tr.times[k + 1] - tr.times[k])
                ));
            }
            let file = args.out.join(format!("{}_path{path}.csv", scheme.name()));
            std::fs::write(&file, csv)?;
            writeln!(
                out,
                "{}: {} steps ({} soft-zero), X(T)={}",
                file.display(),
                tr.steps(),
                tr.soft_zero_steps(),
                tr.terminal()
            )?;
        }
    }
    Ok(())
}

fn cmd_moments(args: &MomentsArgs, out: &mut dyn Write) -> Result<()> {
    let scheme: SchemeId = args.scheme.parse()?;
    let kind = match &args.controller {
        Some(c) => parse_controller(c)?,
        None => scheme.default_controller(),
    };
    let grid_cfg = GridConfig {
        dt_ref: args.preset.dt_ref(),
        seed: args.seed,
        num_batches: 2,
        rho: args.rho,
        functional: ErrorFunctional::Terminal,
    };
    writeln!(out, "scheme,sigma,mean,stderr,bound,pass")?;
    let mut all_pass = true;
    for &s in &args.sigma {
        let p = model_params(&args.model, s)?;
        let m = moment_check(scheme, kind, &p, args.dt_max, args.paths, &grid_cfg)?;
        all_pass &= m.pass;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            scheme,
            s,
            experiment::format_f64(m.mean),
            experiment::format_f64(m.stderr),
            experiment::format_f64(m.bound),
            m.pass
        )?;
    }
    if !all_pass {
        writeln!(out, "moment bound exceeded")?;
    }
    Ok(())
}

fn cmd_rates(args: &RatesArgs, threads: usize, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CirError::InvalidConfig(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::preset(Preset::Desk),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(preset) = args.preset {
        cfg.dt_ref = preset.dt_ref();
        cfg.dt_ladder = preset.ladder();
    }
    if args.max_over_nodes {
        cfg.error_functional = ErrorFunctional::MaxOverNodes;
    }
    cfg.validate()?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));

    let mut manifest = Manifest::new(&cfg, threads, unix_now());
    let result = run_campaign(&cfg)?;
    manifest.finished_unix = unix_now();
    manifest.warnings = result.warnings.clone();
    manifest.annotations = result.annotations.clone();
    let files = write_campaign(&dir, &result, &manifest)?;
    for w in &result.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(
        out,
        "{} rows, {} fits -> {}, {}, {}",
        result.rows.len(),
        result.rates.len(),
        files.results.display(),
        files.rates.display(),
        files.manifest.display()
    )?;
    Ok(())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CirError::InvalidConfig(format!("{THREADS_ENV}={v} is not a count"))),
        Err(_) => Ok(0),
    }
}

fn exit_code(e: &CirError) -> i32 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses `argv` and runs the command, writing normal output to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };

    let threads = match resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 1;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: thread pool: {e}");
            return 1;
        }
    };
    let effective = pool.current_num_threads();

    let (result, buffered) = pool.install(|| {
        let mut buf: Vec<u8> = Vec::new();
        let r = match &cli.command {
            Command::Regimes(a) => cmd_regimes(a, &mut buf),
            Command::Paths(a) => cmd_paths(a, &mut buf),
            Command::Moments(a) => cmd_moments(a, &mut buf),
            Command::Rates(a) => cmd_rates(a, effective, &mut buf),
        };
        (r, buf)
    });
    let _ = out.write_all(&buffered);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
