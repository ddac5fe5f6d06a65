//! Strong-error estimation on coupled coarse/reference paths, moment
//! checks, and full convergence campaigns.
//!
//! Every candidate trajectory is compared with a truncated Milstein
//! trajectory at `dt_ref` driven by the same [`WienerGrid`]. Paths are
//! independent tasks; per-path results are collected in path order and
//! reduced with a fixed-shape pairwise sum, so the thread count never
//! changes the output bits.

mod config;
mod output;
mod stats;

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{ErrorFunctional, ExperimentConfig, Preset, SIGMA_LANDMARKS};
pub use output::{
    format_f64, rates_csv, results_csv, unix_now, write_campaign, CampaignFiles, Manifest,
    RATES_HEADER, RESULTS_HEADER,
};
pub use stats::{
    batch_error_moments, fit_loglog, mean, pairwise_sum, sample_std, ErrorMoments, LineFit,
};

use crate::error::{CirError, Result};
use crate::mesh::{ControllerKind, MeshController};
use crate::model::{transform, CirParams};
use crate::schemes::{simulate, RunOptions, SchemeId};
use crate::wiener::{GridSpec, WienerGrid};

/// Fraction of ODE steps above which a row is flagged as essentially
/// deterministic.
pub const SOFT_ZERO_FLAG_FRACTION: f64 = 0.9;

/// Grid and sampling settings shared by all rows of an estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub dt_ref: f64,
    pub seed: u64,
    pub num_batches: usize,
    pub rho: f64,
    pub functional: ErrorFunctional,
}

/// Strong-error statistics for one (scheme, σ, dt_max) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub l1: f64,
    pub l1_stderr: f64,
    pub l2: f64,
    pub l2_stderr: f64,
    pub avg_dt: f64,
    pub soft_zero_fraction: f64,
    pub num_paths: usize,
}

#[derive(Debug, Clone, Copy)]
struct PathOutcome {
    error: f64,
    steps: usize,
    soft_zero_steps: usize,
}

/// Reference run on one path: terminal state, plus every node when the
/// max-over-nodes functional needs it.
struct Reference {
    terminal: f64,
    nodes: Vec<f64>,
}

fn reference_run(p: &CirParams, grid: &WienerGrid, keep_nodes: bool) -> Result<Reference> {
    let ctl = MeshController::Fixed { dt: grid.dt_ref() };
    let mut nodes = Vec::with_capacity(if keep_nodes { grid.cells() + 1 } else { 0 });
    let summary = simulate(
        SchemeId::MilsteinTrunc,
        &ctl,
        p,
        grid,
        &RunOptions::default(),
        |n| {
            if keep_nodes {
                nodes.push(n.x);
            }
        },
    )?;
    Ok(Reference {
        terminal: summary.terminal,
        nodes,
    })
}

fn candidate_run(
    scheme: SchemeId,
    ctl: &MeshController,
    p: &CirParams,
    grid: &WienerGrid,
    reference: &Reference,
    functional: ErrorFunctional,
) -> Result<PathOutcome> {
    let mut worst: f64 = 0.0;
    let summary = simulate(scheme, ctl, p, grid, &RunOptions::default(), |n| {
        if functional == ErrorFunctional::MaxOverNodes {
            worst = worst.max((n.x - reference.nodes[n.grid_index]).abs());
        }
    })?;
    let error = match functional {
        ErrorFunctional::Terminal => (summary.terminal - reference.terminal).abs(),
        ErrorFunctional::MaxOverNodes => worst,
    };
    Ok(PathOutcome {
        error,
        steps: summary.steps,
        soft_zero_steps: summary.soft_zero_steps,
    })
}

fn aggregate(outcomes: &[PathOutcome], horizon: f64, batches: usize) -> Result<ErrorStats> {
    let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
    let m = batch_error_moments(&errors, batches)?;
    let steps: usize = outcomes.iter().map(|o| o.steps).sum();
    let ode: usize = outcomes.iter().map(|o| o.soft_zero_steps).sum();
    Ok(ErrorStats {
        l1: m.l1,
        l1_stderr: m.l1_stderr,
        l2: m.l2,
        l2_stderr: m.l2_stderr,
        avg_dt: horizon * outcomes.len() as f64 / steps as f64,
        soft_zero_fraction: ode as f64 / steps as f64,
        num_paths: outcomes.len(),
    })
}

/// Strong error of `scheme` at step bound `dt_max` against the truncated
/// Milstein reference at `dt_ref`, over the given path indices.
pub fn strong_error(
    scheme: SchemeId,
    controller: ControllerKind,
    p: &CirParams,
    dt_max: f64,
    paths: Range<u64>,
    grid_cfg: &GridConfig,
) -> Result<ErrorStats> {
    let spec = GridSpec::new(grid_cfg.dt_ref, p.horizon)?;
    scheme.check_admissible(controller, &transform(p))?;
    let ctl = controller.build(dt_max, grid_cfg.rho, p)?;
    let keep = grid_cfg.functional == ErrorFunctional::MaxOverNodes;
    let outcomes: Vec<PathOutcome> = paths
        .into_par_iter()
        .map(|path| {
            let grid = WienerGrid::generate(grid_cfg.seed, path, spec);
            let reference = reference_run(p, &grid, keep)?;
            candidate_run(scheme, &ctl, p, &grid, &reference, grid_cfg.functional)
        })
        .collect::<Result<_>>()?;
    aggregate(&outcomes, p.horizon, grid_cfg.num_batches)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub mean: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Sample mean of `X(T)` against the bound `X₀ + κθT`, passing when the
/// mean does not exceed the bound by more than three standard errors.
pub fn moment_check(
    scheme: SchemeId,
    controller: ControllerKind,
    p: &CirParams,
    dt_max: f64,
    num_paths: u64,
    grid_cfg: &GridConfig,
) -> Result<MomentCheck> {
    let spec = GridSpec::new(grid_cfg.dt_ref, p.horizon)?;
    scheme.check_admissible(controller, &transform(p))?;
    let ctl = controller.build(dt_max, grid_cfg.rho, p)?;
    let terminals: Vec<f64> = (0..num_paths)
        .into_par_iter()
        .map(|path| {
            let grid = WienerGrid::generate(grid_cfg.seed, path, spec);
            simulate(scheme, &ctl, p, &grid, &RunOptions::default(), |_| {}).map(|s| s.terminal)
        })
        .collect::<Result<_>>()?;
    let m = mean(&terminals);
    let stderr = sample_std(&terminals) / (terminals.len() as f64).sqrt();
    let bound = p.x0 + p.kappa * p.theta * p.horizon;
    Ok(MomentCheck {
        mean: m,
        stderr,
        bound,
        pass: m <= bound + 3.0 * stderr,
    })
}

/// One (scheme, σ, dt_max) row of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub scheme: String,
    pub sigma: f64,
    pub dt_max: f64,
    pub stats: Option<ErrorStats>,
    pub status: String,
}

impl ErrorRow {
    pub fn is_ok(&self) -> bool {
        self.stats.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub scheme: String,
    pub sigma: f64,
    pub norm: Norm,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
}

/// Fits `log₁₀ error = intercept + slope·log₁₀ dt_max` over the rows of one
/// (scheme, σ) pair.
pub fn fit_rate(rows: &[ErrorRow], norm: Norm) -> Result<RateFit> {
    let first = rows
        .first()
        .ok_or_else(|| CirError::DegenerateFit("no rows".into()))?;
    if rows
        .iter()
        .any(|r| r.scheme != first.scheme || r.sigma != first.sigma)
    {
        return Err(CirError::DegenerateFit(
            "rows mix schemes or volatilities".into(),
        ));
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            r.stats.map(|s| {
                let e = match norm {
                    Norm::L1 => s.l1,
                    Norm::L2 => s.l2,
                };
                (r.dt_max, e)
            })
        })
        .collect();
    let fit = fit_loglog(&points)?;
    Ok(RateFit {
        scheme: first.scheme.clone(),
        sigma: first.sigma,
        norm,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        intercept: fit.intercept,
    })
}

/// Row label: the scheme name, suffixed with the controller when it is
/// not the scheme's default.
pub fn scheme_label(scheme: SchemeId, controller: ControllerKind) -> String {
    if controller == scheme.default_controller() {
        scheme.name().to_string()
    } else {
        format!("{}+{}", scheme.name(), controller.as_str())
    }
}

#[derive(Debug, Clone)]
struct Cell {
    scheme: SchemeId,
    controller: ControllerKind,
    sigma: f64,
    dt_max: f64,
    /// Step bound actually used, which differs from `dt_max` only in
    /// matched-average-step mode.
    dt_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub rows: Vec<ErrorRow>,
    pub rates: Vec<RateFit>,
    pub annotations: Vec<String>,
    pub warnings: Vec<String>,
}

/// Runs every (scheme × σ × dt_max) cell of the configuration.
///
/// Inadmissible or failing cells produce a row with an error status; the
/// campaign itself only fails on invalid configuration.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let spec = cfg.grid_spec()?;
    let sigmas = cfg.sigmas();

    let mut cells = Vec::new();
    for &sigma in &sigmas {
        for &scheme in &cfg.schemes {
            for &dt in &cfg.dt_ladder {
                cells.push(Cell {
                    scheme,
                    controller: cfg.controller_for(scheme),
                    sigma,
                    dt_max: dt,
                    dt_step: dt,
                });
            }
        }
    }

    let mut results: Vec<Option<std::result::Result<ErrorStats, CirError>>> =
        vec![None; cells.len()];

    if cfg.match_avg_dt {
        let adaptive = cfg
            .schemes
            .iter()
            .copied()
            .find(|s| cfg.controller_for(*s) != ControllerKind::Fixed)
            .ok_or_else(|| {
                CirError::InvalidConfig("match_avg_dt needs an adaptive scheme".into())
            })?;
        let first: Vec<usize> = (0..cells.len())
            .filter(|&i| cells[i].controller != ControllerKind::Fixed)
            .collect();
        run_cells(cfg, spec, &cells, &first, &mut results);
        for i in 0..cells.len() {
            if cells[i].controller != ControllerKind::Fixed {
                continue;
            }
            let source = cells.iter().position(|c| {
                c.scheme == adaptive && c.sigma == cells[i].sigma && c.dt_max == cells[i].dt_max
            });
            if let Some(Some(Ok(stats))) = source.map(|s| &results[s]) {
                let snapped = spec.dt_ref
                    * crate::wiener::snap_to_grid(
                        stats.avg_dt,
                        spec.dt_ref,
                        crate::wiener::SnapMode::Floor,
                        spec.cells,
                    )
                    .max(1) as f64;
                cells[i].dt_step = snapped;
            }
        }
        let second: Vec<usize> = (0..cells.len())
            .filter(|&i| cells[i].controller == ControllerKind::Fixed)
            .collect();
        run_cells(cfg, spec, &cells, &second, &mut results);
    } else {
        let all: Vec<usize> = (0..cells.len()).collect();
        run_cells(cfg, spec, &cells, &all, &mut results);
    }

    let mut annotations = Vec::new();
    let rows: Vec<ErrorRow> = cells
        .iter()
        .zip(results)
        .map(|(c, r)| {
            let scheme = scheme_label(c.scheme, c.controller);
            match r.expect("every cell was run") {
                Ok(stats) => {
                    let status = if stats.soft_zero_fraction > SOFT_ZERO_FLAG_FRACTION {
                        annotations.push(format!(
                            "{scheme} sigma={} dt_max={}: soft-zero fraction {:.3} above {}",
                            c.sigma, c.dt_max, stats.soft_zero_fraction, SOFT_ZERO_FLAG_FRACTION
                        ));
                        "soft_zero_dominated"
                    } else {
                        "ok"
                    };
                    ErrorRow {
                        scheme,
                        sigma: c.sigma,
                        dt_max: c.dt_max,
                        stats: Some(stats),
                        status: status.to_string(),
                    }
                }
                Err(e) => ErrorRow {
                    scheme,
                    sigma: c.sigma,
                    dt_max: c.dt_max,
                    stats: None,
                    status: e.code().to_string(),
                },
            }
        })
        .collect();

    let mut rates = Vec::new();
    for &sigma in &sigmas {
        for &scheme in &cfg.schemes {
            let label = scheme_label(scheme, cfg.controller_for(scheme));
            let group: Vec<ErrorRow> = rows
                .iter()
                .filter(|r| r.scheme == label && r.sigma == sigma && r.is_ok())
                .cloned()
                .collect();
            if group.len() < 2 {
                continue;
            }
            if group.iter().any(|r| r.status == "soft_zero_dominated") {
                annotations.push(format!(
                    "rate fit for {label} sigma={sigma} includes soft-zero dominated rows"
                ));
            }
            for norm in [Norm::L1, Norm::L2] {
                match fit_rate(&group, norm) {
                    Ok(f) => rates.push(f),
                    Err(e) => annotations.push(format!(
                        "no {} fit for {label} sigma={sigma}: {e}",
                        norm.as_str()
                    )),
                }
            }
        }
    }

    Ok(CampaignResult {
        rows,
        rates,
        annotations,
        warnings: cfg.warnings(),
    })
}

/// Runs the selected cells path-major: one Wiener grid per path, one
/// reference per (path, σ), then every candidate on that grid.
fn run_cells(
    cfg: &ExperimentConfig,
    spec: GridSpec,
    cells: &[Cell],
    selected: &[usize],
    results: &mut [Option<std::result::Result<ErrorStats, CirError>>],
) {
    // Admissibility and controller construction happen once per cell.
    let mut live: Vec<(usize, MeshController, CirParams)> = Vec::new();
    for &i in selected {
        let c = &cells[i];
        let p = cfg.params.with_sigma(c.sigma);
        let built = c
            .scheme
            .check_admissible(c.controller, &transform(&p))
            .and_then(|_| c.controller.build(c.dt_step, cfg.rho, &p));
        match built {
            Ok(ctl) => live.push((i, ctl, p)),
            Err(e) => results[i] = Some(Err(e)),
        }
    }
    if live.is_empty() {
        return;
    }

    let keep = cfg.error_functional == ErrorFunctional::MaxOverNodes;

    // per_path[path][k] is the outcome of live[k] on that path.
    let per_path: Vec<Vec<Result<PathOutcome>>> = (0..cfg.num_paths as u64)
        .into_par_iter()
        .map(|path| {
            let grid = WienerGrid::generate(cfg.seed, path, spec);
            let mut out: Vec<Result<PathOutcome>> = Vec::with_capacity(live.len());
            let mut current: Option<(f64, Result<Reference>)> = None;
            for (i, ctl, p) in &live {
                let sigma = cells[*i].sigma;
                if current.as_ref().map(|(s, _)| *s) != Some(sigma) {
                    current = Some((sigma, reference_run(p, &grid, keep)));
                }
                let outcome = match &current {
                    Some((_, Ok(reference))) => candidate_run(
                        cells[*i].scheme,
                        ctl,
                        p,
                        &grid,
                        reference,
                        cfg.error_functional,
                    ),
                    Some((_, Err(e))) => Err(e.clone()),
                    None => unreachable!(),
                };
                out.push(outcome);
            }
            out
        })
        .collect();

    for (k, (i, _, p)) in live.iter().enumerate() {
        let outcomes: Result<Vec<PathOutcome>> =
            per_path.iter().map(|row| row[k].clone()).collect();
        results[*i] = Some(outcomes.and_then(|o| aggregate(&o, p.horizon, cfg.num_batches)));
    }
}
