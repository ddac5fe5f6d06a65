//! One-step maps and the trajectory driver.
//!
//! Splitting schemes work on `X` directly (the squared Lamperti variable).
//! `DriftImplicit` and `ProjectedEuler` evolve `Y = √X` and report `Y²`.
//! `FullyTruncEuler` carries an unclamped auxiliary state and reports its
//! positive part.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CirError, Result};
use crate::mesh::{ControllerKind, MeshController, StepKind};
use crate::model::{
    conditional_mean, exact_conditional_sample, transform, CirParams, TransformedParams,
};
use crate::wiener::{SnapMode, WienerGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    SplitLie,
    SplitStrang,
    SplitSoftZero,
    MilsteinTrunc,
    FullyTruncEuler,
    DriftImplicit,
    ProjectedEuler,
    ExactSampler,
}

impl SchemeId {
    pub const ALL: [SchemeId; 8] = [
        SchemeId::SplitLie,
        SchemeId::SplitStrang,
        SchemeId::SplitSoftZero,
        SchemeId::MilsteinTrunc,
        SchemeId::FullyTruncEuler,
        SchemeId::DriftImplicit,
        SchemeId::ProjectedEuler,
        SchemeId::ExactSampler,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeId::SplitLie => "SplitLie",
            SchemeId::SplitStrang => "SplitStrang",
            SchemeId::SplitSoftZero => "SplitSoftZero",
            SchemeId::MilsteinTrunc => "MilsteinTrunc",
            SchemeId::FullyTruncEuler => "FullyTruncEuler",
            SchemeId::DriftImplicit => "DriftImplicit",
            SchemeId::ProjectedEuler => "ProjectedEuler",
            SchemeId::ExactSampler => "ExactSampler",
        }
    }

    pub fn is_splitting(&self) -> bool {
        matches!(
            self,
            SchemeId::SplitLie | SchemeId::SplitStrang | SchemeId::SplitSoftZero
        )
    }

    pub fn default_controller(&self) -> ControllerKind {
        match self {
            SchemeId::SplitSoftZero => ControllerKind::SoftZeroHybrid,
            _ => ControllerKind::Fixed,
        }
    }

    /// Checks the scheme/controller/regime combination before any stepping.
    pub fn check_admissible(
        &self,
        controller: ControllerKind,
        tp: &TransformedParams,
    ) -> Result<()> {
        let reject = |reason: &str| {
            Err(CirError::Inadmissible {
                scheme: self.name().to_string(),
                reason: reason.to_string(),
            })
        };
        use ControllerKind::*;
        match self {
            SchemeId::SplitLie => match controller {
                AlphaGuard => Ok(()),
                Fixed | Heuristic if tp.alpha >= 0.0 => Ok(()),
                Fixed | Heuristic => reject("alpha < 0 needs the alpha guard or the soft zero"),
                SoftZeroHybrid => reject("use SplitSoftZero for the soft-zero hybrid"),
            },
            SchemeId::SplitStrang => match controller {
                Fixed | Heuristic if tp.alpha >= 0.0 => Ok(()),
                Fixed | Heuristic => reject("alpha < 0 is not supported by the Strang variant"),
                _ => reject("only fixed or heuristic meshes"),
            },
            SchemeId::SplitSoftZero => match controller {
                SoftZeroHybrid => Ok(()),
                _ => reject("requires the soft_zero_hybrid controller"),
            },
            SchemeId::DriftImplicit if tp.alpha <= 0.0 => reject("only defined for alpha > 0"),
            _ => match controller {
                Fixed => Ok(()),
                _ => reject("fixed-step scheme"),
            },
        }
    }
}

impl std::fmt::Display for SchemeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeId {
    type Err = CirError;
    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .iter()
            .copied()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CirError::InvalidConfig(format!("unknown scheme {s}")))
    }
}

fn radicand_error(radicand: f64) -> CirError {
    CirError::Domain(format!("negative radicand {radicand} in splitting step"))
}

/// Lie-Trotter splitting: `e^{−2β dt}(√(x + 2α dt) + γ dW)²`.
pub fn split_lie_step(x_n: f64, dt: f64, dw: f64, tp: &TransformedParams) -> Result<f64> {
    let radicand = x_n + 2.0 * tp.alpha * dt;
    if !(radicand >= 0.0) {
        return Err(radicand_error(radicand));
    }
    let r = radicand.sqrt() + tp.gamma * dw;
    Ok((-2.0 * tp.beta * dt).exp() * r * r)
}

/// The same map written out in `X`-coefficients:
/// `e^{−κ dt}(x + 2α dt + σ√(x + 2α dt) dW + σ² dW²/4)`.
pub fn split_lie_step_expanded(x_n: f64, dt: f64, dw: f64, p: &CirParams) -> Result<f64> {
    let tp = transform(p);
    let radicand = x_n + 2.0 * tp.alpha * dt;
    if !(radicand >= 0.0) {
        return Err(radicand_error(radicand));
    }
    Ok((-p.kappa * dt).exp()
        * (radicand + p.sigma * radicand.sqrt() * dw + p.sigma * p.sigma * dw * dw / 4.0))
}

/// Strang-like variant: `e^{−2β dt}(√(x + α dt) + γ dW)² + α dt`.
pub fn split_strang_step(x_n: f64, dt: f64, dw: f64, tp: &TransformedParams) -> Result<f64> {
    let half = tp.alpha * dt;
    let radicand = x_n + half;
    if !(radicand >= 0.0) {
        return Err(radicand_error(radicand));
    }
    let r = radicand.sqrt() + tp.gamma * dw;
    Ok((-2.0 * tp.beta * dt).exp() * r * r + half)
}

/// Truncated Milstein method used as the reference solver.
pub fn milstein_trunc_step(x_n: f64, dt: f64, dw: f64, p: &CirParams) -> f64 {
    let s2dt4 = p.sigma * p.sigma * dt / 4.0;
    let r1 = (0.5 * p.sigma * dt.sqrt()).max(x_n.max(s2dt4).sqrt() + 0.5 * p.sigma * dw);
    (r1 * r1 + dt * (p.kappa * (p.theta - x_n) - p.sigma * p.sigma / 4.0)).max(0.0)
}

/// Fully truncated Euler. Returns `(x̃_{n+1}, max{x̃_{n+1}, 0})`.
pub fn fully_trunc_euler_step(x_tilde: f64, dt: f64, dw: f64, p: &CirParams) -> (f64, f64) {
    let pos = x_tilde.max(0.0);
    let next = x_tilde + dt * p.kappa * (p.theta - pos) + p.sigma * pos.sqrt() * dw;
    (next, next.max(0.0))
}

/// Drift-implicit square-root Euler on `Y`: the positive root of
/// `(1 + β dt)·Y² − (Y_n + γ dW)·Y − α dt = 0`, i.e. of the implicit step
/// `Y_{n+1} = Y_n + (α/Y_{n+1} − β Y_{n+1}) dt + γ dW`.
pub fn drift_implicit_step(y_n: f64, dt: f64, dw: f64, tp: &TransformedParams) -> Result<f64> {
    if !(tp.alpha > 0.0) {
        return Err(CirError::Domain(format!(
            "drift-implicit step needs alpha > 0, got {}",
            tp.alpha
        )));
    }
    if !(dt >= 0.0) {
        return Err(CirError::Domain(format!("negative step {dt}")));
    }
    let denom = 1.0 + tp.beta * dt;
    let a = (y_n + tp.gamma * dw) / (2.0 * denom);
    Ok(a + (a * a + tp.alpha * dt / denom).sqrt())
}

/// Projected Euler on `Y` with projection floor `N^{−1/4}`.
pub fn projected_euler_step(
    y_n: f64,
    dt: f64,
    dw: f64,
    tp: &TransformedParams,
    n_steps: usize,
) -> f64 {
    let floor = (n_steps.max(1) as f64).powf(-0.25);
    let y = y_n.max(floor);
    y + (tp.alpha / y - tp.beta * y) * dt + tp.gamma * dw
}

/// Exact flow of `u' = κ(θ − u)`.
pub fn soft_zero_ode_step(x_n: f64, dt: f64, p: &CirParams) -> f64 {
    conditional_mean(p, x_n, dt)
}

/// A recorded node of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub grid_index: usize,
    pub t: f64,
    pub x: f64,
    /// Kind of the step that ended at this node; `None` for the initial node.
    pub kind: Option<StepKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scheme: SchemeId,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// One entry per step, so one shorter than `times`.
    pub step_kinds: Vec<StepKind>,
    pub grid_indices: Vec<usize>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.step_kinds.len()
    }

    pub fn terminal(&self) -> f64 {
        *self.states.last().expect("trajectory has an initial node")
    }

    pub fn soft_zero_steps(&self) -> usize {
        self.step_kinds
            .iter()
            .filter(|k| **k == StepKind::SoftZeroOde)
            .count()
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Per-run counters gathered by the driver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunSummary {
    pub terminal: f64,
    pub steps: usize,
    pub soft_zero_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Ceiling on the number of steps; defaults to the number of grid cells,
    /// which no mesh can exceed since every step spans at least one cell.
    pub max_steps: Option<usize>,
}

enum Stepper {
    Lie,
    Strang,
    SoftZero,
    Milstein,
    Truncated,
    Implicit,
    Projected { n_steps: usize },
    Exact(Box<ChaCha8Rng>),
}

/// Stream tag mixed into the seed for the exact sampler, so it never
/// shares words with the Wiener increments.
const EXACT_STREAM_TAG: u64 = 0x5eed_e8ac_7000_0000;

/// Drives `scheme` over `grid` under `controller`, calling `sink` for every
/// node including the initial one.
pub fn simulate<F: FnMut(Node)>(
    scheme: SchemeId,
    controller: &MeshController,
    p: &CirParams,
    grid: &WienerGrid,
    opts: &RunOptions,
    mut sink: F,
) -> Result<RunSummary> {
    let tp = transform(p);
    scheme.check_admissible(controller.kind(), &tp)?;
    if (grid.horizon() - p.horizon).abs() > 1e-9 * p.horizon {
        return Err(CirError::InvalidConfig(format!(
            "grid horizon {} differs from model horizon {}",
            grid.horizon(),
            p.horizon
        )));
    }
    let dt_ref = grid.dt_ref();
    let cells = grid.cells();
    let max_steps = opts.max_steps.unwrap_or(cells);

    let mut stepper = match scheme {
        SchemeId::SplitLie => Stepper::Lie,
        SchemeId::SplitStrang => Stepper::Strang,
        SchemeId::SplitSoftZero => Stepper::SoftZero,
        SchemeId::MilsteinTrunc => Stepper::Milstein,
        SchemeId::FullyTruncEuler => Stepper::Truncated,
        SchemeId::DriftImplicit => Stepper::Implicit,
        SchemeId::ProjectedEuler => {
            let per_step = grid.snap(controller.dt_max(), SnapMode::Floor).max(1);
            Stepper::Projected {
                n_steps: cells.div_ceil(per_step),
            }
        }
        SchemeId::ExactSampler => {
            let mut rng = ChaCha8Rng::seed_from_u64(grid.seed() ^ EXACT_STREAM_TAG);
            rng.set_stream(grid.path_index());
            Stepper::Exact(Box::new(rng))
        }
    };

    // Internal state: X for splitting, Milstein and exact; Y for the
    // Lamperti-space schemes; the unclamped auxiliary for fully truncated.
    let lamperti = matches!(stepper, Stepper::Implicit | Stepper::Projected { .. });
    let mut state = if lamperti { p.x0.sqrt() } else { p.x0 };
    let report = |s: f64| -> f64 {
        if lamperti {
            s * s
        } else {
            s.max(0.0)
        }
    };

    let mut idx = 0usize;
    let mut summary = RunSummary::default();
    sink(Node {
        grid_index: 0,
        t: 0.0,
        x: report(state),
        kind: None,
    });

    while idx < cells {
        let x = report(state);
        let plan = controller.plan(x, p, &tp)?;
        let span = match plan.kind {
            StepKind::Stochastic => grid.snap(plan.dt, SnapMode::Floor),
            StepKind::SoftZeroOde => grid.snap(plan.dt, SnapMode::Ceil),
        }
        .max(1);
        let end = (idx + span).min(cells);
        let dt = (end - idx) as f64 * dt_ref;
        let mut kind = plan.kind;

        // A guarded step shorter than one fine cell cannot be resolved on
        // the grid; flow the deterministic part for the cell instead.
        if matches!(stepper, Stepper::SoftZero)
            && kind == StepKind::Stochastic
            && tp.alpha < 0.0
            && x + 2.0 * tp.alpha * dt <= 0.0
        {
            kind = StepKind::SoftZeroOde;
        }

        let dw = match kind {
            StepKind::Stochastic => grid.increment(idx, end)?,
            StepKind::SoftZeroOde => 0.0,
        };

        state = match (&mut stepper, kind) {
            (_, StepKind::SoftZeroOde) => soft_zero_ode_step(state, dt, p),
            (Stepper::Lie | Stepper::SoftZero, _) => split_lie_step(state, dt, dw, &tp)?,
            (Stepper::Strang, _) => split_strang_step(state, dt, dw, &tp)?,
            (Stepper::Milstein, _) => milstein_trunc_step(state, dt, dw, p),
            (Stepper::Truncated, _) => fully_trunc_euler_step(state, dt, dw, p).0,
            (Stepper::Implicit, _) => drift_implicit_step(state, dt, dw, &tp)?,
            (Stepper::Projected { n_steps }, _) => {
                projected_euler_step(state, dt, dw, &tp, *n_steps)
            }
            (Stepper::Exact(rng), _) => exact_conditional_sample(p, state, dt, rng.as_mut())?,
        };
        if !state.is_finite() {
            return Err(CirError::Domain(format!(
                "{scheme} produced a non-finite state at t = {}",
                grid.spec().time_of(end)
            )));
        }

        summary.steps += 1;
        if kind == StepKind::SoftZeroOde {
            summary.soft_zero_steps += 1;
        }
        if summary.steps > max_steps {
            return Err(CirError::StepLimit(max_steps));
        }
        idx = end;
        sink(Node {
            grid_index: idx,
            t: grid.spec().time_of(idx),
            x: report(state),
            kind: Some(kind),
        });
    }
    summary.terminal = report(state);
    Ok(summary)
}

/// Runs a scheme and records every node.
pub fn run_trajectory(
    scheme: SchemeId,
    controller: &MeshController,
    p: &CirParams,
    grid: &WienerGrid,
) -> Result<Trajectory> {
    run_trajectory_with(scheme, controller, p, grid, &RunOptions::default())
}

pub fn run_trajectory_with(
    scheme: SchemeId,
    controller: &MeshController,
    p: &CirParams,
    grid: &WienerGrid,
    opts: &RunOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        scheme,
        times: Vec::new(),
        states: Vec::new(),
        step_kinds: Vec::new(),
        grid_indices: Vec::new(),
    };
    simulate(scheme, controller, p, grid, opts, |node| {
        traj.times.push(node.t);
        traj.states.push(node.x);
        traj.grid_indices.push(node.grid_index);
        if let Some(k) = node.kind {
            traj.step_kinds.push(k);
        }
    })?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SoftZeroConfig;
    use crate::wiener::GridSpec;
    use proptest::prelude::*;

    fn p(sigma: f64) -> CirParams {
        CirParams::new(2.0, 0.02, sigma, 0.0, 1.0).unwrap()
    }

    #[test]
    fn lie_examples() {
        let tp = transform(&p(0.2));
        let v = split_lie_step(0.01, 0.01, 0.0, &tp).unwrap();
        let expected = (-0.02f64).exp() * 0.0103;
        assert!((v - expected).abs() < 1e-17);
        assert!((v - 0.0100960).abs() < 1e-7);

        let tp0 = transform(&p(0.4));
        assert_eq!(split_lie_step(0.0, 0.37, 0.0, &tp0).unwrap(), 0.0);

        let tpn = transform(&p(0.8));
        assert!(matches!(
            split_lie_step(0.0001, 0.01, 0.0, &tpn),
            Err(CirError::Domain(_))
        ));
    }

    #[test]
    fn strang_examples() {
        let tp = transform(&p(0.2));
        let v = split_strang_step(0.01, 0.01, 0.0, &tp).unwrap();
        let expected = (-0.02f64).exp() * 0.01015 + 0.00015;
        assert!((v - expected).abs() < 1e-17);
        assert!((v - 0.0100990).abs() < 1e-7);

        let tp0 = transform(&p(0.4));
        for (x, dw) in [(0.0, 0.1), (0.01, -0.05), (0.3, 0.0)] {
            assert_eq!(
                split_strang_step(x, 0.01, dw, &tp0).unwrap(),
                split_lie_step(x, 0.01, dw, &tp0).unwrap()
            );
        }
    }

    #[test]
    fn milstein_examples() {
        let q = p(0.2);
        let v = milstein_trunc_step(0.01, 0.01, 0.0, &q);
        assert!((v - 0.0101).abs() < 1e-15);
        let v = milstein_trunc_step(0.0, 0.01, 0.0, &q);
        assert!((v - 0.0004).abs() < 1e-15);
        assert_eq!(milstein_trunc_step(0.0, 0.01, -5.0, &q), 0.0004);
    }

    #[test]
    fn truncated_examples() {
        let q = p(0.2);
        let (tilde, x) = fully_trunc_euler_step(-0.01, 0.01, 0.0, &q);
        assert!((tilde + 0.0096).abs() < 1e-16);
        assert_eq!(x, 0.0);
        let (tilde, _) = fully_trunc_euler_step(0.02, 0.01, 0.0, &q);
        assert_eq!(tilde, 0.02);
    }

    #[test]
    fn implicit_examples() {
        let tp = transform(&p(0.2));
        let v = drift_implicit_step(0.1, 0.01, 0.0, &tp).unwrap();
        let a: f64 = 0.1 / (2.0 * 1.01);
        let expected = a + (a * a + 0.015 * 0.01 / 1.01).sqrt();
        assert!((v - expected).abs() < 1e-16);
        assert!((v - 0.1004879).abs() < 1e-6);
        // The root solves the implicit step equation.
        let residual = 0.1 + (tp.alpha / v - tp.beta * v) * 0.01 - v;
        assert!(residual.abs() < 1e-15);
        let near = drift_implicit_step(0.1, 1e-12, 0.0, &tp).unwrap();
        assert!((near - 0.1).abs() < 1e-10);
        assert!(drift_implicit_step(0.1, 0.01, 0.0, &transform(&p(0.4))).is_err());
    }

    #[test]
    fn projected_examples() {
        let tp = transform(&p(0.2));
        let v = projected_euler_step(0.0, 0.01, 0.0, &tp, 10_000);
        assert!((v - 0.1005).abs() < 1e-15);
        let y = 0.5;
        let v = projected_euler_step(y, 0.01, 0.0, &tp, 16);
        assert_eq!(v, y + (tp.alpha / y - tp.beta * y) * 0.01);
    }

    #[test]
    fn soft_zero_ode_examples() {
        let q = p(0.8);
        let cfg = SoftZeroConfig::new(&q, 0.01, 2.0).unwrap();
        let dt = crate::mesh::next_dt_soft_zero(0.0, &q, &cfg).unwrap();
        let v = soft_zero_ode_step(0.0, dt, &q);
        assert!((v - cfg.x_zero).abs() <= 1e-14 * cfg.x_zero);
        assert!((v - 1.98013e-4).abs() < 1e-9);
        assert_eq!(soft_zero_ode_step(0.005, 0.0, &q), 0.005);
        assert!(soft_zero_ode_step(0.005, 100.0, &q) <= q.theta);
    }

    fn grid(seed: u64, path: u64, dt_ref: f64) -> WienerGrid {
        WienerGrid::generate(seed, path, GridSpec::new(dt_ref, 1.0).unwrap())
    }

    #[test]
    fn fine_fixed_mesh_hits_every_cell() {
        let g = grid(3, 0, 1e-3);
        for sigma in [0.1, 0.2, 0.3, 0.4] {
            let tr = run_trajectory(
                SchemeId::SplitLie,
                &MeshController::Fixed { dt: 1e-3 },
                &p(sigma),
                &g,
            )
            .unwrap();
            assert_eq!(tr.steps(), 1000);
            assert_eq!(tr.grid_indices, (0..=1000).collect::<Vec<_>>());
            assert_eq!(*tr.times.last().unwrap(), 1.0);
            assert!(tr.states.iter().all(|x| *x >= 0.0));
            assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn soft_zero_first_step_from_zero() {
        let g = grid(4, 0, 1e-4);
        let q = p(0.8);
        let ctl = ControllerKind::SoftZeroHybrid.build(0.01, 2.0, &q).unwrap();
        let MeshController::SoftZeroHybrid(cfg) = ctl else {
            unreachable!()
        };
        let tr = run_trajectory(SchemeId::SplitSoftZero, &ctl, &q, &g).unwrap();
        assert_eq!(tr.step_kinds[0], StepKind::SoftZeroOde);
        assert!(tr.states[1] >= cfg.x_zero);
        assert_eq!(tr.grid_indices[1], 50);
        // Every ODE step starts below x_zero and, unless truncated at T,
        // ends at or above it.
        for (i, k) in tr.step_kinds.iter().enumerate() {
            if *k == StepKind::SoftZeroOde && tr.states[i] < cfg.x_zero && i + 1 < tr.steps() {
                assert!(tr.states[i + 1] >= cfg.x_zero);
            }
        }
        assert!(tr.step_sizes().iter().all(|d| *d <= 0.01 + 1e-12));
        assert_eq!(*tr.times.last().unwrap(), 1.0);
    }

    #[test]
    fn deterministic_runs() {
        let g = grid(8, 2, 1e-4);
        let q = p(0.8);
        let ctl = ControllerKind::SoftZeroHybrid
            .build(0.005, 2.0, &q)
            .unwrap();
        let a = run_trajectory(SchemeId::SplitSoftZero, &ctl, &q, &g).unwrap();
        let b = run_trajectory(SchemeId::SplitSoftZero, &ctl, &q, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn admissibility() {
        let g = grid(1, 0, 1e-3);
        let fixed = MeshController::Fixed { dt: 0.01 };
        let err = run_trajectory(SchemeId::DriftImplicit, &fixed, &p(0.8), &g).unwrap_err();
        assert!(matches!(err, CirError::Inadmissible { .. }));
        let err = run_trajectory(SchemeId::DriftImplicit, &fixed, &p(0.4), &g).unwrap_err();
        assert!(matches!(err, CirError::Inadmissible { .. }));
        assert!(run_trajectory(SchemeId::SplitLie, &fixed, &p(0.8), &g).is_err());
        assert!(run_trajectory(SchemeId::SplitSoftZero, &fixed, &p(0.8), &g).is_err());
        let heur = MeshController::Heuristic { dt_max: 0.01 };
        assert!(run_trajectory(SchemeId::ProjectedEuler, &heur, &p(0.2), &g).is_err());
        assert!(run_trajectory(SchemeId::SplitLie, &heur, &p(0.3), &g).is_ok());
    }

    #[test]
    fn alpha_guard_without_soft_zero_aborts_at_zero() {
        let g = grid(1, 0, 1e-4);
        let err = run_trajectory(
            SchemeId::SplitLie,
            &MeshController::AlphaGuard { dt_max: 0.01 },
            &p(0.8),
            &g,
        )
        .unwrap_err();
        assert!(matches!(err, CirError::Domain(_)));
    }

    #[test]
    fn step_ceiling() {
        let g = grid(1, 0, 1e-3);
        let opts = RunOptions {
            max_steps: Some(10),
        };
        let err = run_trajectory_with(
            SchemeId::SplitLie,
            &MeshController::Fixed { dt: 0.01 },
            &p(0.2),
            &g,
            &opts,
        )
        .unwrap_err();
        assert_eq!(err, CirError::StepLimit(10));
    }

    #[test]
    fn final_step_lands_on_horizon() {
        let g = grid(1, 0, 1e-3);
        let tr = run_trajectory(
            SchemeId::MilsteinTrunc,
            &MeshController::Fixed { dt: 0.3 },
            &p(0.2),
            &g,
        )
        .unwrap();
        assert_eq!(tr.grid_indices, vec![0, 300, 600, 900, 1000]);
        assert_eq!(*tr.times.last().unwrap(), 1.0);
    }

    #[test]
    fn lamperti_schemes_report_squares() {
        let g = grid(2, 0, 1e-3);
        let tr = run_trajectory(
            SchemeId::DriftImplicit,
            &MeshController::Fixed { dt: 0.01 },
            &p(0.2),
            &g,
        )
        .unwrap();
        assert!(tr.states.iter().all(|x| *x >= 0.0));
        assert_eq!(tr.states[0], 0.0);
        assert!(tr.states[1] > 0.0);
    }

    #[test]
    fn lie_one_step_mean() {
        use rand_distr::{Distribution, StandardNormal};
        let q = CirParams::new(2.0, 0.02, 0.3, 0.0, 1.0).unwrap();
        let tp = transform(&q);
        let (x, dt) = (0.015, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = split_lie_step(x, dt, z * dt.sqrt(), &tp).unwrap();
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let target = (-q.kappa * dt).exp() * (x + q.kappa * q.theta * dt);
        assert!((mean - target).abs() < 4.0 * se, "{mean} {target} {se}");
    }

    proptest! {
        #[test]
        fn splitting_non_negative(x in 0.0f64..1.0, dt in 1e-6f64..0.5, dw in -3.0f64..3.0, sigma in 0.01f64..0.4) {
            let tp = transform(&p(sigma));
            prop_assert!(split_lie_step(x, dt, dw, &tp).unwrap() >= 0.0);
            prop_assert!(split_strang_step(x, dt, dw, &tp).unwrap() >= tp.alpha * dt);
        }

        #[test]
        fn compact_and_expanded_agree(x in 0.0f64..1.0, dt in 1e-6f64..0.5, dw in -3.0f64..3.0, sigma in 0.01f64..0.4) {
            let q = p(sigma);
            let tp = transform(&q);
            let a = split_lie_step(x, dt, dw, &tp).unwrap();
            let b = split_lie_step_expanded(x, dt, dw, &q).unwrap();
            let scale = (-q.kappa * dt).exp() * (x + 2.0 * tp.alpha * dt + tp.gamma * tp.gamma * dw * dw);
            prop_assert!((a - b).abs() <= 1e-14 * scale);
        }

        #[test]
        fn clamped_schemes_non_negative(x in -0.1f64..1.0, dt in 1e-6f64..0.5, dw in -3.0f64..3.0, sigma in 0.01f64..1.5) {
            let q = p(sigma);
            prop_assert!(milstein_trunc_step(x.max(0.0), dt, dw, &q) >= 0.0);
            prop_assert!(fully_trunc_euler_step(x, dt, dw, &q).1 >= 0.0);
        }

        #[test]
        fn implicit_positive(y in 0.0f64..1.0, dt in 1e-6f64..0.5, dw in -3.0f64..3.0, sigma in 0.01f64..0.39) {
            let tp = transform(&p(sigma));
            prop_assert!(drift_implicit_step(y, dt, dw, &tp).unwrap() > 0.0);
        }

        #[test]
        fn ode_stays_below_theta(x in 0.0f64..0.0199, dt in 0.0f64..100.0) {
            let q = p(0.8);
            let v = soft_zero_ode_step(x, dt, &q);
            prop_assert!(v >= x && v <= q.theta);
        }
    }
}
