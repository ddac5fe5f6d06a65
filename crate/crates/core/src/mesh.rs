//! Timestep controllers.
//!
//! A controller maps the state `X_n` to the next step length. It never
//! sees future Wiener increments, and every step it plans satisfies
//! `0 < dt <= dt_max`.

use serde::{Deserialize, Serialize};

use crate::error::{CirError, Result};
use crate::model::{CirParams, TransformedParams};

/// Safety factor applied to the radicand-positivity limit `X_n / (2|α|)`.
pub const ALPHA_GUARD_FACTOR: f64 = 0.95;

pub const DEFAULT_RHO: f64 = 2.0;

/// Threshold of the soft-zero region `[0, x_zero)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SoftZeroConfig {
    pub rho: f64,
    pub x_zero: f64,
    pub dt_max: f64,
}

impl SoftZeroConfig {
    /// `x_zero = θ(1 − e^{−κ·dt_max}) / ρ`, a rescaling of the ODE flow from
    /// zero over one maximal step.
    pub fn new(p: &CirParams, dt_max: f64, rho: f64) -> Result<Self> {
        if !(rho > 1.0 && rho.is_finite()) {
            return Err(CirError::InvalidConfig(format!(
                "rho must be > 1, got {rho}"
            )));
        }
        if !(dt_max > 0.0 && dt_max.is_finite()) {
            return Err(CirError::InvalidConfig(format!(
                "dt_max must be > 0, got {dt_max}"
            )));
        }
        let x_zero = p.theta * (-(-p.kappa * dt_max).exp_m1()) / rho;
        Ok(SoftZeroConfig {
            rho,
            x_zero,
            dt_max,
        })
    }
}

/// What kind of step the driver should take next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Stochastic,
    SoftZeroOde,
}

impl StepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Stochastic => "stochastic",
            StepKind::SoftZeroOde => "soft_zero_ode",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedStep {
    pub dt: f64,
    pub kind: StepKind,
}

/// `min{0.95·x/(2|α|), dt_max}`. Guarantees `x + 2α·dt >= 0.05·x > 0`.
pub fn next_dt_alpha_guard(x_n: f64, alpha: f64, dt_max: f64) -> Result<f64> {
    if !(alpha < 0.0) {
        return Err(CirError::Domain(format!(
            "alpha guard applies only for alpha < 0, got {alpha}"
        )));
    }
    if !(x_n > 0.0) {
        return Err(CirError::Domain(format!(
            "alpha guard needs x > 0, got {x_n}; no positive step keeps the radicand positive"
        )));
    }
    Ok((ALPHA_GUARD_FACTOR * x_n / (2.0 * alpha.abs())).min(dt_max))
}

/// Step over which the mean-reversion flow `u' = κ(θ − u)` carries `x_n`
/// exactly onto `x_zero`: `−(1/κ)·ln((x_zero − θ)/(x_n − θ))`.
pub fn next_dt_soft_zero(x_n: f64, p: &CirParams, cfg: &SoftZeroConfig) -> Result<f64> {
    if !(x_n >= 0.0) || x_n >= cfg.x_zero {
        return Err(CirError::Domain(format!(
            "soft-zero step needs 0 <= x < x_zero = {}, got {x_n}",
            cfg.x_zero
        )));
    }
    // ln((θ − x_zero)/(θ − x_n)) = ln1p((x_n − x_zero)/(θ − x_n))
    let ratio = (x_n - cfg.x_zero) / (p.theta - x_n);
    Ok(-ratio.ln_1p() / p.kappa)
}

/// `dt_max / (1 + 3·exp(−150·x))`.
pub fn next_dt_heuristic(x_n: f64, dt_max: f64) -> f64 {
    dt_max / (1.0 + 3.0 * (-150.0 * x_n.max(0.0)).exp())
}

/// Controller kind without its step bound; instantiated per `dt_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Fixed,
    AlphaGuard,
    SoftZeroHybrid,
    Heuristic,
}

impl ControllerKind {
    pub fn build(self, dt_max: f64, rho: f64, p: &CirParams) -> Result<MeshController> {
        Ok(match self {
            ControllerKind::Fixed => MeshController::Fixed { dt: dt_max },
            ControllerKind::AlphaGuard => MeshController::AlphaGuard { dt_max },
            ControllerKind::SoftZeroHybrid => {
                MeshController::SoftZeroHybrid(SoftZeroConfig::new(p, dt_max, rho)?)
            }
            ControllerKind::Heuristic => MeshController::Heuristic { dt_max },
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Fixed => "fixed",
            ControllerKind::AlphaGuard => "alpha_guard",
            ControllerKind::SoftZeroHybrid => "soft_zero_hybrid",
            ControllerKind::Heuristic => "heuristic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshController {
    Fixed { dt: f64 },
    AlphaGuard { dt_max: f64 },
    SoftZeroHybrid(SoftZeroConfig),
    Heuristic { dt_max: f64 },
}

impl MeshController {
    pub fn kind(&self) -> ControllerKind {
        match self {
            MeshController::Fixed { .. } => ControllerKind::Fixed,
            MeshController::AlphaGuard { .. } => ControllerKind::AlphaGuard,
            MeshController::SoftZeroHybrid(_) => ControllerKind::SoftZeroHybrid,
            MeshController::Heuristic { .. } => ControllerKind::Heuristic,
        }
    }

    pub fn dt_max(&self) -> f64 {
        match self {
            MeshController::Fixed { dt } => *dt,
            MeshController::AlphaGuard { dt_max } | MeshController::Heuristic { dt_max } => *dt_max,
            MeshController::SoftZeroHybrid(cfg) => cfg.dt_max,
        }
    }

    /// Plans the next step from the current state only.
    pub fn plan(&self, x_n: f64, p: &CirParams, tp: &TransformedParams) -> Result<PlannedStep> {
        let stochastic = |dt| PlannedStep {
            dt,
            kind: StepKind::Stochastic,
        };
        match self {
            MeshController::Fixed { dt } => Ok(stochastic(*dt)),
            MeshController::Heuristic { dt_max } => Ok(stochastic(next_dt_heuristic(x_n, *dt_max))),
            MeshController::AlphaGuard { dt_max } => {
                if tp.alpha < 0.0 {
                    next_dt_alpha_guard(x_n, tp.alpha, *dt_max).map(stochastic)
                } else {
                    Ok(stochastic(*dt_max))
                }
            }
            MeshController::SoftZeroHybrid(cfg) => {
                if x_n < cfg.x_zero {
                    Ok(PlannedStep {
                        dt: next_dt_soft_zero(x_n, p, cfg)?,
                        kind: StepKind::SoftZeroOde,
                    })
                } else if tp.alpha < 0.0 {
                    next_dt_alpha_guard(x_n, tp.alpha, cfg.dt_max).map(stochastic)
                } else {
                    Ok(stochastic(cfg.dt_max))
                }
            }
        }
    }
}
