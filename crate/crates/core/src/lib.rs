//! Strong-convergence laboratory for the Cox-Ingersoll-Ross diffusion.
//!
//! The crate provides a Lamperti-splitting integrator with an adaptive
//! soft-zero extension, four comparison schemes, a reproducible fine-grid
//! Brownian path engine that couples every scheme to the same path, and a
//! harness that estimates strong errors and fits convergence rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod experiment;
pub mod mesh;
pub mod model;
pub mod schemes;
pub mod wiener;

pub use error::{CirError, Result};
pub use mesh::{ControllerKind, MeshController, SoftZeroConfig, StepKind};
pub use model::{classify_regime, transform, CirParams, Regime, RegimeKind, TransformedParams};
pub use schemes::{run_trajectory, SchemeId, Trajectory};
pub use wiener::{GridSpec, WienerGrid};
