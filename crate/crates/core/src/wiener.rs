//! Fine-grid Brownian paths shared by every scheme.
//!
//! Increments come from a counter-based stream: cell `i` of path `p` under
//! seed `s` always consumes ChaCha8 words `4i..4i+4` of stream `p` keyed by
//! `s`, and turns them into one standard normal. Generating a path
//! sequentially or cell by cell therefore yields the same bits, and
//! neither the path count nor the thread count can change them.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CirError, Result};

const SNAP_RTOL: f64 = 1e-9;

/// Fine step and horizon of a Wiener grid. The horizon must be an integer
/// multiple of `dt_ref`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dt_ref: f64,
    pub horizon: f64,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(dt_ref: f64, horizon: f64) -> Result<Self> {
        if !(dt_ref.is_finite() && dt_ref > 0.0) {
            return Err(CirError::InvalidConfig(format!(
                "dt_ref must be > 0, got {dt_ref}"
            )));
        }
        if !(horizon.is_finite() && horizon >= dt_ref) {
            return Err(CirError::InvalidConfig(format!(
                "horizon {horizon} must be >= dt_ref {dt_ref}"
            )));
        }
        let cells = cells_in(horizon, dt_ref).ok_or_else(|| {
            CirError::InvalidConfig(format!(
                "horizon {horizon} is not an integer multiple of dt_ref {dt_ref}"
            ))
        })?;
        Ok(GridSpec {
            dt_ref,
            horizon,
            cells,
        })
    }

    /// Time of grid node `i`. The last node is the horizon exactly.
    pub fn time_of(&self, i: usize) -> f64 {
        if i >= self.cells {
            self.horizon
        } else {
            i as f64 * self.dt_ref
        }
    }
}

/// Number of `dt` cells in `span` if `span` is an integer multiple of `dt`.
pub fn cells_in(span: f64, dt: f64) -> Option<usize> {
    let r = span / dt;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= SNAP_RTOL * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapMode {
    Floor,
    Ceil,
}

/// Converts a time to a grid index, tolerating floating-point jitter of
/// `1e-9·dt_ref`, and never exceeding `max_index`.
pub fn snap_to_grid(t_target: f64, dt_ref: f64, mode: SnapMode, max_index: usize) -> usize {
    if t_target <= 0.0 {
        return 0;
    }
    let r = t_target / dt_ref;
    let k = match mode {
        SnapMode::Floor => (r + SNAP_RTOL).floor(),
        SnapMode::Ceil => (r - SNAP_RTOL).ceil(),
    };
    if k >= max_index as f64 {
        max_index
    } else {
        k.max(0.0) as usize
    }
}

/// Standard normal for a single cell, computed from its own counter window.
pub fn cell_normal(seed: u64, path_index: u64, cell: usize) -> f64 {
    let mut rng = stream(seed, path_index);
    rng.set_word_pos(4 * cell as u128);
    normal_from(&mut rng)
}

fn stream(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

// Box-Muller, cosine branch only, so every cell consumes exactly two words.
fn normal_from(rng: &mut ChaCha8Rng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let a = rng.next_u64();
    let b = rng.next_u64();
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Immutable Brownian path sampled on a uniform fine grid.
#[derive(Debug, Clone)]
pub struct WienerGrid {
    spec: GridSpec,
    seed: u64,
    path_index: u64,
    increments: Vec<f64>,
}

impl WienerGrid {
    pub fn generate(seed: u64, path_index: u64, spec: GridSpec) -> Self {
        let mut rng = stream(seed, path_index);
        let sd = spec.dt_ref.sqrt();
        let increments = (0..spec.cells)
            .map(|_| sd * normal_from(&mut rng))
            .collect();
        WienerGrid {
            spec,
            seed,
            path_index,
            increments,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dt_ref(&self) -> f64 {
        self.spec.dt_ref
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn cells(&self) -> usize {
        self.increments.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_j) − W(t_i)`: the sum of fine increments with indices in `[i, j)`.
    pub fn increment(&self, i: usize, j: usize) -> Result<f64> {
        if i > j || j > self.increments.len() {
            return Err(CirError::IndexOutOfRange {
                start: i,
                end: j,
                len: self.increments.len(),
            });
        }
        Ok(self.increments[i..j].iter().sum())
    }

    /// Cumulative path `W(t_0..=t_N)` with `W(0) = 0`.
    pub fn path(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }

    pub fn snap(&self, t: f64, mode: SnapMode) -> usize {
        snap_to_grid(t, self.spec.dt_ref, mode, self.spec.cells)
    }
}
