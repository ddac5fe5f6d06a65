use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{CirError, Result};
use crate::mesh::{ControllerKind, DEFAULT_RHO};
use crate::model::CirParams;
use crate::schemes::SchemeId;
use crate::wiener::{cells_in, GridSpec};

/// Which functional of the pathwise error is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorFunctional {
    /// `|X_cand(T) − X_ref(T)|`
    #[default]
    Terminal,
    /// `max_n |X_cand(t_n) − X_ref(t_n)|` over the candidate's nodes.
    MaxOverNodes,
}

/// Named grid/ladder presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `dt_ref = 1e-4`, ladder down to `5e-4`.
    Desk,
    /// `dt_ref = 1e-5`, the full six-point ladder down to `1e-4`.
    Paper,
}

impl Preset {
    pub fn dt_ref(self) -> f64 {
        match self {
            Preset::Desk => 1e-4,
            Preset::Paper => 1e-5,
        }
    }

    pub fn ladder(self) -> Vec<f64> {
        match self {
            Preset::Desk => vec![0.1, 0.01, 0.005, 0.001, 0.0005],
            Preset::Paper => vec![0.1, 0.01, 0.005, 0.001, 0.0005, 0.0001],
        }
    }
}

/// Table 2 landmark volatilities for κ = 2, θ = 0.02.
pub const SIGMA_LANDMARKS: [f64; 4] = [0.1633, 0.2, 0.2828, 0.4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: CirParams,
    /// Volatilities to sweep; empty means `params.sigma` only.
    #[serde(default)]
    pub sigma_list: Vec<f64>,
    pub schemes: Vec<SchemeId>,
    /// Overrides of the per-scheme default controller.
    #[serde(default)]
    pub controllers: BTreeMap<SchemeId, ControllerKind>,
    pub dt_ladder: Vec<f64>,
    pub dt_ref: f64,
    pub num_paths: usize,
    pub num_batches: usize,
    pub seed: u64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub error_functional: ErrorFunctional,
    /// Run fixed-step schemes at the mean step realized by the first
    /// adaptive scheme in the list (snapped down to the grid).
    #[serde(default)]
    pub match_avg_dt: bool,
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

impl ExperimentConfig {
    /// Campaign with κ = 2, θ = 0.02, X₀ = 0, T = 1, M = 1000 in 20 batches.
    pub fn preset(preset: Preset) -> Self {
        ExperimentConfig {
            params: CirParams {
                kappa: 2.0,
                theta: 0.02,
                sigma: 0.3,
                x0: 0.0,
                horizon: 1.0,
            },
            sigma_list: vec![0.1, 0.1633, 0.2, 0.2828, 0.3, 0.4, 0.6, 0.8],
            schemes: vec![
                SchemeId::SplitSoftZero,
                SchemeId::SplitLie,
                SchemeId::MilsteinTrunc,
                SchemeId::FullyTruncEuler,
                SchemeId::DriftImplicit,
                SchemeId::ProjectedEuler,
            ],
            controllers: BTreeMap::new(),
            dt_ladder: preset.ladder(),
            dt_ref: preset.dt_ref(),
            num_paths: 1000,
            num_batches: 20,
            seed: 2021,
            rho: DEFAULT_RHO,
            output: None,
            error_functional: ErrorFunctional::Terminal,
            match_avg_dt: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| CirError::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        if self.sigma_list.is_empty() {
            vec![self.params.sigma]
        } else {
            self.sigma_list.clone()
        }
    }

    pub fn controller_for(&self, scheme: SchemeId) -> ControllerKind {
        self.controllers
            .get(&scheme)
            .copied()
            .unwrap_or_else(|| scheme.default_controller())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.dt_ref, self.params.horizon)
    }

    /// Hard constraints. Violations are configuration errors.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CirError::InvalidConfig(m));
        self.params.validate()?;
        for &s in &self.sigmas() {
            self.params.with_sigma(s).validate()?;
        }
        self.grid_spec()?;
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if self.dt_ladder.is_empty() {
            return bad("dt_ladder is empty".into());
        }
        let cap = 1.0f64.min(1.0 / self.params.kappa);
        for &dt in &self.dt_ladder {
            if cells_in(dt, self.dt_ref).is_none() {
                return bad(format!(
                    "dt_max {dt} is not an integer multiple of dt_ref {}",
                    self.dt_ref
                ));
            }
            if dt > cap * (1.0 + 1e-12) {
                return bad(format!("dt_max {dt} exceeds min(1, 1/kappa) = {cap}"));
            }
            if dt > self.params.horizon * (1.0 + 1e-12) {
                return bad(format!("dt_max {dt} exceeds the horizon"));
            }
        }
        if self.num_batches < 2 {
            return bad("num_batches must be at least 2".into());
        }
        if self.num_paths == 0 || !self.num_paths.is_multiple_of(self.num_batches) {
            return bad(format!(
                "num_paths {} must be a positive multiple of num_batches {}",
                self.num_paths, self.num_batches
            ));
        }
        if !(self.rho > 1.0) {
            return bad(format!("rho must be > 1, got {}", self.rho));
        }
        Ok(())
    }

    /// Soft constraints, reported but not enforced: the tighter step bound
    /// `dt_max < min{1, 1/(2κ), 1/(4κ|1−κ| + θκ²)}` under which the
    /// untransformed L2 bound is proved.
    pub fn warnings(&self) -> Vec<String> {
        let k = self.params.kappa;
        let bound = 1.0f64
            .min(1.0 / (2.0 * k))
            .min(1.0 / (4.0 * k * (1.0 - k).abs() + self.params.theta * k * k));
        self.dt_ladder
            .iter()
            .filter(|&&dt| dt >= bound)
            .map(|dt| format!("dt_max {dt} is not below the L2 theory bound {bound:.6}"))
            .collect()
    }

    /// Order-stable hash of the configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::preset(Preset::Desk).validate().unwrap();
        ExperimentConfig::preset(Preset::Paper).validate().unwrap();
    }

    #[test]
    fn rejects_off_grid_ladder() {
        let mut c = ExperimentConfig::preset(Preset::Desk);
        c.dt_ladder.push(0.00015);
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_large_dt() {
        let mut c = ExperimentConfig::preset(Preset::Desk);
        c.dt_ladder = vec![0.6];
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_uneven_batches() {
        let mut c = ExperimentConfig::preset(Preset::Desk);
        c.num_paths = 1001;
        assert!(c.validate().is_err());
        c.num_paths = 1000;
        c.num_batches = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_roundtrip_and_defaults() {
        let text = r#"{
            "params": {"kappa": 2.0, "theta": 0.02, "sigma": 0.3, "x0": 0.0},
            "schemes": ["SplitLie", "MilsteinTrunc"],
            "controllers": {"SplitLie": "heuristic"},
            "dt_ladder": [0.1, 0.01],
            "dt_ref": 0.001,
            "num_paths": 40,
            "num_batches": 4,
            "seed": 1
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.params.horizon, 1.0);
        assert_eq!(c.rho, 2.0);
        assert_eq!(c.sigmas(), vec![0.3]);
        assert_eq!(
            c.controller_for(SchemeId::SplitLie),
            ControllerKind::Heuristic
        );
        assert_eq!(
            c.controller_for(SchemeId::MilsteinTrunc),
            ControllerKind::Fixed
        );
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"params": {"kappa": 2.0, "theta": 0.02, "sigma": 0.3, "x0": 0.0},
            "schemes": ["SplitLie"], "dt_ladder": [0.1], "dt_ref": 0.001,
            "num_paths": 4, "num_batches": 2, "seed": 1, "bogus": 3}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn warns_above_theory_bound() {
        let mut c = ExperimentConfig::preset(Preset::Desk);
        c.dt_ladder = vec![0.2, 0.01];
        let w = c.warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("0.2"));
    }
}
