//! Run configuration: a JSON document with `system`, `integrator`,
//! `constraint`, `mixing` and `output` blocks.

use std::path::{Path, PathBuf};

use obsbundle_core::constraints::RegularizationParams;
use obsbundle_core::integrator::{ConstraintMode, IntegratorConfig};
use obsbundle_core::poisson::{BracketBackend, MixingModel};
use obsbundle_core::systems::{
    circle_system, oscillator_system, toda_system, BuiltinSystem, CircleParams, OscillatorParams, TodaSystemParams,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Compiled-in system registry, selected by the `builtin` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum SystemConfig {
    Oscillator(OscillatorParams),
    CircleConstraint(CircleParams),
    Toda(TodaSystemParams),
}

impl SystemConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SystemConfig::Oscillator(_) => "oscillator",
            SystemConfig::CircleConstraint(_) => "circle_constraint",
            SystemConfig::Toda(_) => "toda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorBlock {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub tol_geo: f64,
    pub t_final: f64,
    pub adapt: bool,
    pub max_projection_iters: usize,
    pub tol_constraint: f64,
    pub backend: BracketBackend,
    pub growth_factor: f64,
    pub symplectic_check: bool,
}

impl Default for IntegratorBlock {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self {
            h0: d.h0,
            h_min: d.h_min,
            h_max: d.h_max,
            tol_geo: d.tol_geo,
            t_final: d.t_final,
            adapt: d.adapt,
            max_projection_iters: d.max_projection_iters,
            tol_constraint: d.tol_constraint,
            backend: d.backend,
            growth_factor: d.growth_factor,
            symplectic_check: d.symplectic_check,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintBlock {
    pub mode: ConstraintMode,
    pub first_class_hint: bool,
    pub alpha_dissipation: f64,
    pub eps_reg: f64,
    pub mu_floor: Option<f64>,
    pub t_char: f64,
}

impl Default for ConstraintBlock {
    fn default() -> Self {
        let r = RegularizationParams::default();
        Self {
            mode: ConstraintMode::default(),
            first_class_hint: false,
            alpha_dissipation: r.alpha_dissipation,
            eps_reg: r.eps_reg,
            mu_floor: r.mu_floor,
            t_char: r.t_char,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingChoice {
    #[default]
    Zero,
    Curvature,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectory: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub integrator: IntegratorBlock,
    #[serde(default)]
    pub constraint: ConstraintBlock,
    #[serde(default)]
    pub mixing: MixingChoice,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        digest_of(&self.to_json())
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        let i = &self.integrator;
        let c = &self.constraint;
        IntegratorConfig {
            h0: i.h0,
            h_min: i.h_min,
            h_max: i.h_max,
            tol_geo: i.tol_geo,
            t_final: i.t_final,
            adapt: i.adapt,
            max_projection_iters: i.max_projection_iters,
            tol_constraint: i.tol_constraint,
            regularization: RegularizationParams {
                alpha_dissipation: c.alpha_dissipation,
                eps_reg: c.eps_reg,
                mu_floor: c.mu_floor,
                t_char: c.t_char,
            },
            backend: i.backend,
            growth_factor: i.growth_factor,
            constraint_mode: c.mode,
            first_class_hint: c.first_class_hint,
            symplectic_check: i.symplectic_check,
        }
    }

    pub fn build_system(&self) -> Result<BuiltinSystem, CliError> {
        let mut sys = match &self.system {
            SystemConfig::Oscillator(p) => oscillator_system(p),
            SystemConfig::CircleConstraint(p) => circle_system(p),
            SystemConfig::Toda(p) => toda_system(p),
        }
        .map_err(|e| CliError::Config(format!("system: {e}")))?;
        if self.mixing == MixingChoice::Curvature {
            sys.spec.mixing = MixingModel::Curvature;
        }
        Ok(sys)
    }

    /// Checks every numeric field before anything runs.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = self.integrator_config();
        cfg.validate().map_err(|e| CliError::Config(format!("integrator: {e}")))?;
        if !(cfg.t_final > 0.0) {
            return Err(CliError::Config(format!("integrator: t_final must be > 0, got {}", cfg.t_final)));
        }
        self.build_system()?;
        Ok(())
    }
}

pub fn digest_of(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
