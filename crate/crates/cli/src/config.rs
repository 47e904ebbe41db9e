//! Experiment configuration.
//!
//! A config file is a JSON object whose keys are dotted paths into
//! [`RunConfig`], for example `{"mpc.l": 8, "params.b_q": -0.04, "seed": 3}`.
//! Keys are applied on top of a baseline and command-line flags are applied
//! last.

use std::path::{Path, PathBuf};

use gridmpc::harness::LoopConfig;
use gridmpc::plant::GridParams;
use gridmpc::problems::{ControllerKind, MpcConfig};
use gridmpc::scenario::{ExcitationConfig, GenParams};
use gridmpc::solver::SolverSettings;
use gridmpc::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: GridParams,
    pub mpc: MpcConfig,
    pub solver: SolverSettings,
    pub gen: GenParams,
    pub excitation: ExcitationConfig,
    /// Scenario seed, used when no profile file is given.
    pub seed: u64,
    /// Closed-loop steps `T`, or profile length for `gen-scenario`.
    pub steps: usize,
    pub x0: f64,
    pub delta0: bool,
    pub controller: ControllerKind,
    pub profile: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lc = LoopConfig::default();
        Self {
            params: lc.params,
            mpc: lc.mpc,
            solver: lc.solver,
            gen: GenParams::default(),
            excitation: ExcitationConfig::default(),
            seed: 1,
            steps: lc.steps,
            x0: lc.x0,
            delta0: lc.delta0,
            controller: ControllerKind::Reference,
            profile: None,
            dataset: None,
        }
    }
}

/// Named baselines selectable with `--preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Four weeks at 30-minute resolution with the published grid constants,
    /// `L = 10`, `ñ = 1`, `N = 185`, `c_α = 5`, `c_β = 1e4`.
    Paper,
}

impl Preset {
    pub fn config(self) -> RunConfig {
        match self {
            Preset::Paper => RunConfig {
                params: GridParams::default(),
                mpc: MpcConfig {
                    l: 10,
                    n_tilde: 1,
                    gamma: None,
                    c_alpha: 5.0,
                    c_beta: 1e4,
                    ..MpcConfig::default()
                },
                excitation: ExcitationConfig {
                    n: 185,
                    ..ExcitationConfig::default()
                },
                steps: 4 * 7 * 48,
                ..RunConfig::default()
            },
        }
    }
}

impl RunConfig {
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            params: self.params,
            mpc: self.mpc,
            solver: self.solver,
            steps: self.steps,
            x0: self.x0,
            delta0: self.delta0,
        }
    }

    /// Applies a JSON object of dotted keys on top of `self`.
    pub fn with_overrides(&self, overrides: &Map<String, Value>) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for (key, value) in overrides {
            set_dotted(&mut tree, key, value.clone())?;
        }
        Ok(serde_json::from_value(tree)?)
    }

    /// Parses a config file's text and applies it on top of `self`.
    pub fn with_json(&self, text: &str) -> Result<Self> {
        match serde_json::from_str::<Value>(text)? {
            Value::Object(map) => self.with_overrides(&map),
            _ => Err(Error::Parameter("config file must hold a JSON object".into())),
        }
    }

    pub fn with_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.with_json(&text)
    }
}

fn set_dotted(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::Parameter(format!("unknown config key `{key}`"));
    let mut node = tree;
    for part in key.split('.') {
        node = node.as_object_mut().and_then(|m| m.get_mut(part)).ok_or_else(unknown)?;
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_reach_nested_fields() {
        let cfg = RunConfig::default()
            .with_json(r#"{"mpc.l": 6, "params.b_q": -0.04, "seed": 9, "mpc.gamma": 0.8}"#)
            .unwrap();
        assert_eq!(cfg.mpc.l, 6);
        assert_eq!(cfg.params.b_q, -0.04);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mpc.gamma, Some(0.8));
        assert_eq!(cfg.params.c0, 1.0);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        let base = RunConfig::default();
        assert!(matches!(
            base.with_json(r#"{"mpc.horizon": 3}"#),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(base.with_json(r#"{"seed.x": 3}"#), Err(Error::Parameter(_))));
        assert!(base.with_json(r#"{"mpc.l": "ten"}"#).is_err());
        assert!(base.with_json("[1, 2]").is_err());
    }

    #[test]
    fn controller_names_are_kebab_case() {
        let cfg = RunConfig::default()
            .with_json(r#"{"controller": "hammerstein-dd"}"#)
            .unwrap();
        assert_eq!(cfg.controller, ControllerKind::HammersteinDd);
    }

    #[test]
    fn paper_preset_simulates_four_weeks() {
        let cfg = Preset::Paper.config();
        assert_eq!(cfg.steps, 1344);
        assert_eq!(cfg.excitation.n, 185);
        assert_eq!((cfg.mpc.l, cfg.mpc.n_tilde), (10, 1));
    }

    #[test]
    fn empty_object_is_identity() {
        let base = Preset::Paper.config();
        assert_eq!(base.with_json("{}").unwrap(), base);
    }
}
