//! TOML run configuration.
//!
//! ```toml
//! protocol = "path-a"
//! delta = -1.0
//! eps = 0.002564102564102564
//! nbar_i = 0.005
//! nbar_f = 1.0
//! n_atoms = 50
//! horizon = 1e4
//! dt = 0.05
//! trajectories = 100
//! seed = 1
//! engine = "full"
//! ```
//!
//! Path B takes the final detuning from `delta_f`; its final pump follows
//! from the fixed laser amplitude, so `nbar_f` must then be omitted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Engine, ProtocolKind, QuenchProtocol};
use crate::observables::Pooling;
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolKind,
    pub delta: f64,
    pub eps: f64,
    pub nbar_i: f64,
    #[serde(default)]
    pub nbar_f: Option<f64>,
    #[serde(default)]
    pub delta_f: Option<f64>,
    pub n_atoms: usize,
    pub horizon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    pub trajectories: usize,
    pub seed: u64,
    #[serde(default = "default_engine")]
    pub engine: Engine,
    #[serde(default)]
    pub mf_samples: Option<usize>,
    #[serde(default)]
    pub pooling: Pooling,
}

fn default_engine() -> Engine {
    Engine::Full
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_protocol(&self) -> Result<QuenchProtocol> {
        let mut p = match self.protocol {
            ProtocolKind::PathA => {
                if self.delta_f.is_some() {
                    return Err(Error::Config("path-a takes no delta_f".into()));
                }
                let nbar_f = self
                    .nbar_f
                    .ok_or_else(|| Error::Config("path-a needs nbar_f".into()))?;
                QuenchProtocol::path_a(self.delta, self.eps, self.nbar_i, nbar_f, self.n_atoms)?
            }
            ProtocolKind::PathB => {
                if self.nbar_f.is_some() {
                    return Err(Error::Config(
                        "path-b derives the final pump; remove nbar_f".into(),
                    ));
                }
                let delta_f = self
                    .delta_f
                    .ok_or_else(|| Error::Config("path-b needs delta_f".into()))?;
                QuenchProtocol::path_b(self.delta, delta_f, self.eps, self.nbar_i, self.n_atoms)?
            }
            ProtocolKind::None => {
                if self.delta_f.is_some() || self.nbar_f.is_some_and(|v| v != self.nbar_i) {
                    return Err(Error::Config("protocol 'none' keeps the initial parameters".into()));
                }
                QuenchProtocol::null(ModelParams::new(self.delta, self.eps, self.nbar_i, self.n_atoms)?)
            }
        };
        p.engine = self.engine;
        p.horizon = self.horizon;
        if let Some(dt) = self.dt {
            p.dt = dt;
        }
        p.trajectories = self.trajectories;
        p.seed = self.seed;
        if let Some(m) = self.mf_samples {
            p.mf_samples = m;
        }
        p.pooling = self.pooling;
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PATH_A: &str = r#"
protocol = "path-a"
delta = -1.0
eps = 0.002564102564102564
nbar_i = 0.005
nbar_f = 1.0
n_atoms = 50
horizon = 1e4
dt = 0.05
trajectories = 100
seed = 1
engine = "full"
"#;

    #[test]
    fn parses_path_a() {
        let c = RunConfig::from_toml(PATH_A).unwrap();
        let p = c.to_protocol().unwrap();
        assert_eq!(p.kind, ProtocolKind::PathA);
        assert_eq!(p.final_params.nbar, 1.0);
        assert_eq!(p.initial.nbar, 0.005);
        assert_eq!(p.trajectories, 100);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{PATH_A}\nu0 = 0.05\n");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn path_b_needs_final_detuning() {
        let text = PATH_A
            .replace("path-a", "path-b")
            .replace("nbar_f = 1.0", "delta_f = -4.0")
            .replace("nbar_i = 0.005", "nbar_i = 1.0");
        let p = RunConfig::from_toml(&text).unwrap().to_protocol().unwrap();
        assert_eq!(p.final_params.delta, -4.0);
        assert!(p.final_params.nbar < 1.0);
        let missing = PATH_A.replace("path-a", "path-b");
        assert!(RunConfig::from_toml(&missing).unwrap().to_protocol().is_err());
    }

    #[test]
    fn rejects_positive_detuning() {
        let text = PATH_A.replace("delta = -1.0", "delta = 1.0");
        let err = RunConfig::from_toml(&text).unwrap().to_protocol().unwrap_err();
        assert!(!err.is_physics());
    }
}
