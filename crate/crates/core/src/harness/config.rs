use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::EvalOptions;
use crate::dataset::ExpertConfig;
use crate::diffusion::{PolicyConfig, TrainConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

/// Environment variable naming the config file when no flag is given.
pub const CONFIG_ENV: &str = "CAPSULE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Size of the broad pretraining sweep.
    pub pretrain_demos: usize,
    pub pretrain_seed: u64,
    /// First seed of the fine-tuning demos; eval seeds start at 0.
    pub finetune_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            pretrain_demos: 1000,
            pretrain_seed: 100_000,
            finetune_seed: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub env: EnvConfig,
    pub expert: ExpertConfig,
    pub policy: PolicyConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalOptions,
    pub corpus: CorpusConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            expert: ExpertConfig::default(),
            policy: PolicyConfig::default(),
            pretrain: TrainConfig {
                steps: 6000,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                steps: 4000,
                ..TrainConfig::default()
            },
            eval: EvalOptions::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, else the file named by [`CONFIG_ENV`], else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p));
                }
                Self::from_toml(&fs::read_to_string(&p)?)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        let e = &self.env;
        if !(e.control_hz > 0.0 && e.physics_dt > 0.0 && e.physics_dt <= 1.0 / e.control_hz) {
            return Err(Error::Config("need control_hz > 0 and 0 < physics_dt <= 1/control_hz".into()));
        }
        if self.eval.replan == 0 || self.eval.replan > self.policy.chunk_len {
            return Err(Error::Config("eval.replan must be in 1..=policy.chunk_len".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// `<root>/<command>-<first 8 hex digits of the hash>`
    pub fn run_dir(&self, root: &Path, command: &str) -> PathBuf {
        root.join(format!("{command}-{}", &self.hash()[..8]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_override() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let p = Config::from_toml("[finetune]\nsteps = 7\n").unwrap();
        assert_eq!(p.finetune.steps, 7);
        assert_eq!(p.finetune.batch, c.finetune.batch);
        assert_ne!(p.hash(), c.hash());
    }

    #[test]
    fn run_dir_carries_hash_prefix() {
        let c = Config::default();
        let d = c.run_dir(Path::new("runs"), "eval");
        assert_eq!(d, Path::new("runs").join(format!("eval-{}", &c.hash()[..8])));
        assert!(Config::from_toml("[eval]\nreplan = 0\n").is_err());
    }
}
