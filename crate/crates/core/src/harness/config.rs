use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::envs::{EnvId, EnvParams};
use crate::lns::SchedulerKind;
use crate::mappo::PpoConfig;

/// The shipped default configuration file.
pub const DEFAULT_CONFIG: &str = include_str!("../../configs/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalProtocol {
    /// Greedy episodes per evaluation; the reported metric is the median of
    /// the last ten evaluations.
    MedianFinalTen,
    /// Mean return over 100 rollouts.
    Mean100,
}

impl EvalProtocol {
    pub fn default_episodes(self) -> usize {
        match self {
            Self::MedianFinalTen => 32,
            Self::Mean100 => 100,
        }
    }
}

impl std::str::FromStr for EvalProtocol {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median_final_ten" => Ok(Self::MedianFinalTen),
            "mean_100" => Ok(Self::Mean100),
            other => Err(HarnessError::Config(format!(
                "unknown eval protocol `{other}` (expected median_final_ten or mean_100)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub env: EnvId,
    pub algo: SchedulerKind,
    pub n_agents: usize,
    /// Neighborhood size; defaults to half the team (2 for the adaptive scheduler).
    pub m: Option<usize>,
    /// Number of LNS iterations.
    pub nt: usize,
    pub total_env_steps: usize,
    pub num_envs: usize,
    pub buffer_length: usize,
    pub seed: u64,
    pub eval_protocol: EvalProtocol,
    /// Episodes per evaluation; defaults to the protocol's count.
    pub eval_episodes: Option<usize>,
    pub eval_greedy: bool,
    /// Evaluate after every update instead of once per LNS iteration.
    pub eval_every_update: bool,
    /// Explicit adaptive size schedule.
    pub alns_sizes: Option<Vec<usize>>,
    /// Block permutation for BLNS; random when absent.
    pub blns_permutation: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            env: EnvId::TeamSpread,
            algo: SchedulerKind::Full,
            n_agents: 8,
            m: None,
            nt: 8,
            total_env_steps: 512_000,
            num_envs: 8,
            buffer_length: 400,
            seed: 1,
            eval_protocol: EvalProtocol::MedianFinalTen,
            eval_episodes: None,
            eval_greedy: true,
            eval_every_update: false,
            alns_sizes: None,
            blns_permutation: None,
            out: None,
            checkpoint: None,
        }
    }
}

/// Everything needed for one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvParams,
    pub ppo: PpoConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn phase_steps(&self) -> usize {
        self.run.num_envs * self.run.buffer_length
    }

    /// Sample-then-update rounds in the whole run.
    pub fn total_rounds(&self) -> usize {
        self.run.total_env_steps / self.phase_steps().max(1)
    }

    pub fn eval_episodes(&self) -> usize {
        self.run
            .eval_episodes
            .unwrap_or_else(|| self.run.eval_protocol.default_episodes())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let r = &self.run;
        if r.num_envs == 0 || r.buffer_length == 0 {
            return bad("num_envs and buffer_length must be positive".into());
        }
        if r.total_env_steps == 0 || r.total_env_steps % self.phase_steps() != 0 {
            return bad(format!(
                "total_env_steps {} is not a whole number of sampling phases of {} x {} steps",
                r.total_env_steps, r.num_envs, r.buffer_length
            ));
        }
        if r.nt == 0 || r.nt > self.total_rounds() {
            return bad(format!(
                "{} LNS iterations need at least as many training rounds, have {}",
                r.nt,
                self.total_rounds()
            ));
        }
        if self.eval_episodes() == 0 {
            return bad("eval_episodes must be positive".into());
        }
        self.ppo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
