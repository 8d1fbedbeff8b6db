//! Desk-scale cooperative environments.
//!
//! * [`TeamSpread`]: gridworld where agents must cover all landmarks, with a
//!   dense shaped reward.
//! * [`ClimbGame`]: one-shot coordination game whose optimum is known by
//!   enumeration.
//! * [`GaussianSqueeze`]: one-shot resource game whose reward depends on the
//!   whole team's summed contribution.

mod climb;
mod squeeze;
mod team_spread;

pub use climb::{ClimbGame, CLIMB_ACTIONS, TWO_AGENT_PAYOFF};
pub use squeeze::{GaussianSqueeze, SqueezeMode};
pub use team_spread::TeamSpread;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::DecPomdpSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("joint action has {got} entries, expected {expected}")]
    Arity { got: usize, expected: usize },
    #[error("agent {agent}: action {action} outside 0..{n_actions}")]
    InvalidAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("episode is over; call reset first")]
    EpisodeOver,
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("joint action space has more than {limit} entries")]
    TooLarge { limit: u64 },
    #[error("unknown environment id `{0}` (expected team_spread, climb_game or gaussian_squeeze)")]
    UnknownId(String),
}

/// Per-agent observations plus the centralized global state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub per_agent_obs: Vec<Vec<f64>>,
    pub global_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// The episode reached a terminal state.
    pub terminated: bool,
    /// The episode was cut at its step limit without terminating.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A cooperative environment with a shared scalar reward.
///
/// Implementations are deterministic given their construction seed and the
/// sequence of actions they receive.
pub trait Environment: Send {
    fn spec(&self) -> &DecPomdpSpec;
    fn reset(&mut self) -> Observation;
    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome, EnvError>;
}

pub(crate) fn check_joint_action(joint: &[usize], spec: &DecPomdpSpec) -> Result<(), EnvError> {
    if joint.len() != spec.n_agents {
        return Err(EnvError::Arity {
            got: joint.len(),
            expected: spec.n_agents,
        });
    }
    if let Some((agent, &action)) = joint.iter().enumerate().find(|(_, &a)| a >= spec.n_actions) {
        return Err(EnvError::InvalidAction {
            agent,
            action,
            n_actions: spec.n_actions,
        });
    }
    Ok(())
}

/// A one-shot game small enough to enumerate.
pub trait MatrixGame {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn payoff(&self, joint_action: &[usize]) -> f64;
}

pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Exact argmax over every joint action, visited in lexicographic order so
/// ties resolve to the lexicographically smallest joint action.
pub fn brute_force_optimum<G: MatrixGame + ?Sized>(game: &G) -> Result<(Vec<usize>, f64), EnvError> {
    let (n, a) = (game.n_agents(), game.n_actions());
    let total = (a as u64)
        .checked_pow(n as u32)
        .filter(|&t| t <= BRUTE_FORCE_LIMIT)
        .ok_or(EnvError::TooLarge {
            limit: BRUTE_FORCE_LIMIT,
        })?;
    let mut joint = vec![0; n];
    let mut best = (joint.clone(), game.payoff(&joint));
    for _ in 1..total {
        // odometer increment, last agent fastest
        for slot in joint.iter_mut().rev() {
            *slot += 1;
            if *slot < a {
                break;
            }
            *slot = 0;
        }
        let v = game.payoff(&joint);
        if v > best.1 {
            best = (joint.clone(), v);
        }
    }
    Ok(best)
}

/// Environment selector used by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    TeamSpread,
    ClimbGame,
    GaussianSqueeze,
}

impl FromStr for EnvId {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "team_spread" => Ok(Self::TeamSpread),
            "climb_game" => Ok(Self::ClimbGame),
            "gaussian_squeeze" => Ok(Self::GaussianSqueeze),
            other => Err(EnvError::UnknownId(other.to_string())),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TeamSpread => "team_spread",
            Self::ClimbGame => "climb_game",
            Self::GaussianSqueeze => "gaussian_squeeze",
        })
    }
}

/// Per-environment parameters; fields irrelevant to the chosen env are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub grid_size: usize,
    pub episode_limit: usize,
    /// Gaussian Squeeze per-agent weights; empty means `u_i = i / n`.
    pub squeeze_units: Vec<f64>,
    /// Gaussian Squeeze `(mu, sigma)` modes; empty means the two default modes.
    pub squeeze_modes: Vec<(f64, f64)>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            grid_size: 7,
            episode_limit: 50,
            squeeze_units: Vec::new(),
            squeeze_modes: Vec::new(),
        }
    }
}

pub fn make_env(
    id: EnvId,
    n_agents: usize,
    params: &EnvParams,
    gamma: f64,
    seed: u64,
) -> Result<Box<dyn Environment>, EnvError> {
    Ok(match id {
        EnvId::TeamSpread => Box::new(TeamSpread::new(
            n_agents,
            params.grid_size,
            params.episode_limit,
            gamma,
            seed,
        )?),
        EnvId::ClimbGame => Box::new(ClimbGame::for_agents(n_agents, gamma)?),
        EnvId::GaussianSqueeze => {
            let units = if params.squeeze_units.is_empty() {
                GaussianSqueeze::default_units(n_agents)
            } else {
                params.squeeze_units.clone()
            };
            let modes = if params.squeeze_modes.is_empty() {
                GaussianSqueeze::default_modes(&units)
            } else {
                params
                    .squeeze_modes
                    .iter()
                    .map(|&(mu, sigma)| SqueezeMode { mu, sigma })
                    .collect()
            };
            if units.len() != n_agents {
                return Err(EnvError::Config(format!(
                    "{} squeeze units for {n_agents} agents",
                    units.len()
                )));
            }
            Box::new(GaussianSqueeze::new(units, modes, gamma)?)
        }
    })
}
