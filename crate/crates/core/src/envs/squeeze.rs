use super::{check_joint_action, EnvError, Environment, MatrixGame, Observation, StepOutcome};
use crate::pomdp::DecPomdpSpec;

pub const SQUEEZE_ACTIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezeMode {
    pub mu: f64,
    pub sigma: f64,
}

/// Multi-domain Gaussian Squeeze.
///
/// Each agent picks a contribution level `a_i` in `0..10`. With
/// `x = sum_i u_i * a_i`, the shared reward is
/// `sum_k x * exp(-(x - mu_k)^2 / sigma_k^2)`. The reward only depends on the
/// team total, so no subset of agents can find the peak on its own.
#[derive(Debug, Clone)]
pub struct GaussianSqueeze {
    spec: DecPomdpSpec,
    units: Vec<f64>,
    modes: Vec<SqueezeMode>,
    finished: bool,
}

impl GaussianSqueeze {
    pub fn new(units: Vec<f64>, modes: Vec<SqueezeMode>, gamma: f64) -> Result<Self, EnvError> {
        if units.is_empty() {
            return Err(EnvError::Config("gaussian_squeeze needs at least one agent".into()));
        }
        if units.iter().any(|&u| !(u > 0.0 && u <= 1.0)) {
            return Err(EnvError::Config("unit weights must lie in (0, 1]".into()));
        }
        if modes.is_empty() || modes.iter().any(|m| !m.mu.is_finite() || !(m.sigma > 0.0)) {
            return Err(EnvError::Config("need at least one mode with finite mu and sigma > 0".into()));
        }
        let n = units.len();
        let spec = DecPomdpSpec::new(n, 1, n, SQUEEZE_ACTIONS, gamma, 1)
            .map_err(|e| EnvError::Config(e.to_string()))?;
        Ok(Self {
            spec,
            units,
            modes,
            finished: false,
        })
    }

    /// `u_i = i / n` for `i = 1..=n`.
    pub fn default_units(n: usize) -> Vec<f64> {
        (1..=n).map(|i| i as f64 / n as f64).collect()
    }

    /// A narrow mode at a quarter of the reachable range and a wider, more
    /// lucrative one at three quarters.
    pub fn default_modes(units: &[f64]) -> Vec<SqueezeMode> {
        let reach = units.iter().sum::<f64>() * (SQUEEZE_ACTIONS - 1) as f64;
        vec![
            SqueezeMode {
                mu: 0.25 * reach,
                sigma: 1.0,
            },
            SqueezeMode {
                mu: 0.75 * reach,
                sigma: 2.0,
            },
        ]
    }

    /// Default instance for `n` agents.
    pub fn with_defaults(n: usize, gamma: f64) -> Result<Self, EnvError> {
        let units = Self::default_units(n);
        let modes = Self::default_modes(&units);
        Self::new(units, modes, gamma)
    }

    pub fn units(&self) -> &[f64] {
        &self.units
    }

    pub fn modes(&self) -> &[SqueezeMode] {
        &self.modes
    }

    pub fn total_contribution(&self, joint_action: &[usize]) -> f64 {
        self.units.iter().zip(joint_action).map(|(u, &a)| u * a as f64).sum()
    }

    pub fn reward_at(&self, x: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| x * (-(x - m.mu).powi(2) / (m.sigma * m.sigma)).exp())
            .sum()
    }

    fn observe(&self) -> Observation {
        Observation {
            per_agent_obs: vec![vec![0.0]; self.spec.n_agents],
            global_state: vec![0.0; self.spec.global_state_dim],
        }
    }
}

impl MatrixGame for GaussianSqueeze {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        SQUEEZE_ACTIONS
    }

    fn payoff(&self, joint_action: &[usize]) -> f64 {
        self.reward_at(self.total_contribution(joint_action))
    }
}

impl Environment for GaussianSqueeze {
    fn spec(&self) -> &DecPomdpSpec {
        &self.spec
    }

    fn reset(&mut self) -> Observation {
        self.finished = false;
        self.observe()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeOver);
        }
        check_joint_action(joint_action, &self.spec)?;
        self.finished = true;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: MatrixGame::payoff(self, joint_action),
            terminated: true,
            truncated: false,
        })
    }
}
