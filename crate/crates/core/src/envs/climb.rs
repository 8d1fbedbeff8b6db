use super::{check_joint_action, EnvError, Environment, MatrixGame, Observation, StepOutcome};
use crate::pomdp::DecPomdpSpec;

pub const CLIMB_ACTIONS: usize = 3;

/// Two-agent payoff table, row = agent 0, column = agent 1. Coordinated
/// play pays 11 / 7 / 5; every miscoordination pays at most 0. Against a
/// uniform partner, action 0 already has the best expected payoff (5/3 vs 1),
/// so gradient learners are not trapped by the penalties.
pub const TWO_AGENT_PAYOFF: [[f64; 3]; 3] = [[11.0, -4.0, -2.0], [-4.0, 7.0, 0.0], [-2.0, 0.0, 5.0]];

/// Stateless one-shot coordination game with three actions per agent.
///
/// Observations are a single constant zero feature; the global state is a
/// zero vector of width `n`.
#[derive(Debug, Clone)]
pub struct ClimbGame {
    spec: DecPomdpSpec,
    payoff: Vec<f64>,
    finished: bool,
}

impl ClimbGame {
    /// `payoff` is indexed lexicographically with agent 0 most significant
    /// and must have a unique maximum.
    pub fn new(n_agents: usize, payoff: Vec<f64>, gamma: f64) -> Result<Self, EnvError> {
        if n_agents < 2 {
            return Err(EnvError::Config("climb_game needs at least 2 agents".into()));
        }
        let entries = CLIMB_ACTIONS
            .checked_pow(n_agents as u32)
            .ok_or_else(|| EnvError::Config("too many agents".into()))?;
        if payoff.len() != entries {
            return Err(EnvError::Config(format!(
                "payoff has {} entries, expected 3^{n_agents} = {entries}",
                payoff.len()
            )));
        }
        if payoff.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Config("payoff entries must be finite".into()));
        }
        let max = payoff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if payoff.iter().filter(|&&v| v == max).count() != 1 {
            return Err(EnvError::Config("payoff maximum must be unique".into()));
        }
        let spec = DecPomdpSpec::new(n_agents, 1, n_agents, CLIMB_ACTIONS, gamma, 1)
            .map_err(|e| EnvError::Config(e.to_string()))?;
        Ok(Self {
            spec,
            payoff,
            finished: false,
        })
    }

    pub fn two_agent(gamma: f64) -> Self {
        let payoff = TWO_AGENT_PAYOFF.iter().flatten().copied().collect();
        Self::new(2, payoff, gamma).expect("fixed table is valid")
    }

    /// The fixed two-agent table for `n = 2`. For larger teams, all agents
    /// choosing the same action pays the two-agent diagonal, and any other
    /// joint action pays the mean of the two-agent table over all pairs.
    pub fn for_agents(n_agents: usize, gamma: f64) -> Result<Self, EnvError> {
        if n_agents == 2 {
            return Ok(Self::two_agent(gamma));
        }
        if n_agents < 2 || n_agents > 12 {
            return Err(EnvError::Config(format!("climb_game supports 2..=12 agents, got {n_agents}")));
        }
        let entries = CLIMB_ACTIONS.pow(n_agents as u32);
        let payoff = (0..entries)
            .map(|idx| {
                let joint = decode(idx, n_agents);
                if joint.iter().all(|&a| a == joint[0]) {
                    TWO_AGENT_PAYOFF[joint[0]][joint[0]]
                } else {
                    let mut sum = 0.0;
                    let mut pairs = 0.0;
                    for i in 0..n_agents {
                        for j in i + 1..n_agents {
                            sum += TWO_AGENT_PAYOFF[joint[i]][joint[j]];
                            pairs += 1.0;
                        }
                    }
                    sum / pairs
                }
            })
            .collect();
        Self::new(n_agents, payoff, gamma)
    }

    pub fn payoff_table(&self) -> &[f64] {
        &self.payoff
    }

    fn observe(&self) -> Observation {
        Observation {
            per_agent_obs: vec![vec![0.0]; self.spec.n_agents],
            global_state: vec![0.0; self.spec.global_state_dim],
        }
    }
}

fn decode(mut idx: usize, n: usize) -> Vec<usize> {
    let mut joint = vec![0; n];
    for slot in joint.iter_mut().rev() {
        *slot = idx % CLIMB_ACTIONS;
        idx /= CLIMB_ACTIONS;
    }
    joint
}

impl MatrixGame for ClimbGame {
    fn n_agents(&self) -> usize {
        self.spec.n_agents
    }

    fn n_actions(&self) -> usize {
        CLIMB_ACTIONS
    }

    fn payoff(&self, joint_action: &[usize]) -> f64 {
        let idx = joint_action.iter().fold(0, |acc, &a| acc * CLIMB_ACTIONS + a);
        self.payoff[idx]
    }
}

impl Environment for ClimbGame {
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
