//! Dec-POMDP abstractions shared by environments, trainers and schedulers.
//!
//! A [`Trajectory`] is one contiguous stretch of a single episode as seen by
//! the whole team. Training never consumes it directly; it is first projected
//! into one [`AgentTrajectory`] per agent. Every projection carries the full
//! global-state and shared-reward sequences, so the centralized critic sees
//! the same input whichever agents end up in the training neighborhood.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PomdpError {
    #[error("invalid Dec-POMDP spec: {0}")]
    InvalidSpec(String),
    #[error("transition {step}: {field} has {got} entries, expected {expected}")]
    Arity {
        step: usize,
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("transition {step}: {field} has width {got}, expected {expected}")]
    Width {
        step: usize,
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("trajectory is empty")]
    Empty,
    #[error("trajectory has {len} transitions, episode limit is {limit}")]
    TooLong { len: usize, limit: usize },
    #[error("transition {0} is terminal but is not the last one")]
    EarlyDone(usize),
    #[error("agent id {id} out of range for {n} agents")]
    AgentOutOfRange { id: usize, n: usize },
}

/// Static description of a cooperative Dec-POMDP.
///
/// Environments require at least two agents; the type itself accepts a single
/// agent so that degenerate single-agent problems can reuse the machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct DecPomdpSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub global_state_dim: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub episode_limit: usize,
}

impl DecPomdpSpec {
    pub fn new(
        n_agents: usize,
        obs_dim: usize,
        global_state_dim: usize,
        n_actions: usize,
        gamma: f64,
        episode_limit: usize,
    ) -> Result<Self, PomdpError> {
        let spec = Self {
            n_agents,
            obs_dim,
            global_state_dim,
            n_actions,
            gamma,
            episode_limit,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PomdpError> {
        let bad = |msg: String| Err(PomdpError::InvalidSpec(msg));
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.obs_dim == 0 || self.global_state_dim == 0 {
            return bad("observation and global state widths must be positive".into());
        }
        if self.n_actions == 0 {
            return bad("action cardinality must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.episode_limit == 0 {
            return bad("episode_limit must be positive".into());
        }
        Ok(())
    }
}

/// One joint step of the team.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub global_state: Vec<f64>,
    pub per_agent_obs: Vec<Vec<f64>>,
    pub joint_action: Vec<usize>,
    /// Shared team reward.
    pub reward: f64,
    /// True only when the episode terminated (not when it was truncated).
    pub done: bool,
    pub per_agent_action_logprob: Vec<f64>,
    /// Centralized critic estimate of `global_state`.
    pub value_estimate: f64,
}

impl Transition {
    fn check(&self, step: usize, spec: &DecPomdpSpec) -> Result<(), PomdpError> {
        let n = spec.n_agents;
        let arity = |field, got| {
            if got == n {
                Ok(())
            } else {
                Err(PomdpError::Arity {
                    step,
                    field,
                    got,
                    expected: n,
                })
            }
        };
        arity("per_agent_obs", self.per_agent_obs.len())?;
        arity("joint_action", self.joint_action.len())?;
        arity("per_agent_action_logprob", self.per_agent_action_logprob.len())?;
        if self.global_state.len() != spec.global_state_dim {
            return Err(PomdpError::Width {
                step,
                field: "global_state",
                got: self.global_state.len(),
                expected: spec.global_state_dim,
            });
        }
        if let Some(obs) = self.per_agent_obs.iter().find(|o| o.len() != spec.obs_dim) {
            return Err(PomdpError::Width {
                step,
                field: "per_agent_obs",
                got: obs.len(),
                expected: spec.obs_dim,
            });
        }
        Ok(())
    }
}

/// A contiguous piece of one episode.
///
/// A trajectory ends either on a terminal transition (`bootstrap_value` is 0),
/// or because the episode hit its limit or the sampling phase ended, in which
/// case `bootstrap_value` is the critic's estimate of the state that follows
/// the last transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
    pub bootstrap_value: f64,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>, bootstrap_value: f64) -> Self {
        let episode_return = transitions.iter().map(|t| t.reward).sum();
        let bootstrap_value = match transitions.last() {
            Some(t) if t.done => 0.0,
            _ => bootstrap_value,
        };
        Self {
            transitions,
            episode_return,
            bootstrap_value,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    pub fn validate(&self, spec: &DecPomdpSpec) -> Result<(), PomdpError> {
        if self.transitions.is_empty() {
            return Err(PomdpError::Empty);
        }
        if self.transitions.len() > spec.episode_limit {
            return Err(PomdpError::TooLong {
                len: self.transitions.len(),
                limit: spec.episode_limit,
            });
        }
        let last = self.transitions.len() - 1;
        for (step, t) in self.transitions.iter().enumerate() {
            t.check(step, spec)?;
            if t.done && step != last {
                return Err(PomdpError::EarlyDone(step));
            }
        }
        Ok(())
    }
}

/// One agent's view of a [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub agent_id: usize,
    pub obs_seq: Vec<Vec<f64>>,
    pub action_seq: Vec<usize>,
    pub logprob_seq: Vec<f64>,
    pub reward_seq: Vec<f64>,
    pub value_seq: Vec<f64>,
    pub done_seq: Vec<bool>,
    pub global_state_seq: Vec<Vec<f64>>,
    pub bootstrap_value: f64,
}

impl AgentTrajectory {
    pub fn len(&self) -> usize {
        self.action_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action_seq.is_empty()
    }

    /// Projects agent `agent_id` out of `traj`. The caller has validated `traj`.
    pub(crate) fn project(traj: &Trajectory, agent_id: usize) -> Self {
        let ts = &traj.transitions;
        Self {
            agent_id,
            obs_seq: ts.iter().map(|t| t.per_agent_obs[agent_id].clone()).collect(),
            action_seq: ts.iter().map(|t| t.joint_action[agent_id]).collect(),
            logprob_seq: ts.iter().map(|t| t.per_agent_action_logprob[agent_id]).collect(),
            reward_seq: ts.iter().map(|t| t.reward).collect(),
            value_seq: ts.iter().map(|t| t.value_estimate).collect(),
            done_seq: ts.iter().map(|t| t.done).collect(),
            global_state_seq: ts.iter().map(|t| t.global_state.clone()).collect(),
            bootstrap_value: traj.bootstrap_value,
        }
    }
}

/// Splits a team trajectory into the `n` per-agent trajectories.
pub fn decompose(traj: &Trajectory, spec: &DecPomdpSpec) -> Result<Vec<AgentTrajectory>, PomdpError> {
    traj.validate(spec)?;
    Ok((0..spec.n_agents)
        .map(|i| AgentTrajectory::project(traj, i))
        .collect())
}

/// Inverse of [`decompose`]: zips per-agent views (ordered by agent id) back
/// into a team trajectory.
pub fn recompose(parts: &[AgentTrajectory]) -> Result<Trajectory, PomdpError> {
    let first = parts.first().ok_or(PomdpError::Empty)?;
    let len = first.len();
    for (i, p) in parts.iter().enumerate() {
        if p.agent_id != i {
            return Err(PomdpError::AgentOutOfRange {
                id: p.agent_id,
                n: parts.len(),
            });
        }
        if p.len() != len {
            return Err(PomdpError::Arity {
                step: 0,
                field: "agent trajectory length",
                got: p.len(),
                expected: len,
            });
        }
    }
    let transitions = (0..len)
        .map(|t| Transition {
            global_state: first.global_state_seq[t].clone(),
            per_agent_obs: parts.iter().map(|p| p.obs_seq[t].clone()).collect(),
            joint_action: parts.iter().map(|p| p.action_seq[t]).collect(),
            reward: first.reward_seq[t],
            done: first.done_seq[t],
            per_agent_action_logprob: parts.iter().map(|p| p.logprob_seq[t]).collect(),
            value_estimate: first.value_seq[t],
        })
        .collect();
    Ok(Trajectory::new(transitions, first.bootstrap_value))
}

/// `sum_t gamma^t * r_t`, with `t` starting at zero.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A random but structurally valid trajectory.
    pub fn random_trajectory(spec: &DecPomdpSpec, len: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.n_agents;
        let transitions = (0..len)
            .map(|t| Transition {
                global_state: (0..spec.global_state_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                per_agent_obs: (0..n)
                    .map(|_| (0..spec.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
                joint_action: (0..n).map(|_| rng.random_range(0..spec.n_actions)).collect(),
                reward: rng.random_range(-2.0..2.0),
                done: t + 1 == len && rng.random_bool(0.5),
                per_agent_action_logprob: (0..n).map(|_| -rng.random_range(0.0..3.0)).collect(),
                value_estimate: rng.random_range(-1.0..1.0),
            })
            .collect();
        Trajectory::new(transitions, rng.random_range(-1.0..1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::testing::random_trajectory;
    use super::*;
    use proptest::prelude::*;

    fn spec(n: usize) -> DecPomdpSpec {
        DecPomdpSpec::new(n, 3, 5, 4, 0.99, 50).unwrap()
    }

    fn one_step(joint: Vec<usize>) -> Trajectory {
        let n = joint.len();
        Trajectory::new(
            vec![Transition {
                global_state: vec![0.5; 5],
                per_agent_obs: (0..n).map(|i| vec![i as f64; 3]).collect(),
                joint_action: joint,
                reward: 2.0,
                done: true,
                per_agent_action_logprob: vec![-0.7; n],
                value_estimate: 0.1,
            }],
            9.0,
        )
    }

    #[test]
    fn two_agents_one_step() {
        let parts = decompose(&one_step(vec![0, 1]), &spec(2)).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].action_seq, vec![0]);
        assert_eq!(parts[1].action_seq, vec![1]);
        assert_eq!(parts[0].reward_seq, parts[1].reward_seq);
        // terminal trajectories never bootstrap
        assert_eq!(parts[0].bootstrap_value, 0.0);
    }

    #[test]
    fn single_agent_is_identity() {
        let traj = one_step(vec![3]);
        let parts = decompose(&traj, &spec(1)).unwrap();
        assert_eq!(parts.len(), 1);
        let p = &parts[0];
        let t = &traj.transitions[0];
        assert_eq!(p.obs_seq[0], t.per_agent_obs[0]);
        assert_eq!(p.action_seq[0], t.joint_action[0]);
        assert_eq!(p.global_state_seq[0], t.global_state);
        assert_eq!(p.reward_seq[0], t.reward);
        assert_eq!(recompose(&parts).unwrap(), traj);
    }

    #[test]
    fn three_agents_five_steps_match_projection_oracle() {
        let spec = spec(3);
        let mut traj = random_trajectory(&spec, 5, 11);
        traj.transitions[4].done = true;
        let parts = decompose(&traj, &spec).unwrap();
        assert_eq!(parts.len(), 3);
        for (i, p) in parts.iter().enumerate() {
            assert_eq!(p.len(), 5);
            for (t, tr) in traj.transitions.iter().enumerate() {
                assert_eq!(p.agent_id, i);
                assert_eq!(p.obs_seq[t], tr.per_agent_obs[i]);
                assert_eq!(p.action_seq[t], tr.joint_action[i]);
                assert_eq!(p.logprob_seq[t].to_bits(), tr.per_agent_action_logprob[i].to_bits());
                assert_eq!(p.reward_seq[t].to_bits(), tr.reward.to_bits());
                assert_eq!(p.value_seq[t].to_bits(), tr.value_estimate.to_bits());
                assert_eq!(p.done_seq[t], tr.done);
                assert_eq!(p.global_state_seq[t], tr.global_state);
            }
        }
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let traj = one_step(vec![0, 1, 2]);
        assert!(matches!(
            decompose(&traj, &spec(2)),
            Err(PomdpError::Arity { field: "per_agent_obs", .. })
        ));
        let mut bad = one_step(vec![0, 1]);
        bad.transitions[0].global_state.pop();
        assert!(matches!(decompose(&bad, &spec(2)), Err(PomdpError::Width { .. })));
        let empty = Trajectory::new(vec![], 0.0);
        assert_eq!(decompose(&empty, &spec(2)), Err(PomdpError::Empty));
    }

    #[test]
    fn early_done_is_rejected() {
        let spec = spec(2);
        let mut traj = random_trajectory(&spec, 3, 2);
        traj.transitions[0].done = true;
        assert_eq!(traj.validate(&spec), Err(PomdpError::EarlyDone(0)));
    }

    #[test]
    fn spec_validation() {
        assert!(DecPomdpSpec::new(2, 1, 1, 2, 0.0, 10).is_err());
        assert!(DecPomdpSpec::new(2, 1, 1, 2, 1.5, 10).is_err());
        assert!(DecPomdpSpec::new(0, 1, 1, 2, 0.9, 10).is_err());
        assert!(DecPomdpSpec::new(2, 0, 1, 2, 0.9, 10).is_err());
        assert!(DecPomdpSpec::new(2, 1, 1, 2, 1.0, 10).is_ok());
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 1.0), 3.0);
        assert_eq!(discounted_return(&[1.0, 0.0, 0.0], 0.5), 1.0);
        // 1 + 0.9 * 2 + 0.81 * 3, summed term by term
        let oracle: f64 = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(t, r)| 0.9f64.powi(t as i32) * r)
            .sum();
        assert!((discounted_return(&[1.0, 2.0, 3.0], 0.9) - oracle).abs() < 1e-12);
        assert!((oracle - 5.23).abs() < 1e-12);
        assert_eq!(discounted_return(&[], 0.9), 0.0);
    }

    proptest! {
        #[test]
        fn decompose_then_recompose_is_lossless(n in 1usize..5, len in 1usize..12, seed in any::<u64>()) {
            let spec = spec(n);
            let traj = random_trajectory(&spec, len, seed);
            let parts = decompose(&traj, &spec).unwrap();
            prop_assert_eq!(recompose(&parts).unwrap(), traj.clone());
            for p in &parts {
                prop_assert_eq!(&p.reward_seq, &parts[0].reward_seq);
            }
            let total: f64 = traj.rewards().sum();
            prop_assert!((discounted_return(&parts[0].reward_seq, 1.0) - traj.episode_return).abs() < 1e-9 * (1.0 + total.abs()));
        }
    }
}
