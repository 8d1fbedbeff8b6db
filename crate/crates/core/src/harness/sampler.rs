use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, HarnessError, RunConfig, SeedStream};
use crate::envs::{make_env, Environment, Observation};
use crate::mappo::ActorCritic;
use crate::pomdp::{DecPomdpSpec, Trajectory, Transition};

struct Worker {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    obs: Observation,
}

impl Worker {
    /// Runs `steps` environment steps with a stochastic policy and returns the
    /// trajectory pieces, cut at episode ends and at the end of the phase.
    fn run(&mut self, policy: &ActorCritic, steps: usize) -> Result<Vec<Trajectory>, HarnessError> {
        let mut out = Vec::new();
        let mut pending = Vec::new();
        for _ in 0..steps {
            let act = policy.act(&self.obs.per_agent_obs, &self.obs.global_state, false, &mut self.rng)?;
            let outcome = self.env.step(&act.actions)?;
            let next = outcome.observation;
            pending.push(Transition {
                global_state: std::mem::take(&mut self.obs.global_state),
                per_agent_obs: std::mem::take(&mut self.obs.per_agent_obs),
                joint_action: act.actions,
                reward: outcome.reward,
                done: outcome.terminated,
                per_agent_action_logprob: act.logprobs,
                value_estimate: act.value,
            });
            if outcome.terminated {
                out.push(Trajectory::new(std::mem::take(&mut pending), 0.0));
                self.obs = self.env.reset();
            } else if outcome.truncated {
                let bootstrap = policy.value(&next.global_state)?;
                out.push(Trajectory::new(std::mem::take(&mut pending), bootstrap));
                self.obs = self.env.reset();
            } else {
                self.obs = next;
            }
        }
        if !pending.is_empty() {
            let bootstrap = policy.value(&self.obs.global_state)?;
            out.push(Trajectory::new(pending, bootstrap));
        }
        Ok(out)
    }
}

/// A set of environment instances stepped in parallel, one per worker.
///
/// Each worker owns its environment and action RNG, and workers' outputs are
/// concatenated in worker order, so results do not depend on thread timing.
/// Episodes in progress carry over from one phase to the next.
pub struct Sampler {
    workers: Vec<Worker>,
}

impl Sampler {
    pub fn new(config: &RunConfig) -> Result<Self, HarnessError> {
        let r = &config.run;
        let workers = (0..r.num_envs)
            .map(|i| {
                let mut env = make_env(
                    r.env,
                    r.n_agents,
                    &config.env,
                    config.ppo.gamma,
                    derive_seed(r.seed, SeedStream::Env(i)),
                )?;
                let obs = env.reset();
                Ok(Worker {
                    env,
                    rng: ChaCha8Rng::seed_from_u64(derive_seed(r.seed, SeedStream::Actions(i))),
                    obs,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(Self { workers })
    }

    pub fn spec(&self) -> &DecPomdpSpec {
        self.workers[0].env.spec()
    }

    pub fn num_envs(&self) -> usize {
        self.workers.len()
    }

    /// `steps_per_env` steps in every environment.
    pub fn sample(&mut self, policy: &ActorCritic, steps_per_env: usize) -> Result<Vec<Trajectory>, HarnessError> {
        let per_worker: Vec<Result<Vec<Trajectory>, HarnessError>> = self
            .workers
            .par_iter_mut()
            .map(|w| w.run(policy, steps_per_env))
            .collect();
        let mut out = Vec::new();
        for trajs in per_worker {
            out.extend(trajs?);
        }
        Ok(out)
    }
}
