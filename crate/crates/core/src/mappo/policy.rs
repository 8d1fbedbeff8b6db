use rand::Rng;

use super::loss::log_softmax;
use super::{MappoError, PpoConfig, RunningNormalizer};
use crate::nn::{Matrix, Mlp, NnError, Tensor};
use crate::pomdp::DecPomdpSpec;

/// Actor input is the normalized local observation followed by a one-hot
/// agent id; the critic sees only the normalized global state, so its input
/// width never depends on which agents are being trained.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    n_agents: usize,
    obs_dim: usize,
    state_dim: usize,
    n_actions: usize,
    pub actor: Mlp,
    pub critic: Mlp,
    pub(crate) obs_norm: RunningNormalizer,
    pub(crate) state_norm: RunningNormalizer,
    pub(crate) reward_norm: RunningNormalizer,
    normalize_features: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub value: f64,
}

fn layer_dims(input: usize, output: usize, cfg: &PpoConfig) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(cfg.hidden_size, cfg.hidden_layers));
    dims.push(output);
    dims
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(spec: &DecPomdpSpec, cfg: &PpoConfig, rng: &mut R) -> Self {
        let actor = Mlp::new(&layer_dims(spec.obs_dim + spec.n_agents, spec.n_actions, cfg), 0.01, rng);
        let critic = Mlp::new(&layer_dims(spec.global_state_dim, 1, cfg), 1.0, rng);
        Self {
            n_agents: spec.n_agents,
            obs_dim: spec.obs_dim,
            state_dim: spec.global_state_dim,
            n_actions: spec.n_actions,
            actor,
            critic,
            obs_norm: RunningNormalizer::new(spec.obs_dim),
            state_norm: RunningNormalizer::new(spec.global_state_dim),
            reward_norm: RunningNormalizer::new(1),
            normalize_features: cfg.normalize_features,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn actor_input_dim(&self) -> usize {
        self.obs_dim + self.n_agents
    }

    pub fn critic_input_dim(&self) -> usize {
        self.state_dim
    }

    pub fn reward_normalizer(&self) -> &RunningNormalizer {
        &self.reward_norm
    }

    pub(crate) fn push_actor_row(&self, obs: &[f64], agent: usize, out: &mut Vec<f64>) {
        if self.normalize_features {
            self.obs_norm.normalize_into(obs, out);
        } else {
            out.extend_from_slice(obs);
        }
        out.extend((0..self.n_agents).map(|i| if i == agent { 1.0 } else { 0.0 }));
    }

    pub(crate) fn push_critic_row(&self, state: &[f64], out: &mut Vec<f64>) {
        if self.normalize_features {
            self.state_norm.normalize_into(state, out);
        } else {
            out.extend_from_slice(state);
        }
    }

    fn check_obs(&self, obs: &[Vec<f64>], state: &[f64]) -> Result<(), MappoError> {
        if obs.len() != self.n_agents || obs.iter().any(|o| o.len() != self.obs_dim) || state.len() != self.state_dim {
            return Err(MappoError::Contract(format!(
                "observation shape mismatch: {} obs, state width {}",
                obs.len(),
                state.len()
            )));
        }
        Ok(())
    }

    fn team_log_probs(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MappoError> {
        let mut data = Vec::with_capacity(self.n_agents * self.actor_input_dim());
        for (i, o) in obs.iter().enumerate() {
            self.push_actor_row(o, i, &mut data);
        }
        let logits = self
            .actor
            .predict(&Matrix::from_vec(self.n_agents, self.actor_input_dim(), data))?;
        (0..self.n_agents)
            .map(|i| {
                let lp = log_softmax(logits.row(i));
                if lp.iter().all(|l| l.is_finite() || *l == f64::NEG_INFINITY) && lp.iter().any(|l| l.is_finite()) {
                    Ok(lp)
                } else {
                    Err(MappoError::NonFinite(format!("policy logits for agent {i}")))
                }
            })
            .collect()
    }

    pub fn value(&self, state: &[f64]) -> Result<f64, MappoError> {
        let mut row = Vec::with_capacity(self.state_dim);
        self.push_critic_row(state, &mut row);
        let v = self.critic.predict(&Matrix::from_vec(1, self.state_dim, row))?;
        Ok(v.as_slice()[0])
    }

    /// Samples a joint action (or takes each agent's most likely action when
    /// `greedy`) and evaluates the critic on `state`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[Vec<f64>],
        state: &[f64],
        greedy: bool,
        rng: &mut R,
    ) -> Result<ActOutput, MappoError> {
        self.check_obs(obs, state)?;
        let log_probs = self.team_log_probs(obs)?;
        let mut actions = Vec::with_capacity(self.n_agents);
        let mut logprobs = Vec::with_capacity(self.n_agents);
        for lp in &log_probs {
            let a = if greedy { argmax(lp) } else { sample(lp, rng) };
            actions.push(a);
            logprobs.push(lp[a]);
        }
        Ok(ActOutput {
            actions,
            logprobs,
            value: self.value(state)?,
        })
    }

    /// Greedy joint action without evaluating the critic.
    pub fn greedy_actions(&self, obs: &[Vec<f64>]) -> Result<Vec<usize>, MappoError> {
        Ok(self.team_log_probs(obs)?.iter().map(|lp| argmax(lp)).collect())
    }

    /// All weights and normalizer statistics, with unique names.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (prefix, net) in [("actor", &self.actor), ("critic", &self.critic)] {
            out.extend(
                net.params()
                    .iter()
                    .map(|t| Tensor::new(format!("{prefix}.{}", t.name()), t.matrix().clone())),
            );
        }
        for (prefix, norm) in [("obs_norm", &self.obs_norm), ("state_norm", &self.state_norm), ("reward_norm", &self.reward_norm)] {
            let d = norm.dim();
            out.push(Tensor::new(format!("{prefix}.count"), Matrix::from_vec(1, 1, vec![norm.count()])));
            out.push(Tensor::new(format!("{prefix}.mean"), Matrix::from_vec(1, d, norm.mean().to_vec())));
            out.push(Tensor::new(format!("{prefix}.var"), Matrix::from_vec(1, d, norm.var().to_vec())));
        }
        out
    }

    /// Inverse of [`ActorCritic::to_tensors`] for a network of the same shape.
    pub fn load_tensors(&mut self, loaded: &[Tensor]) -> Result<(), NnError> {
        let mut mine = self.to_tensors();
        crate::nn::checkpoint::restore(&mut mine, loaded)?;
        let mut it = mine.into_iter();
        for net in [&mut self.actor, &mut self.critic] {
            for p in net.params_mut() {
                let src = it.next().expect("tensor count matches");
                p.data_mut().copy_from_slice(src.data());
            }
        }
        for norm in [&mut self.obs_norm, &mut self.state_norm, &mut self.reward_norm] {
            let count = it.next().expect("count").data()[0];
            let mean = it.next().expect("mean").data().to_vec();
            let var = it.next().expect("var").data().to_vec();
            *norm = RunningNormalizer::from_parts(count, mean, var);
        }
        Ok(())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sample<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the total mass; fall back to the last
    // action that has any probability
    log_probs.iter().rposition(|l| l.is_finite()).unwrap_or(0)
}
