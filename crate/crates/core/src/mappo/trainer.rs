use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gae::{compute_gae, normalize_advantages};
use super::loss::{entropy, log_softmax, policy_term, value_term};
use super::{ActorCritic, MappoError, PpoConfig, RolloutBuffer};
use crate::nn::{clip_grad_norm, AdamConfig, AdamState, Matrix};
use crate::pomdp::DecPomdpSpec;

/// Flattened training samples, one row per (agent, timestep).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub actor_in: Matrix,
    pub critic_in: Matrix,
    pub actions: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub old_values: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        let rows = |m: &Matrix| {
            let mut data = Vec::with_capacity(idx.len() * m.cols());
            idx.iter().for_each(|&i| data.extend_from_slice(m.row(i)));
            Matrix::from_vec(idx.len(), m.cols(), data)
        };
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect();
        Batch {
            actor_in: rows(&self.actor_in),
            critic_in: rows(&self.critic_in),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            old_logprobs: pick(&self.old_logprobs),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
            old_values: pick(&self.old_values),
        }
    }
}

/// Signed weights of the three loss terms in the objective being minimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub policy: f64,
    /// Multiplies mean entropy; negative to reward exploration.
    pub entropy: f64,
    pub value: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &PpoConfig) -> Self {
        Self {
            policy: 1.0,
            entropy: -cfg.entropy_coef,
            value: cfg.value_coef,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossReport {
    /// Weighted objective whose gradients are reported.
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub actor_grads: Vec<Vec<f64>>,
    pub critic_grads: Vec<Vec<f64>>,
}

/// Batch-mean losses and their exact gradients with respect to every actor
/// and critic parameter.
pub fn loss_and_grads(
    nets: &ActorCritic,
    batch: &Batch,
    cfg: &PpoConfig,
    weights: &LossWeights,
) -> Result<LossReport, MappoError> {
    let b = batch.len();
    if b == 0 {
        return Err(MappoError::Contract("loss over an empty batch".into()));
    }
    let (logits, actor_cache) = nets.actor.forward(&batch.actor_in)?;
    let (values, critic_cache) = nets.critic.forward(&batch.critic_in)?;
    let k = logits.cols();
    let inv = 1.0 / b as f64;

    let mut dlogits = Matrix::zeros(b, k);
    let mut dvalues = Matrix::zeros(b, 1);
    let (mut policy_sum, mut entropy_sum, mut value_sum, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for j in 0..b {
        let lp = log_softmax(logits.row(j));
        let h = entropy(&lp);
        let a = batch.actions[j];
        let pt = policy_term(lp[a], batch.old_logprobs[j], batch.advantages[j], cfg.clip_eps)?;
        policy_sum += pt.loss;
        entropy_sum += h;
        clipped += pt.clipped as usize;
        let row = dlogits.row_mut(j);
        for c in 0..k {
            let p = lp[c].exp();
            let onehot = if c == a { 1.0 } else { 0.0 };
            let g_policy = pt.dlogprob * (onehot - p);
            let g_entropy = -p * (lp[c] + h);
            row[c] = inv * (weights.policy * g_policy + weights.entropy * g_entropy);
        }
        let v = values.as_slice()[j];
        let (vl, dv) = value_term(v, batch.old_values[j], batch.returns[j], cfg.clip_eps, cfg.huber_delta);
        value_sum += vl;
        dvalues.as_mut_slice()[j] = inv * weights.value * dv;
    }
    let actor_grads = nets.actor.backward(&actor_cache, &dlogits)?.params;
    let critic_grads = nets.critic.backward(&critic_cache, &dvalues)?.params;
    let (policy_loss, entropy_mean, value_loss) = (policy_sum * inv, entropy_sum * inv, value_sum * inv);
    Ok(LossReport {
        total: weights.policy * policy_loss + weights.entropy * entropy_mean + weights.value * value_loss,
        policy_loss,
        value_loss,
        entropy: entropy_mean,
        clip_fraction: clipped as f64 * inv,
        actor_grads,
        critic_grads,
    })
}

/// Per-update statistics, averaged over every gradient step of the update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Actor gradient norm before clipping.
    pub grad_norm: f64,
    pub critic_grad_norm: f64,
    pub clip_fraction: f64,
    pub samples: usize,
    /// Set when the batch was too small for advantage normalization.
    pub unnormalized_advantages: bool,
}

impl TrainStats {
    fn is_finite(&self) -> bool {
        [
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.grad_norm,
            self.critic_grad_norm,
            self.clip_fraction,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Owns the networks and optimizers and runs PPO updates on filled buffers.
#[derive(Debug, Clone)]
pub struct MappoTrainer {
    config: PpoConfig,
    nets: ActorCritic,
    actor_opt: AdamState,
    critic_opt: AdamState,
    shuffle_rng: ChaCha8Rng,
    updates: u64,
}

impl MappoTrainer {
    pub fn new(spec: &DecPomdpSpec, config: PpoConfig, init_seed: u64, shuffle_seed: u64) -> Result<Self, MappoError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let nets = ActorCritic::new(spec, &config, &mut rng);
        Ok(Self::from_nets(nets, config, shuffle_seed))
    }

    pub fn from_nets(nets: ActorCritic, config: PpoConfig, shuffle_seed: u64) -> Self {
        let adam = |lr| AdamConfig {
            lr,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        };
        Self {
            actor_opt: AdamState::new(adam(config.lr), nets.actor.params()),
            critic_opt: AdamState::new(adam(config.critic_lr), nets.critic.params()),
            nets,
            config,
            shuffle_rng: ChaCha8Rng::seed_from_u64(shuffle_seed),
            updates: 0,
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn nets(&self) -> &ActorCritic {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut ActorCritic {
        &mut self.nets
    }

    pub fn updates_done(&self) -> u64 {
        self.updates
    }

    /// Applies linear decay: `remaining` is the fraction of training left.
    pub fn set_progress(&mut self, remaining: f64) {
        if self.config.lr_decay {
            let r = remaining.clamp(0.0, 1.0);
            self.actor_opt.set_lr(self.config.lr * r);
            self.critic_opt.set_lr(self.config.critic_lr * r);
        }
    }

    /// Flattens the buffer into training rows with GAE targets computed on
    /// rewards divided by `reward_scale`.
    pub fn build_batch(&self, buffer: &RolloutBuffer, reward_scale: f64) -> Result<Batch, MappoError> {
        let n = buffer.len();
        let mut actor_in = Vec::with_capacity(n * self.nets.actor_input_dim());
        let mut critic_in = Vec::with_capacity(n * self.nets.critic_input_dim());
        let mut batch = Batch {
            actor_in: Matrix::zeros(0, 0),
            critic_in: Matrix::zeros(0, 0),
            actions: Vec::with_capacity(n),
            old_logprobs: Vec::with_capacity(n),
            advantages: Vec::with_capacity(n),
            returns: Vec::with_capacity(n),
            old_values: Vec::with_capacity(n),
        };
        for seg in buffer.segments() {
            let rewards: Vec<f64> = seg.reward_seq.iter().map(|r| r / reward_scale).collect();
            let (adv, ret) = compute_gae(
                &rewards,
                &seg.value_seq,
                seg.bootstrap_value,
                &seg.done_seq,
                self.config.gamma,
                self.config.gae_lambda,
            )?;
            for t in 0..seg.len() {
                self.nets.push_actor_row(&seg.obs_seq[t], seg.agent_id, &mut actor_in);
                self.nets.push_critic_row(&seg.global_state_seq[t], &mut critic_in);
            }
            batch.actions.extend_from_slice(&seg.action_seq);
            batch.old_logprobs.extend_from_slice(&seg.logprob_seq);
            batch.old_values.extend_from_slice(&seg.value_seq);
            batch.advantages.extend(adv);
            batch.returns.extend(ret);
        }
        batch.actor_in = Matrix::from_vec(n, self.nets.actor_input_dim(), actor_in);
        batch.critic_in = Matrix::from_vec(n, self.nets.critic_input_dim(), critic_in);
        Ok(batch)
    }

    /// One PPO update over a full buffer. The buffer is cleared afterward.
    pub fn update(&mut self, buffer: &mut RolloutBuffer) -> Result<TrainStats, MappoError> {
        if buffer.is_empty() {
            return Err(MappoError::Contract("update called on an empty buffer".into()));
        }
        if !buffer.is_full() {
            return Err(MappoError::Contract(format!(
                "update needs a full buffer: {} of {} entries",
                buffer.len(),
                buffer.capacity()
            )));
        }
        let reward_scale = if self.config.normalize_rewards {
            let rewards: Vec<[f64; 1]> = buffer.team_view().flat_map(|s| s.reward_seq.iter().map(|&r| [r])).collect();
            self.nets.reward_norm.update(&rewards);
            self.nets.reward_norm.scale()
        } else {
            1.0
        };
        let mut batch = self.build_batch(buffer, reward_scale)?;
        let (adv, single) = normalize_advantages(&batch.advantages);
        batch.advantages = adv;

        let weights = LossWeights::from_config(&self.config);
        let b = batch.len();
        let mut order: Vec<usize> = (0..b).collect();
        let chunks = self.config.num_minibatches.min(b);
        let mut acc = [0.0f64; 6];
        let mut steps = 0usize;
        for _ in 0..self.config.ppo_epochs {
            if chunks > 1 {
                order.shuffle(&mut self.shuffle_rng);
            }
            for c in 0..chunks {
                let report = if chunks == 1 {
                    loss_and_grads(&self.nets, &batch, &self.config, &weights)?
                } else {
                    let (lo, hi) = (c * b / chunks, (c + 1) * b / chunks);
                    loss_and_grads(&self.nets, &batch.subset(&order[lo..hi]), &self.config, &weights)?
                };
                let LossReport {
                    policy_loss,
                    value_loss,
                    entropy,
                    clip_fraction,
                    mut actor_grads,
                    mut critic_grads,
                    ..
                } = report;
                let actor_norm = clip_grad_norm(&mut actor_grads, self.config.max_grad_norm);
                let critic_norm = clip_grad_norm(&mut critic_grads, self.config.max_grad_norm);
                self.actor_opt.step(self.nets.actor.params_mut(), &actor_grads)?;
                self.critic_opt.step(self.nets.critic.params_mut(), &critic_grads)?;
                for (a, v) in acc
                    .iter_mut()
                    .zip([policy_loss, value_loss, entropy, actor_norm, critic_norm, clip_fraction])
                {
                    *a += v;
                }
                steps += 1;
            }
        }

        if self.config.normalize_features {
            let obs: Vec<&[f64]> = buffer
                .segments()
                .iter()
                .flat_map(|s| s.obs_seq.iter().map(Vec::as_slice))
                .collect();
            self.nets.obs_norm.update(&obs);
            let states: Vec<&[f64]> = buffer
                .team_view()
                .flat_map(|s| s.global_state_seq.iter().map(Vec::as_slice))
                .collect();
            self.nets.state_norm.update(&states);
        }
        buffer.clear();
        self.updates += 1;

        let k = steps as f64;
        let stats = TrainStats {
            policy_loss: acc[0] / k,
            value_loss: acc[1] / k,
            entropy: acc[2] / k,
            grad_norm: acc[3] / k,
            critic_grad_norm: acc[4] / k,
            clip_fraction: acc[5] / k,
            samples: b,
            unnormalized_advantages: single,
        };
        if !stats.is_finite() {
            return Err(MappoError::NonFinite(format!("update statistics {stats:?}")));
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{decompose, Trajectory, Transition};

    fn bandit_spec() -> DecPomdpSpec {
        DecPomdpSpec::new(1, 1, 1, 1, 0.99, 1).unwrap()
    }

    fn bandit_buffer(trainer: &MappoTrainer, episodes: usize, reward: f64) -> RolloutBuffer {
        let spec = bandit_spec();
        let mut buf = RolloutBuffer::new(1, episodes, &[0]);
        for _ in 0..episodes {
            let v = trainer.nets().value(&[0.0]).unwrap();
            let t = Transition {
                global_state: vec![0.0],
                per_agent_obs: vec![vec![0.0]],
                joint_action: vec![0],
                reward,
                done: true,
                per_agent_action_logprob: vec![0.0],
                value_estimate: v,
            };
            let parts = decompose(&Trajectory::new(vec![t], 0.0), &spec).unwrap();
            buf.extend(parts).unwrap();
        }
        buf
    }

    #[test]
    fn value_head_learns_a_constant_bandit_reward() {
        let cfg = PpoConfig {
            normalize_rewards: false,
            ..PpoConfig::default()
        };
        let mut trainer = MappoTrainer::new(&bandit_spec(), cfg, 7, 8).unwrap();
        let reward = 1.0;
        for _ in 0..200 {
            let mut buf = bandit_buffer(&trainer, 8, reward);
            let stats = trainer.update(&mut buf).unwrap();
            assert!(buf.is_empty());
            assert_eq!(stats.entropy, 0.0);
        }
        let v = trainer.nets().value(&[0.0]).unwrap();
        assert!((v - reward).abs() < 0.05, "value {v}");
    }

    #[test]
    fn empty_or_partial_buffers_are_rejected() {
        let mut trainer = MappoTrainer::new(&bandit_spec(), PpoConfig::default(), 0, 0).unwrap();
        let mut empty = RolloutBuffer::new(1, 4, &[0]);
        assert!(matches!(trainer.update(&mut empty), Err(MappoError::Contract(_))));
        let full = bandit_buffer(&trainer, 4, 1.0);
        let mut partial = RolloutBuffer::new(1, 8, &[0]);
        partial.extend(full.segments().iter().cloned()).unwrap();
        assert!(matches!(trainer.update(&mut partial), Err(MappoError::Contract(_))));
    }

    fn random_batch(nets: &ActorCritic, b: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = super::super::gradcheck::miniature_batch(nets, &PpoConfig::default(), b, &mut rng);
        batch.advantages.iter_mut().for_each(|a| *a = 0.0);
        batch
    }

    #[test]
    fn zero_advantages_leave_only_entropy_and_value_gradients() {
        let spec = DecPomdpSpec::new(2, 3, 4, 4, 0.99, 5).unwrap();
        let cfg = PpoConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nets = ActorCritic::new(&spec, &cfg, &mut rng);
        let batch = random_batch(&nets, 16, 4);
        let policy_only = LossWeights {
            policy: 1.0,
            entropy: 0.0,
            value: 0.0,
        };
        let r = loss_and_grads(&nets, &batch, &cfg, &policy_only).unwrap();
        assert!(r.actor_grads.iter().flatten().all(|g| g.abs() < 1e-15));
        assert_eq!(r.policy_loss, 0.0);

        let full = loss_and_grads(&nets, &batch, &cfg, &LossWeights::from_config(&cfg)).unwrap();
        let entropy_only = LossWeights {
            policy: 0.0,
            entropy: -cfg.entropy_coef,
            value: 0.0,
        };
        let e = loss_and_grads(&nets, &batch, &cfg, &entropy_only).unwrap();
        for (a, b) in full.actor_grads.iter().flatten().zip(e.actor_grads.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(full.critic_grads.iter().flatten().any(|g| g.abs() > 0.0));
    }

    #[test]
    fn minibatch_subsets_preserve_rows() {
        let spec = DecPomdpSpec::new(2, 3, 4, 4, 0.99, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nets = ActorCritic::new(&spec, &PpoConfig::default(), &mut rng);
        let batch = random_batch(&nets, 6, 6);
        let sub = batch.subset(&[4, 1]);
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.actor_in.row(0), batch.actor_in.row(4));
        assert_eq!(sub.critic_in.row(1), batch.critic_in.row(1));
        assert_eq!(sub.returns, vec![batch.returns[4], batch.returns[1]]);
    }

    #[test]
    fn updates_are_deterministic_for_a_seed() {
        let run = || {
            let cfg = PpoConfig {
                num_minibatches: 2,
                ..PpoConfig::default()
            };
            let mut trainer = MappoTrainer::new(&bandit_spec(), cfg, 11, 12).unwrap();
            (0..3)
                .map(|i| {
                    let mut buf = bandit_buffer(&trainer, 8, 1.0 + i as f64);
                    trainer.update(&mut buf).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
