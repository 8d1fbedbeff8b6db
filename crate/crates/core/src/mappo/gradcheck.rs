//! Central finite-difference checks of the trainer's analytic gradients.
//!
//! The loss has kinks (ratio clipping, value clipping, the Huber switch, the
//! max between clipped and unclipped value errors). Miniature batches are
//! drawn so every sample sits well away from them, which keeps the
//! difference quotient on one smooth piece.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loss::{huber, log_softmax};
use super::{loss_and_grads, ActorCritic, Batch, LossWeights, MappoError, PpoConfig};
use crate::nn::{Matrix, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossComponent {
    Policy,
    Entropy,
    Value,
    Total,
}

impl LossComponent {
    pub const ALL: [LossComponent; 4] = [Self::Policy, Self::Entropy, Self::Value, Self::Total];

    fn weights(self, cfg: &PpoConfig) -> LossWeights {
        let unit = |p, e, v| LossWeights {
            policy: p,
            entropy: e,
            value: v,
        };
        match self {
            Self::Policy => unit(1.0, 0.0, 0.0),
            Self::Entropy => unit(0.0, 1.0, 0.0),
            Self::Value => unit(0.0, 0.0, 1.0),
            Self::Total => LossWeights::from_config(cfg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    Actor,
    Critic,
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub component: LossComponent,
    pub network: Network,
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<&Probe> {
        self.probes.iter().filter(|p| !(p.rel_err <= tol)).collect()
    }
}

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is (near) zero are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Replaces every weight and bias with a fresh Gaussian draw scaled by
/// `1/sqrt(fan_in)`, so gradients are well away from zero in every layer.
pub fn randomize_params<R: Rng + ?Sized>(net: &mut Mlp, rng: &mut R) {
    let dims = net.dims().to_vec();
    for (i, t) in net.params_mut().iter_mut().enumerate() {
        let scale = 1.0 / (dims[i / 2] as f64).sqrt();
        t.data_mut().iter_mut().for_each(|w| *w = scale * gaussian(rng));
    }
}

fn pick_band<R: Rng + ?Sized>(bands: &[(f64, f64)], rng: &mut R) -> f64 {
    let (lo, hi) = bands[rng.random_range(0..bands.len())];
    rng.random_range(lo..hi)
}

/// Random samples for `nets` that stay clear of every loss kink.
pub fn miniature_batch<R: Rng + ?Sized>(nets: &ActorCritic, cfg: &PpoConfig, size: usize, rng: &mut R) -> Batch {
    let eps = cfg.clip_eps;
    let delta = cfg.huber_delta;
    let (ain, cin) = (nets.actor_input_dim(), nets.critic_input_dim());
    let obs_dim = ain - nets.n_agents();
    let mut actor_data = Vec::with_capacity(size * ain);
    for _ in 0..size {
        actor_data.extend((0..obs_dim).map(|_| gaussian(rng)));
        let agent = rng.random_range(0..nets.n_agents());
        actor_data.extend((0..nets.n_agents()).map(|i| if i == agent { 1.0 } else { 0.0 }));
    }
    let actor_in = Matrix::from_vec(size, ain, actor_data);
    let critic_in = Matrix::from_vec(size, cin, (0..size * cin).map(|_| gaussian(rng)).collect());
    let logits = nets.actor.predict(&actor_in).expect("actor input width");
    let values = nets.critic.predict(&critic_in).expect("critic input width");

    let margin = 0.05;
    let ratio_bands = [
        (0.5, 1.0 - eps - margin),
        (1.0 - eps + margin, 1.0 + eps - margin),
        (1.0 + eps + margin, 1.6),
    ];
    let step_bands = [
        (-3.0 * eps, -eps - margin),
        (-eps + margin, eps - margin),
        (eps + margin, 3.0 * eps),
    ];
    let mut batch = Batch {
        actor_in,
        critic_in,
        actions: Vec::with_capacity(size),
        old_logprobs: Vec::with_capacity(size),
        advantages: Vec::with_capacity(size),
        returns: Vec::with_capacity(size),
        old_values: Vec::with_capacity(size),
    };
    for j in 0..size {
        let k = logits.cols();
        let a = rng.random_range(0..k);
        let lp = log_softmax(logits.row(j))[a];
        let ratio = pick_band(&ratio_bands, rng);
        batch.actions.push(a);
        batch.old_logprobs.push(lp - ratio.ln());
        batch.advantages.push(gaussian(rng));

        let v = values.as_slice()[j];
        let step = pick_band(&step_bands, rng);
        let old = v - step;
        let clipped = old + step.clamp(-eps, eps);
        let target = loop {
            let mag = if rng.random_bool(0.2) {
                rng.random_range(1.5 * delta..2.0 * delta)
            } else {
                rng.random_range(0.05 * delta..0.5 * delta)
            };
            let t = if rng.random_bool(0.5) { v + mag } else { v - mag };
            let (e_raw, e_clip) = ((v - t).abs(), (clipped - t).abs());
            let near_switch = (e_raw - delta).abs() < margin || (e_clip - delta).abs() < margin;
            let near_tie = step.abs() >= eps && (huber(e_raw, delta) - huber(e_clip, delta)).abs() < margin;
            if !near_switch && !near_tie {
                break t;
            }
        };
        batch.old_values.push(old);
        batch.returns.push(target);
    }
    batch
}

fn network_mut(nets: &mut ActorCritic, which: Network) -> &mut Mlp {
    match which {
        Network::Actor => &mut nets.actor,
        Network::Critic => &mut nets.critic,
    }
}

/// Runs `probes` random coordinate checks, cycling through the loss
/// components. Policy and entropy probe the actor, value probes the critic,
/// and the total objective probes both.
pub fn check_gradients<R: Rng + ?Sized>(
    nets: &ActorCritic,
    batch: &Batch,
    cfg: &PpoConfig,
    probes: usize,
    rng: &mut R,
) -> Result<GradCheckReport, MappoError> {
    let mut report = GradCheckReport::default();
    for i in 0..probes {
        let component = LossComponent::ALL[i % LossComponent::ALL.len()];
        let weights = component.weights(cfg);
        let network = match component {
            LossComponent::Policy | LossComponent::Entropy => Network::Actor,
            LossComponent::Value => Network::Critic,
            LossComponent::Total => {
                if rng.random_bool(0.5) {
                    Network::Actor
                } else {
                    Network::Critic
                }
            }
        };
        let analytic_all = loss_and_grads(nets, batch, cfg, &weights)?;
        let net = match network {
            Network::Actor => &nets.actor,
            Network::Critic => &nets.critic,
        };
        let tensor = rng.random_range(0..net.params().len());
        let index = rng.random_range(0..net.params()[tensor].data().len());
        let analytic = match network {
            Network::Actor => analytic_all.actor_grads[tensor][index],
            Network::Critic => analytic_all.critic_grads[tensor][index],
        };

        let mut probe_nets = nets.clone();
        let eval = |nets: &mut ActorCritic, x: f64| -> Result<f64, MappoError> {
            network_mut(nets, network).params_mut()[tensor].data_mut()[index] = x;
            Ok(loss_and_grads(nets, batch, cfg, &weights)?.total)
        };
        let x0 = net.params()[tensor].data()[index];
        let plus = eval(&mut probe_nets, x0 + FD_STEP)?;
        let minus = eval(&mut probe_nets, x0 - FD_STEP)?;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        report.probes.push(Probe {
            component,
            network,
            tensor,
            index,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(report)
}
