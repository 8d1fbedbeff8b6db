use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::envs::{Environment, Observation};
use crate::mappo::ActorCritic;

/// Anything that maps a team observation to a joint action.
pub trait Policy {
    fn joint_action(&self, obs: &Observation, greedy: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, HarnessError>;
}

impl Policy for ActorCritic {
    fn joint_action(&self, obs: &Observation, greedy: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, HarnessError> {
        if greedy {
            Ok(self.greedy_actions(&obs.per_agent_obs)?)
        } else {
            Ok(self.act(&obs.per_agent_obs, &obs.global_state, false, rng)?.actions)
        }
    }
}

/// Every agent picks uniformly at random, greedy or not.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_agents: usize,
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn joint_action(&self, _obs: &Observation, _greedy: bool, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, HarnessError> {
        Ok((0..self.n_agents).map(|_| rng.random_range(0..self.n_actions)).collect())
    }
}

/// Mean undiscounted return of `episodes` complete episodes.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    env: &mut dyn Environment,
    episodes: usize,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let action = policy.joint_action(&obs, greedy, rng)?;
            let out = env.step(&action)?;
            total += out.reward;
            if out.done() {
                break;
            }
            obs = out.observation;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Median of `values`; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// The last `capacity` evaluation metrics of a run.
#[derive(Debug, Clone)]
pub struct EvalWindow {
    capacity: usize,
    values: VecDeque<f64>,
}

impl EvalWindow {
    pub const FINAL_TEN: usize = 10;

    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            values: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, metric: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(metric);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn median(&self) -> Option<f64> {
        median(&self.values.iter().copied().collect::<Vec<_>>())
    }

    pub fn latest(&self) -> Option<f64> {
        self.values.back().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ClimbGame, TWO_AGENT_PAYOFF};
    use rand::SeedableRng;

    /// Always plays the same joint action.
    struct Fixed(Vec<usize>);

    impl Policy for Fixed {
        fn joint_action(&self, _: &Observation, _: bool, _: &mut ChaCha8Rng) -> Result<Vec<usize>, HarnessError> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn deterministic_policy_scores_its_single_episode_return() {
        let mut env = ClimbGame::two_agent(0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (a, b) in [(0, 0), (1, 0), (2, 2)] {
            let one = evaluate(&Fixed(vec![a, b]), &mut env, 1, true, &mut rng).unwrap();
            let many = evaluate(&Fixed(vec![a, b]), &mut env, 32, true, &mut rng).unwrap();
            assert_eq!(one, TWO_AGENT_PAYOFF[a][b]);
            assert_eq!(many, one);
        }
    }

    #[test]
    fn window_median_of_five_lows_and_five_highs_is_the_midpoint() {
        let mut w = EvalWindow::new(EvalWindow::FINAL_TEN);
        for v in [0.1; 5].into_iter().chain([0.9; 5]) {
            w.push(v);
        }
        assert!((w.median().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn window_keeps_only_the_last_ten() {
        let mut w = EvalWindow::new(EvalWindow::FINAL_TEN);
        for v in 0..25 {
            w.push(v as f64);
        }
        assert_eq!(w.len(), 10);
        assert_eq!(w.median(), Some(19.5));
        assert_eq!(w.latest(), Some(24.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn uniform_play_on_climb_averages_the_payoff_table() {
        let cells: Vec<f64> = TWO_AGENT_PAYOFF.iter().flatten().copied().collect();
        let mean = cells.iter().sum::<f64>() / 9.0;
        assert!((mean - 11.0 / 9.0).abs() < 1e-12);
        let var = cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 9.0;
        let sigma = (var / 100.0).sqrt();
        let mut env = ClimbGame::two_agent(0.99);
        let uniform = UniformPolicy {
            n_agents: 2,
            n_actions: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let metric = evaluate(&uniform, &mut env, 100, false, &mut rng).unwrap();
        assert!((metric - mean).abs() <= 3.0 * sigma, "{metric}");
        let pooled = (1..=20)
            .map(|seed| evaluate(&uniform, &mut env, 100, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap())
            .sum::<f64>()
            / 20.0;
        assert!((pooled - mean).abs() <= 3.0 * sigma / 20f64.sqrt(), "{pooled}");
    }
}
