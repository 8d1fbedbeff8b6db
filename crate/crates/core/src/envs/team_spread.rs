use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_joint_action, EnvError, Environment, Observation, StepOutcome};
use crate::pomdp::DecPomdpSpec;

/// Action encoding: 0 stay, 1 up, 2 down, 3 left, 4 right. Moves off the
/// grid are clamped.
pub const N_MOVES: usize = 5;

/// `n` agents must cover `n` landmarks on a square grid.
///
/// Observation of agent `i`: `[x_i, y_i, lx_0, ly_0, ..., lx_{n-1}, ly_{n-1}]`
/// (own position and every landmark, but not the other agents). The global
/// state concatenates all agents' observations in agent order.
///
/// Reward after each move: `-(1/n) * sum_l min_a manhattan(a, l)`, plus `1`
/// when every landmark is occupied, which also terminates the episode.
#[derive(Debug, Clone)]
pub struct TeamSpread {
    spec: DecPomdpSpec,
    grid_size: usize,
    agents: Vec<(usize, usize)>,
    landmarks: Vec<(usize, usize)>,
    step_count: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl TeamSpread {
    pub fn new(
        n_agents: usize,
        grid_size: usize,
        episode_limit: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self, EnvError> {
        if n_agents < 2 {
            return Err(EnvError::Config("team_spread needs at least 2 agents".into()));
        }
        if grid_size < 2 || n_agents > grid_size * grid_size {
            return Err(EnvError::Config(format!(
                "{n_agents} landmarks do not fit on a {grid_size}x{grid_size} grid"
            )));
        }
        let obs_dim = 2 + 2 * n_agents;
        let spec = DecPomdpSpec::new(n_agents, obs_dim, n_agents * obs_dim, N_MOVES, gamma, episode_limit)
            .map_err(|e| EnvError::Config(e.to_string()))?;
        let mut env = Self {
            spec,
            grid_size,
            agents: Vec::new(),
            landmarks: Vec::new(),
            step_count: 0,
            finished: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        Ok(env)
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn agent_positions(&self) -> &[(usize, usize)] {
        &self.agents
    }

    pub fn landmark_positions(&self) -> &[(usize, usize)] {
        &self.landmarks
    }

    /// Overrides the current layout (tests and scripted scenarios).
    pub fn set_layout(&mut self, agents: Vec<(usize, usize)>, landmarks: Vec<(usize, usize)>) -> Result<Observation, EnvError> {
        let n = self.spec.n_agents;
        let g = self.grid_size;
        let inside = |p: &(usize, usize)| p.0 < g && p.1 < g;
        if agents.len() != n || landmarks.len() != n || !agents.iter().chain(&landmarks).all(inside) {
            return Err(EnvError::Config("layout does not match agent count or grid".into()));
        }
        self.agents = agents;
        self.landmarks = landmarks;
        self.step_count = 0;
        self.finished = false;
        Ok(self.observe())
    }

    fn observe(&self) -> Observation {
        let landmark_feats: Vec<f64> = self
            .landmarks
            .iter()
            .flat_map(|&(x, y)| [x as f64, y as f64])
            .collect();
        let per_agent_obs: Vec<Vec<f64>> = self
            .agents
            .iter()
            .map(|&(x, y)| {
                let mut o = Vec::with_capacity(self.spec.obs_dim);
                o.push(x as f64);
                o.push(y as f64);
                o.extend_from_slice(&landmark_feats);
                o
            })
            .collect();
        let global_state = per_agent_obs.concat();
        Observation {
            per_agent_obs,
            global_state,
        }
    }

    /// Sum over landmarks of the distance to the closest agent.
    fn coverage_distance(&self) -> usize {
        self.landmarks
            .iter()
            .map(|&(lx, ly)| {
                self.agents
                    .iter()
                    .map(|&(ax, ay)| ax.abs_diff(lx) + ay.abs_diff(ly))
                    .min()
                    .unwrap_or(0)
            })
            .sum()
    }

    fn shaped_reward(&self) -> f64 {
        -(self.coverage_distance() as f64) / self.spec.n_agents as f64
    }

    fn apply_move(&self, (x, y): (usize, usize), action: usize) -> (usize, usize) {
        let top = self.grid_size - 1;
        match action {
            1 => (x, (y + 1).min(top)),
            2 => (x, y.saturating_sub(1)),
            3 => (x.saturating_sub(1), y),
            4 => ((x + 1).min(top), y),
            _ => (x, y),
        }
    }
}

impl Environment for TeamSpread {
    fn spec(&self) -> &DecPomdpSpec {
        &self.spec
    }

    fn reset(&mut self) -> Observation {
        let n = self.spec.n_agents;
        let cells = self.grid_size * self.grid_size;
        let g = self.grid_size;
        self.landmarks = sample(&mut self.rng, cells, n)
            .into_iter()
            .map(|c| (c % g, c / g))
            .collect();
        self.agents = (0..n)
            .map(|_| (self.rng.random_range(0..g), self.rng.random_range(0..g)))
            .collect();
        self.step_count = 0;
        self.finished = false;
        self.observe()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepOutcome, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeOver);
        }
        check_joint_action(joint_action, &self.spec)?;
        for (i, &a) in joint_action.iter().enumerate() {
            self.agents[i] = self.apply_move(self.agents[i], a);
        }
        self.step_count += 1;
        let covered = self.coverage_distance() == 0;
        let reward = self.shaped_reward() + if covered { 1.0 } else { 0.0 };
        let truncated = !covered && self.step_count >= self.spec.episode_limit;
        self.finished = covered || truncated;
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            terminated: covered,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(n: usize, seed: u64) -> TeamSpread {
        TeamSpread::new(n, 7, 50, 0.99, seed).unwrap()
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let (mut a, mut b) = (env(2, 42), env(2, 42));
        for _ in 0..3 {
            let (oa, ob) = (a.reset(), b.reset());
            assert_eq!(oa, ob);
            assert_eq!(a.step_count(), 0);
        }
        let mut c = env(2, 43);
        assert_ne!(c.reset(), env(2, 42).reset());
    }

    #[test]
    fn observation_layout() {
        let mut e = env(3, 0);
        let obs = e.set_layout(vec![(0, 1), (2, 3), (4, 5)], vec![(6, 6), (0, 0), (3, 3)]).unwrap();
        assert_eq!(obs.per_agent_obs[1], vec![2.0, 3.0, 6.0, 6.0, 0.0, 0.0, 3.0, 3.0]);
        assert_eq!(obs.global_state.len(), e.spec().global_state_dim);
        assert_eq!(&obs.global_state[8..16], obs.per_agent_obs[1].as_slice());
    }

    #[test]
    fn agents_on_landmarks_earn_bonus_and_terminate() {
        let mut e = env(2, 0);
        e.set_layout(vec![(1, 1), (4, 2)], vec![(1, 1), (4, 2)]).unwrap();
        let out = e.step(&[0, 0]).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(out.terminated && !out.truncated);
        assert_eq!(e.step(&[0, 0]), Err(EnvError::EpisodeOver));
    }

    #[test]
    fn shaped_reward_counts_closest_agent_per_landmark() {
        let mut e = env(2, 0);
        // landmark (0,0): closest agent at distance 1; landmark (6,6): closest at distance 2
        e.set_layout(vec![(0, 1), (5, 5)], vec![(0, 0), (6, 6)]).unwrap();
        let out = e.step(&[0, 0]).unwrap();
        assert_eq!(out.reward, -(1.0 + 2.0) / 2.0);
        assert!(!out.done());
    }

    #[test]
    fn moves_clamp_at_the_border() {
        let mut e = env(2, 0);
        e.set_layout(vec![(0, 0), (6, 6)], vec![(3, 3), (4, 4)]).unwrap();
        e.step(&[2, 1]).unwrap();
        e.step(&[3, 4]).unwrap();
        assert_eq!(e.agent_positions(), &[(0, 0), (6, 6)]);
        e.step(&[4, 2]).unwrap();
        assert_eq!(e.agent_positions(), &[(1, 0), (6, 5)]);
    }

    #[test]
    fn truncates_at_episode_limit() {
        let mut e = TeamSpread::new(2, 7, 3, 0.99, 0).unwrap();
        e.set_layout(vec![(0, 0), (0, 0)], vec![(6, 6), (5, 6)]).unwrap();
        assert!(!e.step(&[0, 0]).unwrap().done());
        assert!(!e.step(&[0, 0]).unwrap().done());
        let last = e.step(&[0, 0]).unwrap();
        assert!(last.truncated && !last.terminated);
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut e = env(2, 0);
        assert!(matches!(e.step(&[0, 5]), Err(EnvError::InvalidAction { agent: 1, action: 5, .. })));
        assert!(matches!(e.step(&[0]), Err(EnvError::Arity { .. })));
        assert!(TeamSpread::new(1, 7, 50, 0.99, 0).is_err());
    }

    proptest! {
        #[test]
        fn reward_stays_in_bounds(seed in any::<u64>(), actions in prop::collection::vec(prop::collection::vec(0usize..5, 4), 1..60)) {
            let mut e = env(4, seed);
            for joint in actions {
                match e.step(&joint) {
                    Ok(out) => {
                        prop_assert!(out.reward >= -2.0 * 7.0 && out.reward <= 1.0);
                        if out.done() { e.reset(); }
                    }
                    Err(err) => prop_assert!(false, "{err}"),
                }
            }
        }

        #[test]
        fn moving_weakly_closer_to_everything_never_lowers_reward(
            seed in any::<u64>(), agent in 0usize..3, action in 1usize..5
        ) {
            let mut e = env(3, seed);
            let before = e.shaped_reward();
            let from = e.agents[agent];
            let to = e.apply_move(from, action);
            let dist = |p: (usize, usize), l: &(usize, usize)| p.0.abs_diff(l.0) + p.1.abs_diff(l.1);
            // only moves that bring the agent weakly closer to every landmark
            prop_assume!(e.landmarks.iter().all(|l| dist(to, l) <= dist(from, l)));
            e.agents[agent] = to;
            prop_assert!(e.shaped_reward() >= before);
        }

        #[test]
        fn same_seed_same_actions_same_trace(seed in any::<u64>(), actions in prop::collection::vec(prop::collection::vec(0usize..5, 2), 1..30)) {
            let (mut a, mut b) = (env(2, seed), env(2, seed));
            for joint in &actions {
                let (ra, rb) = (a.step(joint), b.step(joint));
                prop_assert_eq!(&ra, &rb);
                if ra.map(|o| o.done()).unwrap_or(true) { a.reset(); b.reset(); }
            }
        }
    }
}
