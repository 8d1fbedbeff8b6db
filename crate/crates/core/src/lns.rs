//! Neighborhood schedulers and trajectory filtering.
//!
//! Each LNS iteration fixes a subset of agents (the neighborhood); only their
//! trajectories are kept for training while the remaining agents keep acting
//! with the shared policy.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pomdp::{AgentTrajectory, DecPomdpSpec, PomdpError, Trajectory};

#[derive(Debug, Error)]
pub enum LnsError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Full,
    Rlns,
    Blns,
    Alns,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [Self::Full, Self::Rlns, Self::Blns, Self::Alns];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Rlns => "rlns",
            Self::Blns => "blns",
            Self::Alns => "alns",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = LnsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LnsError::Contract(format!("unknown scheduler `{s}` (expected full, rlns, blns or alns)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub agent_ids: Vec<usize>,
    pub lns_iteration: usize,
    pub scheduler: SchedulerKind,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agent_ids.is_empty()
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.agent_ids.contains(&agent)
    }

    /// Agent ids joined with `;`, as written to CSV.
    pub fn label(&self) -> String {
        self.agent_ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
    }
}

fn check_size(n: usize, m: usize) -> Result<(), LnsError> {
    if m == 0 || m > n {
        return Err(LnsError::Contract(format!("neighborhood size {m} outside 1..={n}")));
    }
    Ok(())
}

/// Uniform `m`-subset of `0..n`, returned in ascending order.
pub fn select_rlns<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Result<Vec<usize>, LnsError> {
    check_size(n, m)?;
    let mut ids = index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// The next `m` entries of the cyclic permutation `perm` starting at
/// `cursor`, which advances by `m` modulo `n`.
pub fn select_blns(perm: &[usize], cursor: &mut usize, m: usize) -> Result<Vec<usize>, LnsError> {
    let n = perm.len();
    check_size(n, m)?;
    let ids = (0..m).map(|k| perm[(*cursor + k) % n]).collect();
    *cursor = (*cursor + m) % n;
    Ok(ids)
}

/// Largest adaptive neighborhood size, `ceil(n/2)`.
pub fn alns_cap(n: usize) -> usize {
    n.div_ceil(2)
}

/// Growth rule for the adaptive scheduler. `last_two_improved` holds the
/// improvement flags of the two most recent LNS iterations; `m` grows by
/// `2^(floor(log2 m) - 1)` (capped at `ceil(n/2)`) only when neither improved.
pub fn alns_next_size(m: usize, n: usize, last_two_improved: [bool; 2]) -> usize {
    let cap = alns_cap(n);
    if last_two_improved.iter().any(|&i| i) || m >= cap {
        return m.min(cap);
    }
    let step = 1usize << (m.ilog2() - 1);
    (m + step).min(cap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub lns_iteration: usize,
    pub metric: f64,
    pub improved: bool,
}

/// Scheduler state for one run.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    n: usize,
    m: usize,
    rng: ChaCha8Rng,
    perm: Vec<usize>,
    cursor: usize,
    size_list: Option<Vec<usize>>,
    size_index: usize,
    history: Vec<EvalRecord>,
    best: f64,
    iteration: usize,
}

impl Scheduler {
    /// `m` is the neighborhood size for RLNS/BLNS (default `floor(n/2)`),
    /// ignored by `full`, and the initial size for ALNS (default 2, capped at
    /// `ceil(n/2)`). BLNS draws a random permutation from `seed`.
    pub fn new(kind: SchedulerKind, n: usize, m: Option<usize>, seed: u64) -> Result<Self, LnsError> {
        if n == 0 {
            return Err(LnsError::Contract("scheduler needs at least one agent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = match kind {
            SchedulerKind::Full => n,
            SchedulerKind::Rlns | SchedulerKind::Blns => m.unwrap_or((n / 2).max(1)),
            SchedulerKind::Alns => {
                let m = m.unwrap_or(2).min(alns_cap(n));
                if m < 2 && alns_cap(n) >= 2 {
                    return Err(LnsError::Contract("adaptive neighborhoods start at size 2 or more".into()));
                }
                m
            }
        };
        check_size(n, m)?;
        let mut perm: Vec<usize> = (0..n).collect();
        if kind == SchedulerKind::Blns {
            perm.shuffle(&mut rng);
        }
        Ok(Self {
            kind,
            n,
            m,
            rng,
            perm,
            cursor: 0,
            size_list: None,
            size_index: 0,
            history: Vec::new(),
            best: f64::NEG_INFINITY,
            iteration: 0,
        })
    }

    /// Replaces the block permutation (BLNS only).
    pub fn with_permutation(mut self, perm: Vec<usize>) -> Result<Self, LnsError> {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..self.n).collect::<Vec<_>>() {
            return Err(LnsError::Contract(format!("{perm:?} is not a permutation of 0..{}", self.n)));
        }
        self.perm = perm;
        self.cursor = 0;
        Ok(self)
    }

    /// Explicit adaptive size schedule `[m_1, ..., m_k]` (ALNS only): each
    /// stagnation event advances to the next entry. Entries must be
    /// non-decreasing, at least 2 and at most `ceil(n/2)`.
    pub fn with_size_list(mut self, sizes: Vec<usize>) -> Result<Self, LnsError> {
        if self.kind != SchedulerKind::Alns {
            return Err(LnsError::Contract("a size list only applies to the adaptive scheduler".into()));
        }
        let cap = alns_cap(self.n);
        if sizes.is_empty()
            || sizes.iter().any(|&m| m < 2 || m > cap)
            || sizes.windows(2).any(|w| w[1] < w[0])
        {
            return Err(LnsError::Contract(format!(
                "size list {sizes:?} must be non-empty, non-decreasing and within 2..={cap}"
            )));
        }
        self.m = sizes[0];
        self.size_list = Some(sizes);
        self.size_index = 0;
        Ok(self)
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    /// Size the next neighborhood would have if no growth were triggered.
    pub fn current_m(&self) -> usize {
        self.m
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn history(&self) -> &[EvalRecord] {
        &self.history
    }

    fn stagnated(&self) -> bool {
        match self.history.as_slice() {
            [.., a, b] => !a.improved && !b.improved,
            _ => false,
        }
    }

    fn grow(&mut self) {
        match &self.size_list {
            Some(list) => {
                self.size_index = (self.size_index + 1).min(list.len() - 1);
                self.m = list[self.size_index];
            }
            None => self.m = alns_next_size(self.m, self.n, [false, false]),
        }
    }

    /// Neighborhood for the next LNS iteration.
    pub fn next_neighborhood(&mut self) -> Neighborhood {
        let ids = match self.kind {
            SchedulerKind::Full => Ok((0..self.n).collect()),
            SchedulerKind::Rlns => select_rlns(&mut self.rng, self.n, self.m),
            SchedulerKind::Blns => select_blns(&self.perm, &mut self.cursor, self.m),
            SchedulerKind::Alns => {
                if self.stagnated() {
                    self.grow();
                }
                select_rlns(&mut self.rng, self.n, self.m)
            }
        }
        .expect("scheduler sizes are validated on construction");
        let hood = Neighborhood {
            agent_ids: ids,
            lns_iteration: self.iteration,
            scheduler: self.kind,
        };
        self.iteration += 1;
        hood
    }

    /// Records the evaluation of the latest LNS iteration. An iteration
    /// improves when its metric strictly exceeds the best of all earlier
    /// iterations. Returns whether it improved.
    pub fn record_evaluation(&mut self, metric: f64) -> Result<bool, LnsError> {
        if !metric.is_finite() {
            return Err(LnsError::Contract(format!("evaluation metric {metric} is not finite")));
        }
        let improved = metric > self.best;
        self.best = self.best.max(metric);
        self.history.push(EvalRecord {
            lns_iteration: self.iteration.saturating_sub(1),
            metric,
            improved,
        });
        Ok(improved)
    }
}

/// Per-agent trajectories of the neighborhood's agents only, in trajectory
/// order and then neighborhood order.
pub fn filter_trajectories(
    trajs: &[Trajectory],
    spec: &DecPomdpSpec,
    hood: &Neighborhood,
) -> Result<Vec<AgentTrajectory>, LnsError> {
    if let Some(&bad) = hood.agent_ids.iter().find(|&&id| id >= spec.n_agents) {
        return Err(LnsError::Contract(format!(
            "neighborhood references agent {bad} but the team has {}",
            spec.n_agents
        )));
    }
    let mut out = Vec::with_capacity(trajs.len() * hood.len());
    for traj in trajs {
        traj.validate(spec)?;
        out.extend(hood.agent_ids.iter().map(|&id| AgentTrajectory::project(traj, id)));
    }
    Ok(out)
}

/// Training rounds per LNS iteration: `floor(total / n_t)` each, with the
/// remainder added to the last iteration.
pub fn plan_iterations(total_rounds: usize, n_t: usize) -> Result<Vec<usize>, LnsError> {
    if n_t == 0 || n_t > total_rounds {
        return Err(LnsError::Contract(format!(
            "{n_t} LNS iterations cannot share {total_rounds} training rounds"
        )));
    }
    let base = total_rounds / n_t;
    let mut plan = vec![base; n_t];
    plan[n_t - 1] += total_rounds % n_t;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{decompose, testing::random_trajectory};
    use proptest::prelude::*;

    fn ids(v: &[usize]) -> Vec<usize> {
        v.to_vec()
    }

    #[test]
    fn rlns_full_size_is_everyone() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_rlns(&mut rng, 5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(select_rlns(&mut rng, 5, 6).is_err());
        assert!(select_rlns(&mut rng, 5, 0).is_err());
    }

    #[test]
    fn rlns_singletons_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[select_rlns(&mut rng, 4, 1).unwrap()[0]] += 1;
        }
        // binomial(10000, 1/4): mean 2500, sd sqrt(1875)
        let sd = 1875f64.sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn rlns_is_reproducible() {
        let draw = || {
            let mut s = Scheduler::new(SchedulerKind::Rlns, 6, Some(3), 42).unwrap();
            (0..20).map(|_| s.next_neighborhood().agent_ids).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn blns_divisible_cycle() {
        let perm: Vec<usize> = (0..4).collect();
        let mut cursor = 0;
        let seq: Vec<_> = (0..3).map(|_| select_blns(&perm, &mut cursor, 2).unwrap()).collect();
        assert_eq!(seq, vec![ids(&[0, 1]), ids(&[2, 3]), ids(&[0, 1])]);
    }

    #[test]
    fn blns_wraps_around() {
        let mut s = Scheduler::new(SchedulerKind::Blns, 5, Some(2), 0)
            .unwrap()
            .with_permutation((0..5).collect())
            .unwrap();
        let seq: Vec<_> = (0..6).map(|_| s.next_neighborhood().agent_ids).collect();
        let expected = [[0, 1], [2, 3], [4, 0], [1, 2], [3, 4], [0, 1]];
        assert_eq!(seq, expected.iter().map(|e| e.to_vec()).collect::<Vec<_>>());
    }

    #[test]
    fn blns_rejects_non_permutations() {
        let s = Scheduler::new(SchedulerKind::Blns, 3, Some(1), 0).unwrap();
        assert!(s.clone().with_permutation(vec![0, 0, 1]).is_err());
        assert!(s.with_permutation(vec![0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn blns_n_selections_cover_every_agent_m_times(n in 2usize..30, m in 1usize..30, seed in any::<u64>()) {
            prop_assume!(m <= n);
            let mut s = Scheduler::new(SchedulerKind::Blns, n, Some(m), seed).unwrap();
            let mut counts = vec![0usize; n];
            for _ in 0..n {
                s.next_neighborhood().agent_ids.iter().for_each(|&a| counts[a] += 1);
            }
            // n blocks of m span exactly m full turns of the cycle, whatever gcd(m, n) is
            prop_assert!(counts.iter().all(|&c| c == m));
        }

        #[test]
        fn blns_consecutive_blocks_cover_the_team(n in 1usize..30, m in 1usize..30, skip in 0usize..40, seed in any::<u64>()) {
            prop_assume!(m <= n);
            let mut s = Scheduler::new(SchedulerKind::Blns, n, Some(m), seed).unwrap();
            for _ in 0..skip {
                s.next_neighborhood();
            }
            let mut seen = vec![false; n];
            for _ in 0..n.div_ceil(m) {
                s.next_neighborhood().agent_ids.iter().for_each(|&a| seen[a] = true);
            }
            prop_assert!(seen.iter().all(|&x| x));
        }

        #[test]
        fn neighborhoods_are_distinct_and_in_range(kind in 0usize..4, n in 1usize..20, seed in any::<u64>()) {
            let kind = SchedulerKind::ALL[kind];
            let mut s = Scheduler::new(kind, n, None, seed).unwrap();
            let mut last = 0;
            for k in 0..12 {
                let h = s.next_neighborhood();
                prop_assert_eq!(h.lns_iteration, k);
                let mut sorted = h.agent_ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), h.len());
                prop_assert!(h.agent_ids.iter().all(|&a| a < n));
                match kind {
                    SchedulerKind::Full => prop_assert_eq!(h.len(), n),
                    SchedulerKind::Rlns | SchedulerKind::Blns => prop_assert_eq!(h.len(), (n / 2).max(1)),
                    SchedulerKind::Alns => {
                        prop_assert!(h.len() >= last && h.len() <= alns_cap(n));
                        last = h.len();
                    }
                }
                s.record_evaluation(0.0).unwrap();
            }
        }
    }

    #[test]
    fn alns_growth_sequences() {
        let grow = |n: usize, steps: usize| {
            let mut m = 2;
            let mut seq = vec![m];
            for _ in 1..steps {
                m = alns_next_size(m, n, [false, false]);
                seq.push(m);
            }
            seq
        };
        assert_eq!(grow(27, 8), vec![2, 3, 4, 6, 8, 12, 14, 14]);
        assert_eq!(grow(8, 4), vec![2, 3, 4, 4]);
        assert_eq!(alns_next_size(4, 27, [false, true]), 4);
        assert_eq!(alns_next_size(4, 27, [true, false]), 4);
    }

    #[test]
    fn alns_scheduler_grows_only_after_two_stagnant_iterations() {
        let mut s = Scheduler::new(SchedulerKind::Alns, 27, None, 3).unwrap();
        let mut sizes = Vec::new();
        for _ in 0..10 {
            sizes.push(s.next_neighborhood().len());
            s.record_evaluation(0.5).unwrap();
        }
        // the first evaluation sets the watermark and counts as improved
        assert_eq!(sizes, vec![2, 2, 2, 3, 4, 6, 8, 12, 14, 14]);
    }

    #[test]
    fn alns_stays_put_under_monotone_improvement() {
        let mut s = Scheduler::new(SchedulerKind::Alns, 10, None, 3).unwrap();
        for k in 0..20 {
            assert_eq!(s.next_neighborhood().len(), 2);
            assert!(s.record_evaluation(k as f64).unwrap());
        }
    }

    #[test]
    fn alns_small_teams_start_at_the_cap() {
        let mut s = Scheduler::new(SchedulerKind::Alns, 2, None, 0).unwrap();
        for _ in 0..4 {
            assert_eq!(s.next_neighborhood().len(), 1);
            s.record_evaluation(0.0).unwrap();
        }
    }

    #[test]
    fn watermark_improvement_rule() {
        let flags = |metrics: &[f64]| {
            let mut s = Scheduler::new(SchedulerKind::Alns, 8, None, 0).unwrap();
            metrics
                .iter()
                .map(|&x| {
                    s.next_neighborhood();
                    s.record_evaluation(x).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(flags(&[0.1, 0.2]), vec![true, true]);
        assert_eq!(flags(&[0.5, 0.5, 0.5]), vec![true, false, false]);
        assert_eq!(flags(&[0.5, 0.4, 0.6]), vec![true, false, true]);

        let mut s = Scheduler::new(SchedulerKind::Alns, 8, None, 0).unwrap();
        for x in [0.5, 0.5, 0.5] {
            s.next_neighborhood();
            s.record_evaluation(x).unwrap();
        }
        assert_eq!(s.next_neighborhood().len(), 3);

        let mut s = Scheduler::new(SchedulerKind::Alns, 8, None, 0).unwrap();
        for x in [0.5, 0.4, 0.6] {
            s.next_neighborhood();
            s.record_evaluation(x).unwrap();
        }
        assert_eq!(s.next_neighborhood().len(), 2);
        assert!(s.record_evaluation(f64::NAN).is_err());
    }

    #[test]
    fn size_list_override() {
        let mut s = Scheduler::new(SchedulerKind::Alns, 12, None, 0)
            .unwrap()
            .with_size_list(vec![2, 5, 6])
            .unwrap();
        let mut sizes = Vec::new();
        for _ in 0..6 {
            sizes.push(s.next_neighborhood().len());
            s.record_evaluation(1.0).unwrap();
        }
        assert_eq!(sizes, vec![2, 2, 2, 5, 6, 6]);
        let base = Scheduler::new(SchedulerKind::Alns, 12, None, 0).unwrap();
        assert!(base.clone().with_size_list(vec![1, 2]).is_err());
        assert!(base.clone().with_size_list(vec![3, 2]).is_err());
        assert!(base.clone().with_size_list(vec![2, 7]).is_err());
        assert!(Scheduler::new(SchedulerKind::Rlns, 12, None, 0).unwrap().with_size_list(vec![2]).is_err());
    }

    #[test]
    fn scheduler_ids_parse() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.to_string().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("greedy".parse::<SchedulerKind>().is_err());
    }

    fn spec(n: usize) -> DecPomdpSpec {
        DecPomdpSpec::new(n, 3, 5, 4, 0.99, 20).unwrap()
    }

    #[test]
    fn full_filter_equals_decompose() {
        let spec = spec(4);
        let trajs: Vec<_> = (0..3).map(|s| random_trajectory(&spec, 6, s)).collect();
        let hood = Neighborhood {
            agent_ids: (0..4).collect(),
            lns_iteration: 0,
            scheduler: SchedulerKind::Full,
        };
        let filtered = filter_trajectories(&trajs, &spec, &hood).unwrap();
        let expected: Vec<_> = trajs.iter().flat_map(|t| decompose(t, &spec).unwrap()).collect();
        assert_eq!(filtered, expected);
    }

    #[test]
    fn single_agent_filter_keeps_global_state() {
        let spec = spec(4);
        let trajs: Vec<_> = (0..3).map(|s| random_trajectory(&spec, 5, s + 10)).collect();
        let hood = Neighborhood {
            agent_ids: vec![2],
            lns_iteration: 0,
            scheduler: SchedulerKind::Rlns,
        };
        let filtered = filter_trajectories(&trajs, &spec, &hood).unwrap();
        assert_eq!(filtered.len(), 3);
        for (part, traj) in filtered.iter().zip(&trajs) {
            assert_eq!(part.agent_id, 2);
            let states: Vec<_> = traj.transitions.iter().map(|t| t.global_state.clone()).collect();
            assert_eq!(part.global_state_seq, states);
        }
        let bad = Neighborhood {
            agent_ids: vec![4],
            ..hood
        };
        assert!(filter_trajectories(&trajs, &spec, &bad).is_err());
    }

    #[test]
    fn half_neighborhood_stores_half_the_entries() {
        let spec = spec(8);
        let trajs: Vec<_> = (0..4).map(|s| random_trajectory(&spec, 7, s)).collect();
        let mut sched = Scheduler::new(SchedulerKind::Rlns, 8, Some(4), 5).unwrap();
        let hood = sched.next_neighborhood();
        let kept: usize = filter_trajectories(&trajs, &spec, &hood).unwrap().iter().map(|p| p.len()).sum();
        let all: usize = trajs.iter().flat_map(|t| decompose(t, &spec).unwrap()).map(|p| p.len()).sum();
        assert_eq!(2 * kept, all);
    }

    #[test]
    fn iteration_plan_puts_the_remainder_last() {
        assert_eq!(plan_iterations(250, 8).unwrap(), vec![31, 31, 31, 31, 31, 31, 31, 33]);
        assert_eq!(plan_iterations(8, 8).unwrap(), vec![1; 8]);
        assert!(plan_iterations(7, 8).is_err());
        assert!(plan_iterations(7, 0).is_err());
    }
}
