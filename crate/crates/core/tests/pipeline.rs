use marl_lns::envs::EnvId;
use marl_lns::harness::{read_csv, train, RunConfig, CSV_HEADER};
use marl_lns::lns::SchedulerKind;

fn small(env: EnvId, n: usize, algo: SchedulerKind, m: Option<usize>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.env = env;
    cfg.run.n_agents = n;
    cfg.run.algo = algo;
    cfg.run.m = m;
    cfg.run.num_envs = 4;
    cfg.run.buffer_length = 25;
    cfg.run.total_env_steps = 4 * 25 * 16;
    cfg.run.eval_episodes = Some(2);
    cfg.env.episode_limit = 12;
    cfg.ppo.hidden_size = 16;
    cfg.ppo.ppo_epochs = 2;
    cfg
}

#[test]
fn blns_on_eight_agents_cycles_two_blocks_over_eight_iterations() {
    let mut cfg = small(EnvId::TeamSpread, 8, SchedulerKind::Blns, Some(4));
    cfg.run.seed = 3;
    let m = train(&cfg).unwrap().metrics;
    assert_eq!(m.rows.len(), 8);
    let hoods: Vec<Vec<usize>> = m
        .rows
        .iter()
        .map(|r| r.neighborhood.split(';').map(|s| s.parse().unwrap()).collect())
        .collect();
    assert!(hoods.iter().all(|h| h.len() == 4));
    let mut union: Vec<usize> = [hoods[0].clone(), hoods[1].clone()].concat();
    union.sort_unstable();
    assert_eq!(union, (0..8).collect::<Vec<_>>());
    for (i, h) in hoods.iter().enumerate() {
        assert_eq!(h, &hoods[i % 2]);
    }
}

#[test]
fn every_sampled_step_is_accounted_for() {
    for algo in SchedulerKind::ALL {
        let cfg = small(EnvId::TeamSpread, 6, algo, None);
        let out = train(&cfg).unwrap();
        let m = &out.metrics;
        assert_eq!(m.env_steps(), cfg.run.total_env_steps);
        assert_eq!(m.update_stats.len(), cfg.total_rounds());
        let mut round = 0;
        for row in &m.rows {
            let rounds_here = if row.lns_iteration + 1 == m.rows.len() { 16 - 2 * 7 } else { 2 };
            for s in &m.update_stats[round..round + rounds_here] {
                assert_eq!(s.samples, cfg.phase_steps() * row.m, "{algo}");
            }
            round += rounds_here;
        }
    }
}

#[test]
fn uneven_split_puts_the_remainder_on_the_last_iteration() {
    let mut cfg = small(EnvId::GaussianSqueeze, 4, SchedulerKind::Rlns, Some(2));
    cfg.run.nt = 3;
    let m = train(&cfg).unwrap().metrics;
    let steps: Vec<usize> = m.rows.iter().map(|r| r.env_steps).collect();
    assert_eq!(steps, [500, 1000, 1600]);
}

#[test]
fn same_seed_same_run_different_seed_different_run() {
    let cfg = small(EnvId::GaussianSqueeze, 5, SchedulerKind::Alns, None);
    let a = train(&cfg).unwrap().metrics;
    let b = train(&cfg).unwrap().metrics;
    assert_eq!(a.update_stats, b.update_stats);
    assert_eq!(a.evaluations, b.evaluations);
    let mut other = cfg.clone();
    other.run.seed += 1;
    assert_ne!(train(&other).unwrap().metrics.update_stats, a.update_stats);
}

#[test]
fn mean_100_reports_the_latest_evaluation() {
    let mut cfg = small(EnvId::ClimbGame, 2, SchedulerKind::Full, None);
    cfg.run.eval_protocol = marl_lns::harness::EvalProtocol::Mean100;
    cfg.run.eval_episodes = None;
    cfg.run.eval_greedy = false;
    let m = train(&cfg).unwrap().metrics;
    assert_eq!(m.final_metric, *m.evaluations.last().unwrap());
}

#[test]
fn csv_report_matches_the_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvId::ClimbGame, 3, SchedulerKind::Blns, Some(1));
    cfg.run.out = Some(dir.path().join("climb.csv"));
    let m = train(&cfg).unwrap().metrics;
    let text = std::fs::read_to_string(cfg.run.out.as_ref().unwrap()).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 9);
    let rows = read_csv(cfg.run.out.as_ref().unwrap()).unwrap();
    for (a, b) in m.rows.iter().zip(&rows) {
        assert_eq!(a.neighborhood, b.neighborhood);
        assert_eq!(a.env_steps, b.env_steps);
        assert!((a.eval_metric - b.eval_metric).abs() <= 5e-6 * a.eval_metric.abs().max(1e-12));
    }
}
