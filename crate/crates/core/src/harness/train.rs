use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    derive_seed, emit_csv, evaluate, EvalProtocol, EvalWindow, HarnessError, MetricsRow, RunConfig, RunMetrics,
    Sampler, SeedStream,
};
use crate::envs::{make_env, Environment};
use crate::lns::{filter_trajectories, plan_iterations, Neighborhood, Scheduler, SchedulerKind};
use crate::mappo::{ActorCritic, MappoError, MappoTrainer, RolloutBuffer, TrainStats};
use crate::nn::checkpoint;
use crate::pomdp::decompose;

pub struct TrainOutput {
    pub metrics: RunMetrics,
    pub trainer: MappoTrainer,
}

pub fn build_scheduler(config: &RunConfig) -> Result<Scheduler, HarnessError> {
    let r = &config.run;
    let mut s = Scheduler::new(r.algo, r.n_agents, r.m, derive_seed(r.seed, SeedStream::Scheduler))?;
    if let Some(perm) = &r.blns_permutation {
        if r.algo != SchedulerKind::Blns {
            return Err(HarnessError::Config("blns_permutation only applies to the blns scheduler".into()));
        }
        s = s.with_permutation(perm.clone())?;
    }
    if let Some(sizes) = &r.alns_sizes {
        s = s.with_size_list(sizes.clone())?;
    }
    Ok(s)
}

struct Evaluator {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    episodes: usize,
    greedy: bool,
    protocol: EvalProtocol,
    window: EvalWindow,
    all: Vec<f64>,
}

impl Evaluator {
    fn new(config: &RunConfig) -> Result<Self, HarnessError> {
        let r = &config.run;
        let seed = derive_seed(r.seed, SeedStream::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            env: make_env(r.env, r.n_agents, &config.env, config.ppo.gamma, seed)?,
            rng,
            episodes: config.eval_episodes(),
            greedy: r.eval_greedy,
            protocol: r.eval_protocol,
            window: EvalWindow::new(EvalWindow::FINAL_TEN),
            all: Vec::new(),
        })
    }

    fn run(&mut self, nets: &ActorCritic) -> Result<f64, HarnessError> {
        let metric = evaluate(nets, self.env.as_mut(), self.episodes, self.greedy, &mut self.rng)?;
        self.window.push(metric);
        self.all.push(metric);
        Ok(metric)
    }

    fn final_metric(&self) -> f64 {
        match self.protocol {
            EvalProtocol::MedianFinalTen => self.window.median(),
            EvalProtocol::Mean100 => self.window.latest(),
        }
        .unwrap_or(f64::NAN)
    }
}

/// Turns a non-finite update into an abort that carries the run state, and
/// writes the same report next to the output file when there is one.
fn divergence(
    err: MappoError,
    config: &RunConfig,
    hood: &Neighborhood,
    round: usize,
    metrics: &RunMetrics,
) -> HarnessError {
    let MappoError::NonFinite(what) = err else {
        return err.into();
    };
    let last = metrics.update_stats.last();
    let mut detail = format!(
        "{what}; neighborhood [{}], {} updates completed, last update stats {last:?}",
        hood.label(),
        metrics.update_stats.len()
    );
    if let Some(out) = &config.run.out {
        let dump = PathBuf::from(format!("{}.diverged.txt", out.display()));
        let text = format!(
            "{detail}\n\nupdate stats:\n{}\n\nconfig:\n{}",
            metrics
                .update_stats
                .iter()
                .map(|s| format!("{s:?}"))
                .collect::<Vec<_>>()
                .join("\n"),
            config.to_toml()
        );
        if std::fs::write(&dump, text).is_ok() {
            detail.push_str(&format!("; diagnostics in {}", dump.display()));
        }
    }
    HarnessError::Diverged {
        lns_iteration: hood.lns_iteration,
        round,
        detail,
    }
}

fn write_outputs(config: &RunConfig, metrics: &RunMetrics, trainer: &MappoTrainer) -> Result<(), HarnessError> {
    if let Some(out) = &config.run.out {
        emit_csv(metrics, out)?;
    }
    if let Some(path) = &config.run.checkpoint {
        checkpoint::save(path, &trainer.nets().to_tensors())?;
    }
    Ok(())
}

fn new_trainer(config: &RunConfig, sampler: &Sampler) -> Result<MappoTrainer, HarnessError> {
    let seed = config.run.seed;
    Ok(MappoTrainer::new(
        sampler.spec(),
        config.ppo.clone(),
        derive_seed(seed, SeedStream::Init),
        derive_seed(seed, SeedStream::Shuffle),
    )?)
}

/// Runs the LNS training loop: each LNS iteration fixes a neighborhood, runs
/// its share of sample-filter-update rounds, then evaluates the policy and
/// reports the result to the scheduler.
///
/// Writes the CSV report and checkpoint when the config names paths for them.
pub fn train(config: &RunConfig) -> Result<TrainOutput, HarnessError> {
    config.validate()?;
    let r = &config.run;
    let mut sampler = Sampler::new(config)?;
    let spec = sampler.spec().clone();
    let mut trainer = new_trainer(config, &sampler)?;
    let mut scheduler = build_scheduler(config)?;
    let mut evaluator = Evaluator::new(config)?;
    let total_rounds = config.total_rounds();
    let plan = plan_iterations(total_rounds, r.nt)?;

    let mut metrics = RunMetrics::default();
    let mut env_steps = 0;
    let mut rounds_done = 0;
    let start = Instant::now();
    for rounds in plan {
        let hood = scheduler.next_neighborhood();
        let mut buffer = RolloutBuffer::new(r.num_envs, r.buffer_length, &hood.agent_ids);
        let (mut sampling, mut updating) = (Duration::ZERO, Duration::ZERO);
        let mut metric = None;
        for round in 0..rounds {
            trainer.set_progress(1.0 - rounds_done as f64 / total_rounds as f64);
            let t0 = Instant::now();
            let trajs = sampler.sample(trainer.nets(), r.buffer_length)?;
            buffer.extend(filter_trajectories(&trajs, &spec, &hood)?)?;
            sampling += t0.elapsed();
            env_steps += config.phase_steps();

            let t1 = Instant::now();
            let stats = trainer
                .update(&mut buffer)
                .map_err(|e| divergence(e, config, &hood, round, &metrics))?;
            updating += t1.elapsed();
            metrics.update_stats.push(stats);
            rounds_done += 1;
            if r.eval_every_update {
                metric = Some(evaluator.run(trainer.nets())?);
            }
        }
        let metric = match metric {
            Some(m) => m,
            None => evaluator.run(trainer.nets())?,
        };
        scheduler.record_evaluation(metric)?;
        metrics.rows.push(MetricsRow {
            lns_iteration: hood.lns_iteration,
            m: hood.len(),
            neighborhood: hood.label(),
            env_steps,
            eval_metric: metric,
            sampling_time_s: sampling.as_secs_f64(),
            updating_time_s: updating.as_secs_f64(),
            cumulative_wall_s: start.elapsed().as_secs_f64(),
        });
    }
    metrics.evaluations = evaluator.all.clone();
    metrics.final_metric = evaluator.final_metric();
    write_outputs(config, &metrics, &trainer)?;
    Ok(TrainOutput { metrics, trainer })
}

/// Plain MAPPO on every agent's data with no neighborhood layer, evaluated on
/// the same cadence as [`train`]: every `total_rounds / nt` updates, with the
/// last evaluation at the end of the run. `algo` and `m` are ignored.
pub fn train_plain_mappo(config: &RunConfig) -> Result<TrainOutput, HarnessError> {
    config.validate()?;
    let r = &config.run;
    let mut sampler = Sampler::new(config)?;
    let spec = sampler.spec().clone();
    let mut trainer = new_trainer(config, &sampler)?;
    let mut evaluator = Evaluator::new(config)?;
    let total_rounds = config.total_rounds();
    let every = total_rounds / r.nt;
    let everyone: Vec<usize> = (0..r.n_agents).collect();
    let label = everyone.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    let mut buffer = RolloutBuffer::new(r.num_envs, r.buffer_length, &everyone);

    let mut metrics = RunMetrics::default();
    let (mut sampling, mut updating) = (Duration::ZERO, Duration::ZERO);
    let mut metric = None;
    let start = Instant::now();
    for round in 0..total_rounds {
        trainer.set_progress(1.0 - round as f64 / total_rounds as f64);
        let t0 = Instant::now();
        for traj in sampler.sample(trainer.nets(), r.buffer_length)? {
            buffer.extend(decompose(&traj, &spec)?)?;
        }
        sampling += t0.elapsed();
        let t1 = Instant::now();
        let stats: TrainStats = trainer.update(&mut buffer)?;
        updating += t1.elapsed();
        metrics.update_stats.push(stats);
        if r.eval_every_update {
            metric = Some(evaluator.run(trainer.nets())?);
        }
        let done = round + 1;
        if (done % every == 0 && done / every < r.nt) || done == total_rounds {
            let value = match metric.take() {
                Some(m) => m,
                None => evaluator.run(trainer.nets())?,
            };
            metrics.rows.push(MetricsRow {
                lns_iteration: metrics.rows.len(),
                m: r.n_agents,
                neighborhood: label.clone(),
                env_steps: done * config.phase_steps(),
                eval_metric: value,
                sampling_time_s: std::mem::take(&mut sampling).as_secs_f64(),
                updating_time_s: std::mem::take(&mut updating).as_secs_f64(),
                cumulative_wall_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    metrics.evaluations = evaluator.all.clone();
    metrics.final_metric = evaluator.final_metric();
    write_outputs(config, &metrics, &trainer)?;
    Ok(TrainOutput { metrics, trainer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;

    fn small(algo: SchedulerKind) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run.env = EnvId::TeamSpread;
        cfg.run.algo = algo;
        cfg.run.n_agents = 4;
        cfg.run.num_envs = 2;
        cfg.run.buffer_length = 20;
        cfg.run.total_env_steps = 2 * 20 * 10;
        cfg.run.nt = 4;
        cfg.run.eval_episodes = Some(2);
        cfg.env.grid_size = 5;
        cfg.env.episode_limit = 10;
        cfg.ppo.hidden_size = 16;
        cfg.ppo.ppo_epochs = 2;
        cfg
    }

    fn strip_timing(m: &RunMetrics) -> Vec<(usize, usize, String, usize, f64)> {
        m.rows
            .iter()
            .map(|r| (r.lns_iteration, r.m, r.neighborhood.clone(), r.env_steps, r.eval_metric))
            .collect()
    }

    #[test]
    fn step_accounting_and_iteration_count() {
        let out = train(&small(SchedulerKind::Rlns)).unwrap();
        let m = &out.metrics;
        assert_eq!(m.rows.len(), 4);
        assert_eq!(m.env_steps(), 400);
        assert_eq!(m.update_stats.len(), 10);
        assert_eq!(out.trainer.updates_done(), 10);
        assert_eq!(m.rows.iter().map(|r| r.env_steps).collect::<Vec<_>>(), [80, 160, 240, 400]);
        assert!(m.rows.iter().all(|r| r.m == 2));
        assert!(m.update_stats.iter().all(|s| s.samples == 2 * 20 * 2));
        assert!(m.final_metric.is_finite());
    }

    #[test]
    fn phase_times_fit_inside_the_wall_clock() {
        let m = train(&small(SchedulerKind::Blns)).unwrap().metrics;
        let mut prev = 0.0;
        for r in &m.rows {
            assert!(r.sampling_time_s + r.updating_time_s <= r.cumulative_wall_s - prev + 1e-9);
            prev = r.cumulative_wall_s;
        }
    }

    #[test]
    fn runs_are_reproducible() {
        for algo in SchedulerKind::ALL {
            let a = train(&small(algo)).unwrap().metrics;
            let b = train(&small(algo)).unwrap().metrics;
            assert_eq!(strip_timing(&a), strip_timing(&b));
            assert_eq!(a.update_stats, b.update_stats);
        }
    }

    #[test]
    fn blns_cycles_its_permutation() {
        let mut cfg = small(SchedulerKind::Blns);
        cfg.run.blns_permutation = Some(vec![3, 1, 0, 2]);
        let m = train(&cfg).unwrap().metrics;
        let hoods: Vec<&str> = m.rows.iter().map(|r| r.neighborhood.as_str()).collect();
        assert_eq!(hoods, ["3;1", "0;2", "3;1", "0;2"]);
    }

    #[test]
    fn full_scheduler_matches_plain_mappo() {
        let cfg = small(SchedulerKind::Full);
        let a = train(&cfg).unwrap().metrics;
        let b = train_plain_mappo(&cfg).unwrap().metrics;
        assert_eq!(a.update_stats, b.update_stats);
        assert_eq!(strip_timing(&a), strip_timing(&b));
        assert_eq!(a.final_metric, b.final_metric);
    }

    #[test]
    fn per_update_evaluation_feeds_the_window() {
        let mut cfg = small(SchedulerKind::Alns);
        cfg.run.eval_every_update = true;
        let m = train(&cfg).unwrap().metrics;
        assert_eq!(m.evaluations.len(), 10);
        let window = super::super::median(&m.evaluations[..]).unwrap();
        assert_eq!(m.final_metric, window);
        assert_eq!(m.rows.last().unwrap().eval_metric, m.evaluations[9]);
    }

    #[test]
    fn writes_csv_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(SchedulerKind::Alns);
        cfg.run.out = Some(dir.path().join("run.csv"));
        cfg.run.checkpoint = Some(dir.path().join("policy.ckpt"));
        let out = train(&cfg).unwrap();
        let rows = super::super::read_csv(cfg.run.out.as_ref().unwrap()).unwrap();
        assert_eq!(rows.len(), 4);
        let loaded = checkpoint::load(cfg.run.checkpoint.as_ref().unwrap()).unwrap();
        let mut fresh = new_trainer(&cfg, &Sampler::new(&cfg).unwrap()).unwrap();
        fresh.nets_mut().load_tensors(&loaded).unwrap();
        assert_eq!(fresh.nets().to_tensors(), out.trainer.nets().to_tensors());
    }

    #[test]
    fn misconfigured_schedulers_fail_at_startup() {
        let mut cfg = small(SchedulerKind::Rlns);
        cfg.run.alns_sizes = Some(vec![2]);
        assert!(train(&cfg).is_err());
        let mut cfg = small(SchedulerKind::Rlns);
        cfg.run.blns_permutation = Some(vec![0, 1, 2, 3]);
        assert!(train(&cfg).is_err());
        let mut cfg = small(SchedulerKind::Rlns);
        cfg.run.m = Some(5);
        assert!(train(&cfg).is_err());
    }
}
