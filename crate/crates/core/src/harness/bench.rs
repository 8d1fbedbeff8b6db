use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use super::{train, HarnessError, RunConfig, RunMetrics};
use crate::nn::Matrix;

/// Largest relative spread of the load probes for a trustworthy comparison.
pub const LOAD_SPREAD_LIMIT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTimes {
    pub sampling_s: f64,
    pub updating_s: f64,
    /// Wall time of the whole run, evaluation included.
    pub wall_s: f64,
}

impl PhaseTimes {
    pub fn of(metrics: &RunMetrics) -> Self {
        Self {
            sampling_s: metrics.sampling_time_s(),
            updating_s: metrics.updating_time_s(),
            wall_s: metrics.wall_time_s(),
        }
    }

    /// Training time: sampling plus updating.
    pub fn total_s(&self) -> f64 {
        self.sampling_s + self.updating_s
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub baseline: PhaseTimes,
    pub candidate: PhaseTimes,
    pub baseline_metrics: RunMetrics,
    pub candidate_metrics: RunMetrics,
    /// Seconds taken by each of the fixed warmup workloads.
    pub probes: [f64; 3],
    /// `(max - min) / min` over the probes.
    pub load_spread: f64,
    pub reliable: bool,
    /// Fractional reductions of the candidate relative to the baseline;
    /// positive means the candidate was faster.
    pub updating_reduction: f64,
    pub sampling_reduction: f64,
    pub total_reduction: f64,
    /// The baseline spends at least as long sampling as updating.
    pub sampling_dominates: bool,
}

fn reduction(base: f64, cand: f64) -> f64 {
    if base > 0.0 {
        1.0 - cand / base
    } else {
        0.0
    }
}

/// Times a fixed dense workload three times.
pub fn load_probes() -> [f64; 3] {
    let n = 160;
    let a = Matrix::from_vec(n, n, (0..n * n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect());
    let mut out = [0.0; 3];
    for slot in &mut out {
        let t = Instant::now();
        let mut acc = a.clone();
        for _ in 0..8 {
            acc = black_box(acc.matmul(&a));
            acc.as_mut_slice().iter_mut().for_each(|x| *x = x.tanh());
        }
        black_box(&acc);
        *slot = t.elapsed().as_secs_f64();
    }
    out
}

fn comparable(a: &RunConfig, b: &RunConfig) -> bool {
    let strip = |c: &RunConfig| {
        let mut c = c.clone();
        c.run.algo = crate::lns::SchedulerKind::Full;
        c.run.m = None;
        c.run.alns_sizes = None;
        c.run.blns_permutation = None;
        c.run.out = None;
        c.run.checkpoint = None;
        c
    };
    strip(a) == strip(b)
}

/// Trains `baseline` and then `candidate` under the same seeds and step
/// budget and compares their phase times. The configs may differ only in
/// scheduler settings and output paths.
pub fn benchmark_time(baseline: &RunConfig, candidate: &RunConfig) -> Result<BenchReport, HarnessError> {
    if !comparable(baseline, candidate) {
        return Err(HarnessError::Config(
            "benchmark configs may differ only in scheduler, neighborhood size and output paths".into(),
        ));
    }
    baseline.validate()?;
    candidate.validate()?;
    let probes = load_probes();
    let lo = probes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = probes.iter().cloned().fold(0.0, f64::max);
    let load_spread = (hi - lo) / lo;

    let baseline_metrics = train(baseline)?.metrics;
    let candidate_metrics = train(candidate)?.metrics;
    let (b, c) = (PhaseTimes::of(&baseline_metrics), PhaseTimes::of(&candidate_metrics));
    Ok(BenchReport {
        baseline: b,
        candidate: c,
        baseline_metrics,
        candidate_metrics,
        probes,
        load_spread,
        reliable: load_spread <= LOAD_SPREAD_LIMIT,
        updating_reduction: reduction(b.updating_s, c.updating_s),
        sampling_reduction: reduction(b.sampling_s, c.sampling_s),
        total_reduction: reduction(b.total_s(), c.total_s()),
        sampling_dominates: b.sampling_s >= b.updating_s,
    })
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| format!("{:+.1}%", -100.0 * x);
        writeln!(f, "{:<10} {:>12} {:>12} {:>12} {:>12}", "", "sampling_s", "updating_s", "total_s", "wall_s")?;
        for (name, t) in [("baseline", &self.baseline), ("candidate", &self.candidate)] {
            writeln!(
                f,
                "{name:<10} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
                t.sampling_s,
                t.updating_s,
                t.total_s(),
                t.wall_s
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>12} {:>12} {:>12}",
            "change",
            pct(self.sampling_reduction),
            pct(self.updating_reduction),
            pct(self.total_reduction)
        )?;
        writeln!(
            f,
            "final metric: baseline {:.4}, candidate {:.4}",
            self.baseline_metrics.final_metric, self.candidate_metrics.final_metric
        )?;
        write!(
            f,
            "load probes {:.4?} s, spread {:.1}%{}",
            self.probes,
            100.0 * self.load_spread,
            if self.reliable {
                String::new()
            } else {
                format!(" > {:.0}%: timings UNRELIABLE", 100.0 * LOAD_SPREAD_LIMIT)
            }
        )?;
        if self.sampling_dominates {
            write!(f, "\nsampling dominates training time on this host")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lns::SchedulerKind;

    fn cfg() -> RunConfig {
        let mut c = RunConfig::default();
        c.run.n_agents = 4;
        c.run.num_envs = 2;
        c.run.buffer_length = 25;
        c.run.total_env_steps = 2 * 25 * 8;
        c.run.nt = 4;
        c.run.eval_episodes = Some(1);
        c.env.episode_limit = 10;
        c.ppo.hidden_size = 16;
        c
    }

    #[test]
    fn only_scheduler_settings_may_differ() {
        let a = cfg();
        let mut b = cfg();
        b.run.algo = SchedulerKind::Blns;
        b.run.m = Some(2);
        assert!(comparable(&a, &b));
        b.run.seed = 9;
        assert!(benchmark_time(&a, &b).is_err());
    }

    #[test]
    fn self_comparison_reports_matching_runs() {
        let report = benchmark_time(&cfg(), &cfg()).unwrap();
        assert_eq!(report.baseline_metrics.update_stats, report.candidate_metrics.update_stats);
        assert_eq!(report.baseline_metrics.final_metric, report.candidate_metrics.final_metric);
        assert!(report.probes.iter().all(|&p| p > 0.0));
        assert!(report.updating_reduction.is_finite() && report.total_reduction < 1.0);
        assert!(report.to_string().contains("baseline"));
    }
}
