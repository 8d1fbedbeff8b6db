use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use marl_lns::bcd::{
    bcd_run, check_rate_bound, write_trace_csv, BlockOrder, BlockPartition, Quadratic, SmoothObjective, StepBound,
    StepRule, SumOfCosines, FAMILY_BLOCKS, FAMILY_COUPLING,
};
use marl_lns::bcd::{spd_family, stationarity_gap};
use marl_lns::envs::EnvId;
use marl_lns::harness::{
    benchmark_time, plot_svg, read_csv, train, EvalProtocol, RunConfig, CONFIG_ENV_VAR,
};
use marl_lns::lns::SchedulerKind;

#[derive(Parser)]
#[command(name = "marl-lns", version, about = "Large-neighborhood-search MARL training and benchmarks")]
struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, env = CONFIG_ENV_VAR)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its per-iteration CSV.
    Train(TrainArgs),
    /// Time a baseline scheduler against a candidate under identical seeds.
    Bench(BenchArgs),
    /// Run block coordinate descent and check the stationarity-gap rate.
    VerifyBcd(VerifyArgs),
    /// Render learning-curve and time-breakdown figures from run CSVs.
    Plot(PlotArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    env: Option<EnvId>,
    #[arg(long = "n-agents")]
    n_agents: Option<usize>,
    /// Number of LNS iterations.
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long = "total-steps")]
    total_steps: Option<usize>,
    #[arg(long = "num-envs")]
    num_envs: Option<usize>,
    #[arg(long = "buffer-length")]
    buffer_length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "eval-protocol")]
    eval_protocol: Option<Protocol>,
    #[arg(long = "eval-episodes")]
    eval_episodes: Option<usize>,
    /// Evaluate after every update instead of once per LNS iteration.
    #[arg(long = "eval-every-update")]
    eval_every_update: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    algo: Option<SchedulerKind>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the trained policy here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long = "baseline-algo", default_value = "full")]
    baseline_algo: SchedulerKind,
    #[arg(long = "baseline-m")]
    baseline_m: Option<usize>,
    #[arg(long)]
    algo: SchedulerKind,
    #[arg(long)]
    m: Option<usize>,
    /// CSV for the baseline run.
    #[arg(long = "baseline-out")]
    baseline_out: Option<PathBuf>,
    /// CSV for the candidate run.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    MedianFinalTen,
    #[value(name = "mean_100", alias = "mean-100")]
    Mean100,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    /// Block-coupled SPD quadratic.
    Quadratic,
    /// Non-convex chain of cosines.
    Cosines,
    /// The 3 x 3 grid of SPD quadratics (dims 8/16/64, condition 1/10/100).
    Suite,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Step {
    /// Exact block minimization.
    Exact,
    /// Block gradient steps of length at most 1/k.
    Harmonic,
    /// Plain block gradient steps.
    Gradient,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "quadratic")]
    family: Family,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = FAMILY_BLOCKS)]
    blocks: usize,
    /// Condition number of the quadratic.
    #[arg(long, default_value_t = 10.0)]
    cond: f64,
    #[arg(long, value_enum)]
    step: Option<Step>,
    /// Passes over all blocks.
    #[arg(long, default_value_t = 200)]
    sweeps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gap below which the run counts as converged.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run CSV; repeat to overlay several runs.
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn apply_run_args(cfg: &mut RunConfig, a: &RunArgs) {
    let r = &mut cfg.run;
    if let Some(v) = a.env {
        r.env = v;
    }
    if let Some(v) = a.n_agents {
        r.n_agents = v;
    }
    if let Some(v) = a.nt {
        r.nt = v;
    }
    if let Some(v) = a.total_steps {
        r.total_env_steps = v;
    }
    if let Some(v) = a.num_envs {
        r.num_envs = v;
    }
    if let Some(v) = a.buffer_length {
        r.buffer_length = v;
    }
    if let Some(v) = a.seed {
        r.seed = v;
    }
    if let Some(p) = a.eval_protocol {
        r.eval_protocol = match p {
            Protocol::MedianFinalTen => EvalProtocol::MedianFinalTen,
            Protocol::Mean100 => EvalProtocol::Mean100,
        };
    }
    if let Some(v) = a.eval_episodes {
        r.eval_episodes = Some(v);
    }
    r.eval_every_update |= a.eval_every_update;
}

fn run_train(cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let mut cfg = cfg;
    apply_run_args(&mut cfg, &args.run);
    if let Some(a) = args.algo {
        cfg.run.algo = a;
    }
    if args.m.is_some() {
        cfg.run.m = args.m;
    }
    if args.out.is_some() {
        cfg.run.out = args.out;
    }
    if args.checkpoint.is_some() {
        cfg.run.checkpoint = args.checkpoint;
    }
    let out = train(&cfg)?;
    let m = &out.metrics;
    for row in &m.rows {
        println!(
            "iter {:>3}  m={:<3} [{}]  steps {:>9}  metric {:>10.4}  sample {:>8.2}s  update {:>8.2}s",
            row.lns_iteration,
            row.m,
            row.neighborhood,
            row.env_steps,
            row.eval_metric,
            row.sampling_time_s,
            row.updating_time_s
        );
    }
    println!(
        "final metric {:.4}; sampling {:.2}s, updating {:.2}s, wall {:.2}s",
        m.final_metric,
        m.sampling_time_s(),
        m.updating_time_s(),
        m.wall_time_s()
    );
    if let Some(p) = &cfg.run.out {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_bench(cfg: RunConfig, args: BenchArgs) -> Result<()> {
    let mut base = cfg;
    apply_run_args(&mut base, &args.run);
    base.run.out = args.baseline_out;
    base.run.checkpoint = None;
    let mut cand = base.clone();
    base.run.algo = args.baseline_algo;
    base.run.m = args.baseline_m;
    cand.run.algo = args.algo;
    cand.run.m = args.m;
    cand.run.out = args.out;
    if base.run.algo != SchedulerKind::Alns {
        base.run.alns_sizes = None;
    }
    if cand.run.algo != SchedulerKind::Alns {
        cand.run.alns_sizes = None;
    }
    let report = benchmark_time(&base, &cand)?;
    println!(
        "baseline {} vs candidate {} on {} (n={}, {} steps)",
        base.run.algo, cand.run.algo, base.run.env, base.run.n_agents, base.run.total_env_steps
    );
    println!("{report}");
    Ok(())
}

struct Verdict {
    label: String,
    final_gap: f64,
    converged_sweep: Option<usize>,
    rate_c: f64,
    rate_ok: bool,
}

fn verify_one(obj: &dyn SmoothObjective, blocks: usize, rule: StepRule, args: &VerifyArgs, label: String) -> Result<Verdict> {
    let d = obj.dim();
    let part = BlockPartition::contiguous(d, blocks);
    let x0 = vec![0.0; d];
    let trace = bcd_run(obj, &part, BlockOrder::Cyclic, rule, &x0, args.sweeps * blocks)?;
    let bound = check_rate_bound(&trace)?;
    if let Some(path) = &args.trace {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace_csv(&trace, BufWriter::new(file))?;
    }
    Ok(Verdict {
        label,
        final_gap: stationarity_gap(obj, trace.final_point())?,
        converged_sweep: trace.gaps.iter().position(|&g| g < args.tol).map(|i| i / blocks + 1),
        rate_c: bound.c,
        rate_ok: bound.passed,
    })
}

fn run_verify(args: VerifyArgs) -> Result<bool> {
    let quadratic_rule = |q: &Quadratic| match args.step.unwrap_or(Step::Exact) {
        Step::Exact => StepRule::Exact,
        Step::Harmonic => StepRule::Gradient {
            lr: 1.0 / q.lipschitz(),
            bound: StepBound::Harmonic { scale: 1.0 },
        },
        Step::Gradient => StepRule::Gradient {
            lr: 1.0 / q.lipschitz(),
            bound: StepBound::Constant(f64::INFINITY),
        },
    };
    let mut verdicts = Vec::new();
    match args.family {
        Family::Quadratic => {
            if args.blocks == 0 || args.blocks > args.dim {
                bail!("--blocks must be between 1 and --dim");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let q = Quadratic::coupled_spd(args.dim, args.blocks, args.cond, FAMILY_COUPLING, &mut rng);
            let label = format!("quadratic d={} cond={}", args.dim, args.cond);
            verdicts.push(verify_one(&q, args.blocks, quadratic_rule(&q), &args, label)?);
        }
        Family::Suite => {
            for member in spd_family() {
                let q = member.build(args.seed);
                let label = format!("quadratic d={} cond={}", member.dim, member.cond);
                verdicts.push(verify_one(&q, FAMILY_BLOCKS, quadratic_rule(&q), &args, label)?);
            }
        }
        Family::Cosines => {
            if args.blocks == 0 || args.blocks > args.dim {
                bail!("--blocks must be between 1 and --dim");
            }
            let obj = SumOfCosines {
                d: args.dim,
                coupling: 0.5,
                ridge: 0.1,
            };
            let bound = match args.step.unwrap_or(Step::Harmonic) {
                Step::Exact => bail!("the cosine family has no exact block minimizer; use --step harmonic or gradient"),
                Step::Harmonic => StepBound::Harmonic { scale: 1.0 },
                Step::Gradient => StepBound::Constant(f64::INFINITY),
            };
            let rule = StepRule::Gradient {
                lr: 1.0 / obj.lipschitz(),
                bound,
            };
            verdicts.push(verify_one(&obj, args.blocks, rule, &args, format!("cosines d={}", args.dim))?);
        }
    }
    let mut ok = true;
    for v in &verdicts {
        let conv = v
            .converged_sweep
            .map_or_else(|| "not reached".to_string(), |s| format!("sweep {s}"));
        println!(
            "{:<28} final gap {:.3e}  gap < {:e}: {:<12}  rate c {:.3e} {}",
            v.label,
            v.final_gap,
            args.tol,
            conv,
            v.rate_c,
            if v.rate_ok { "bounded" } else { "UNBOUNDED" }
        );
        ok &= v.rate_ok;
    }
    Ok(ok)
}

fn run_plot(args: PlotArgs) -> Result<()> {
    let runs = args
        .inputs
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, read_csv(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    plot_svg(&runs, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| -> Result<bool> {
        match cli.command {
            Command::Train(a) => run_train(base_config(cli.config.as_deref())?, a).map(|_| true),
            Command::Bench(a) => run_bench(base_config(cli.config.as_deref())?, a).map(|_| true),
            Command::VerifyBcd(a) => run_verify(a),
            Command::Plot(a) => run_plot(a).map(|_| true),
        }
    })();
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
