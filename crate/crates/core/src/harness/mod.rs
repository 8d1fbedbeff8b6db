//! Training orchestration: configuration, parallel sampling, evaluation,
//! timing, CSV reports and plots.

mod bench;
mod config;
mod eval;
mod plot;
mod report;
mod sampler;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use bench::{benchmark_time, load_probes, BenchReport, PhaseTimes, LOAD_SPREAD_LIMIT};
pub use config::{EvalProtocol, RunConfig, RunSection, DEFAULT_CONFIG};
pub use eval::{evaluate, median, EvalWindow, Policy, UniformPolicy};
pub use plot::plot_svg;
pub use report::{emit_csv, format_real, parse_csv, read_csv, to_csv_string, MetricsRow, RunMetrics, CSV_HEADER};
pub use sampler::Sampler;
pub use train::{build_scheduler, train, train_plain_mappo, TrainOutput};

use crate::envs::EnvError;
use crate::lns::LnsError;
use crate::mappo::MappoError;
use crate::nn::NnError;
use crate::pomdp::PomdpError;

/// Environment variable naming a config file to use in place of the defaults.
pub const CONFIG_ENV_VAR: &str = "MARL_LNS_CONFIG";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Lns(#[from] LnsError),
    #[error(transparent)]
    Mappo(#[from] MappoError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error("training diverged at LNS iteration {lns_iteration}, round {round}: {detail}")]
    Diverged {
        lns_iteration: usize,
        round: usize,
        detail: String,
    },
    #[error("plot failed: {0}")]
    Plot(String),
}

/// Independent random streams derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    /// Network initialization.
    Init,
    /// Minibatch shuffling.
    Shuffle,
    Scheduler,
    /// The evaluation environment and its action sampling.
    Eval,
    /// Construction seed of sampling environment `i`.
    Env(usize),
    /// Action sampling of worker `i`.
    Actions(usize),
}

impl SeedStream {
    fn tag(self) -> u64 {
        match self {
            Self::Init => 1,
            Self::Shuffle => 2,
            Self::Scheduler => 3,
            Self::Eval => 4,
            Self::Env(i) => (1 << 32) | i as u64,
            Self::Actions(i) => (2 << 32) | i as u64,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of `stream` under `master`: two rounds of splitmix64 over the master
/// seed and the stream tag, so every stream can be reseeded on its own.
pub fn derive_seed(master: u64, stream: SeedStream) -> u64 {
    splitmix64(splitmix64(master) ^ stream.tag())
}
