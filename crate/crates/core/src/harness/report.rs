use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::mappo::TrainStats;

pub const CSV_HEADER: &str =
    "lns_iteration,m,neighborhood,env_steps,eval_metric,sampling_time_s,updating_time_s,cumulative_wall_s";

/// One LNS iteration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub lns_iteration: usize,
    pub m: usize,
    /// Agent ids joined by `;`.
    pub neighborhood: String,
    /// Environment steps sampled so far, including this iteration.
    pub env_steps: usize,
    pub eval_metric: f64,
    pub sampling_time_s: f64,
    pub updating_time_s: f64,
    /// Wall time since the start of training at the end of this iteration.
    pub cumulative_wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    /// Statistics of every update, in order.
    pub update_stats: Vec<TrainStats>,
    /// Every evaluation, in order (one per LNS iteration, or one per update
    /// with per-update evaluation).
    pub evaluations: Vec<f64>,
    /// The run's reported metric under its evaluation protocol.
    pub final_metric: f64,
}

impl RunMetrics {
    pub fn env_steps(&self) -> usize {
        self.rows.last().map_or(0, |r| r.env_steps)
    }

    pub fn sampling_time_s(&self) -> f64 {
        self.rows.iter().map(|r| r.sampling_time_s).sum()
    }

    pub fn updating_time_s(&self) -> f64 {
        self.rows.iter().map(|r| r.updating_time_s).sum()
    }

    pub fn wall_time_s(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative_wall_s)
    }
}

/// `x` rounded to six significant digits, printed in its shortest form.
pub fn format_real(x: f64) -> String {
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub fn to_csv_string(metrics: &RunMetrics) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &metrics.rows {
        let fields = [
            r.lns_iteration.to_string(),
            r.m.to_string(),
            r.neighborhood.clone(),
            r.env_steps.to_string(),
            format_real(r.eval_metric),
            format_real(r.sampling_time_s),
            format_real(r.updating_time_s),
            format_real(r.cumulative_wall_s),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_csv(metrics: &RunMetrics, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, to_csv_string(metrics)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let header = text.lines().next().unwrap_or("");
    if header != CSV_HEADER {
        return Err(HarnessError::Config(format!(
            "{}: unexpected header `{header}`",
            origin.display()
        )));
    }
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<MetricsRow>, _>>()
        .map_err(|source| HarnessError::Csv {
            path: origin.to_path_buf(),
            source,
        })
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(i: usize) -> MetricsRow {
        MetricsRow {
            lns_iteration: i,
            m: 4,
            neighborhood: format!("{};{};{};{}", i % 8, (i + 1) % 8, (i + 2) % 8, (i + 3) % 8),
            env_steps: 3200 * (i + 1),
            eval_metric: -12.345678901 + i as f64,
            sampling_time_s: 1.0 / 3.0,
            updating_time_s: 2e-7,
            cumulative_wall_s: 12345.6789 * (i + 1) as f64,
        }
    }

    #[test]
    fn empty_run_writes_only_the_header() {
        assert_eq!(to_csv_string(&RunMetrics::default()), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn eight_iterations_give_nine_lines() {
        let metrics = RunMetrics {
            rows: (0..8).map(row).collect(),
            ..RunMetrics::default()
        };
        let text = to_csv_string(&metrics);
        assert_eq!(text.lines().count(), 9);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0,4,0;1;2;3,3200,-12.3457,0.333333,0.0000002,12345.7"
        );
    }

    #[test]
    fn emit_and_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let metrics = RunMetrics {
            rows: (0..3).map(row).collect(),
            ..RunMetrics::default()
        };
        emit_csv(&metrics, &path).unwrap();
        let back = read_csv(&path).unwrap();
        for (a, b) in metrics.rows.iter().zip(&back) {
            assert_eq!((a.lns_iteration, a.m, &a.neighborhood, a.env_steps), (b.lns_iteration, b.m, &b.neighborhood, b.env_steps));
            for (x, y) in [
                (a.eval_metric, b.eval_metric),
                (a.sampling_time_s, b.sampling_time_s),
                (a.updating_time_s, b.updating_time_s),
                (a.cumulative_wall_s, b.cumulative_wall_s),
            ] {
                assert!((x - y).abs() <= 5e-6 * x.abs());
            }
        }
    }

    #[test]
    fn io_errors_name_the_path() {
        let err = emit_csv(&RunMetrics::default(), Path::new("/nonexistent/dir/run.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/run.csv"));
        assert!(parse_csv("a,b\n", Path::new("x.csv")).is_err());
    }

    proptest! {
        #[test]
        fn six_significant_digits(x in -1e12f64..1e12) {
            let y: f64 = format_real(x).parse().unwrap();
            prop_assert!((x - y).abs() <= 5.000001e-6 * x.abs());
        }
    }
}
