use std::path::Path;

use plotters::prelude::*;

use super::{HarnessError, MetricsRow};

const SAMPLING_COLOR: RGBColor = RGBColor(0x4c, 0x72, 0xb0);
const UPDATING_COLOR: RGBColor = RGBColor(0xdd, 0x84, 0x52);

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

/// Writes an SVG with the learning curve of each run (evaluation metric
/// against environment steps) beside a stacked bar of each run's total
/// sampling and updating time.
pub fn plot_svg(runs: &[(String, Vec<MetricsRow>)], out: &Path) -> Result<(), HarnessError> {
    let root = SVGBackend::new(out, (1100, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (left, right) = root.split_horizontally(620);

    let max_steps = runs
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.env_steps))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let (lo, hi) = span(runs.iter().flat_map(|(_, rows)| rows.iter().map(|r| r.eval_metric)));
    let mut curve = ChartBuilder::on(&left)
        .caption("Learning curve", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..max_steps, lo..hi)
        .map_err(plot_err)?;
    curve
        .configure_mesh()
        .x_desc("environment steps")
        .y_desc("evaluation metric")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, rows)) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.env_steps as f64, r.eval_metric)).collect();
        curve
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    curve
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;

    let totals: Vec<(f64, f64)> = runs
        .iter()
        .map(|(_, rows)| {
            (
                rows.iter().map(|r| r.sampling_time_s).sum(),
                rows.iter().map(|r| r.updating_time_s).sum(),
            )
        })
        .collect();
    let top = totals.iter().map(|(s, u)| s + u).fold(0.0, f64::max).max(1e-9) * 1.1;
    let mut bars = ChartBuilder::on(&right)
        .caption("Training time", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5..runs.len() as f64 - 0.5, 0.0..top)
        .map_err(plot_err)?;
    let names: Vec<String> = runs.iter().map(|(n, _)| n.clone()).collect();
    bars.configure_mesh()
        .disable_x_mesh()
        .x_labels(runs.len().max(1))
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("seconds")
        .draw()
        .map_err(plot_err)?;
    let rect = |i: usize, y0: f64, y1: f64, color: RGBColor| {
        let x = i as f64;
        Rectangle::new([(x - 0.3, y0), (x + 0.3, y1)], color.filled())
    };
    bars.draw_series(totals.iter().enumerate().map(|(i, &(s, _))| rect(i, 0.0, s, SAMPLING_COLOR)))
        .map_err(plot_err)?
        .label("sampling")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], SAMPLING_COLOR.filled()));
    bars.draw_series(totals.iter().enumerate().map(|(i, &(s, u))| rect(i, s, s + u, UPDATING_COLOR)))
        .map_err(plot_err)?
        .label("updating")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], UPDATING_COLOR.filled()));
    bars.configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
