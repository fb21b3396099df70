//! Grouped bar charts of variant comparisons, rendered to SVG.

use std::path::Path;

use ainet::metrics::MeanStd;
use ainet::transfer::ComparisonTable;
use plotters::prelude::*;

use crate::error::{CliError, CliResult};

const METRICS: [(&str, RGBColor); 3] = [
    ("OA", RGBColor(31, 119, 180)),
    ("AA", RGBColor(255, 127, 14)),
    ("Kappa", RGBColor(44, 160, 44)),
];

fn chart_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("chart rendering failed: {e}"))
}

/// One group per variant, one bar per metric (percent), whiskers at one
/// standard deviation when a variant has more than one run.
pub fn grouped_bars_svg(table: &ComparisonTable, path: &Path) -> CliResult<()> {
    let groups = table.summary.len();
    if groups == 0 {
        return Err(CliError::Data(format!("no runs to plot for {}", table.target)));
    }
    let labels: Vec<&'static str> = table.summary.iter().map(|s| s.variant.label()).collect();
    let width = 160 + 130 * groups as u32;

    let root = SVGBackend::new(path, (width.max(480), 480)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_err)?;
    let title = format!(
        "{}: {} training samples per class",
        table.target, table.samples_per_class
    );
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(16)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-0.5f64..groups as f64 - 0.5, 0f64..105f64)
        .map_err(chart_err)?;

    let label_for = |v: &f64| {
        let i = v.round();
        if (v - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < groups {
            labels[i as usize].to_string()
        } else {
            String::new()
        }
    };
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups)
        .x_label_formatter(&label_for)
        .y_desc("percent")
        .draw()
        .map_err(chart_err)?;

    let slot = 0.8 / METRICS.len() as f64;
    for (k, (name, color)) in METRICS.iter().enumerate() {
        let pick = |s: &ainet::transfer::VariantSummary| -> MeanStd {
            match k {
                0 => s.overall_accuracy,
                1 => s.average_accuracy,
                _ => s.kappa,
            }
        };
        let mut bars = Vec::new();
        let mut whiskers = Vec::new();
        for (g, s) in table.summary.iter().enumerate() {
            let m = pick(s);
            let (mean, std) = (100.0 * m.mean, 100.0 * m.std);
            let x0 = g as f64 - 0.4 + k as f64 * slot;
            let (x1, xc) = (x0 + slot * 0.9, x0 + slot * 0.45);
            bars.push(Rectangle::new([(x0, 0.0), (x1, mean.max(0.0))], color.filled()));
            if m.n > 1 && std > 0.0 {
                let (lo, hi) = (mean - std, mean + std);
                let cap = slot * 0.2;
                whiskers.push(PathElement::new(vec![(xc, lo), (xc, hi)], BLACK));
                whiskers.push(PathElement::new(vec![(xc - cap, lo), (xc + cap, lo)], BLACK));
                whiskers.push(PathElement::new(vec![(xc - cap, hi), (xc + cap, hi)], BLACK));
            }
        }
        let color = *color;
        chart
            .draw_series(bars)
            .map_err(chart_err)?
            .label(*name)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        chart.draw_series(whiskers).map_err(chart_err)?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(chart_err)?;
    root.present().map_err(chart_err)?;
    Ok(())
}
