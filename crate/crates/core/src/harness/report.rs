use std::path::Path;

use plotters::prelude::*;

use super::sweep::{SweepAxis, SweepTable};
use crate::error::{DmaeError, Result};

const PALETTE: [RGBColor; 5] = [BLUE, RED, GREEN, MAGENTA, BLACK];

fn plot_err<E: std::fmt::Display>(e: E) -> DmaeError {
    DmaeError::Plot(e.to_string())
}

/// Draws validation AUC against the swept hyperparameter as an SVG. The
/// `l × n` grid gets one line per `l` over `n`; grid points are placed at
/// evenly spaced positions labelled with their values.
pub fn plot_sweep(table: &SweepTable, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(DmaeError::EmptyInput("sweep table"));
    }
    // (series label, x tick values, aucs)
    let mut series: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    if table.axis == SweepAxis::LN {
        for row in &table.rows {
            let (l, n) = (row.settings[0].1, row.settings[1].1);
            let label = format!("l = {l}");
            match series.iter_mut().find(|s| s.0 == label) {
                Some(s) => {
                    s.1.push(n);
                    s.2.push(row.metrics.auc);
                }
                None => series.push((label, vec![n], vec![row.metrics.auc])),
            }
        }
    } else {
        series.push((
            "auc".to_string(),
            table.rows.iter().map(|r| r.settings[0].1).collect(),
            table.rows.iter().map(|r| r.metrics.auc).collect(),
        ));
    }
    let ticks = series[0].1.clone();
    let (lo, hi) = table
        .rows
        .iter()
        .map(|r| r.metrics.auc)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.1).max(1e-3);
    let x_name = if table.axis == SweepAxis::LN { "n" } else { table.axis.name() };

    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("validation AUC vs {}", table.axis), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5f64..(ticks.len() as f64 - 0.5), (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_name)
        .y_desc("AUC")
        .x_labels(ticks.len())
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < ticks.len() {
                format!("{}", ticks[i as usize])
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    for (k, (label, _, aucs)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(
                aucs.iter().enumerate().map(|(i, &a)| (i as f64, a)),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
