use std::path::Path;

use plotters::prelude::*;

use super::{HarnessError, LogRecord};

fn err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

fn panel<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    t_end: f64,
    series: &[(&[(f64, f64)], RGBColor)],
) -> Result<(), HarnessError> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (pts, _) in series {
        for &(_, y) in pts.iter() {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let mut chart = ChartBuilder::on(area)
        .margin(10)
        .build_cartesian_2d(0.0..t_end.max(1e-3), (lo - pad)..(hi + pad))
        .map_err(err)?;
    chart.configure_mesh().disable_x_mesh().draw().map_err(err)?;
    for (pts, color) in series {
        chart.draw_series(LineSeries::new(pts.iter().copied(), color)).map_err(err)?;
    }
    Ok(())
}

/// Writes an SVG with three stacked traces over time: CoM height above
/// terrain, forward and vertical velocity, and the takeoff/flight/landing
/// phase indicators offset for readability.
pub fn plot_trajectory(log: &[LogRecord], path: &Path) -> Result<(), HarnessError> {
    let root = SVGBackend::new(path, (1000, 900)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let areas = root.split_evenly((3, 1));
    let t_end = log.last().map(|r| r.time).unwrap_or(1.0);
    let pick = |f: &dyn Fn(&LogRecord) -> f64| -> Vec<(f64, f64)> { log.iter().map(|r| (r.time, f(r))).collect() };
    let height = pick(&|r| r.height);
    let vx = pick(&|r| r.heading_velocity[0]);
    let vz = pick(&|r| r.velocity[2]);
    let takeoff = pick(&|r| r.phase[0] as f64 * 0.8 + 2.0);
    let flight = pick(&|r| r.phase[1] as f64 * 0.8 + 1.0);
    let land = pick(&|r| r.phase[2] as f64 * 0.8);
    panel(&areas[0], t_end, &[(&height, BLUE)])?;
    panel(&areas[1], t_end, &[(&vx, GREEN), (&vz, RED)])?;
    panel(&areas[2], t_end, &[(&takeoff, RED), (&flight, BLUE), (&land, BLACK)])?;
    root.present().map_err(err)?;
    Ok(())
}
