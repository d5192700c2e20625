//! SVG rendering: sample scatter over the training data, and per-step
//! modification-norm profiles.

use betacfg::toydata::Point;
use plotters::prelude::*;

const SIZE: (u32, u32) = (720, 560);
const COLORS: [RGBColor; 6] = [
    RGBColor(214, 39, 40),
    RGBColor(31, 119, 180),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

#[derive(Debug, Clone)]
pub struct Series<T> {
    pub label: String,
    pub points: Vec<T>,
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn plot_err(e: impl std::fmt::Display) -> String {
    format!("plot: {e}")
}

fn no_data(root: &DrawingArea<SVGBackend<'_>, plotters::coord::Shift>) -> Result<(), String> {
    let (w, h) = SIZE;
    root.draw(&Text::new(
        "no data",
        (w as i32 / 2 - 30, h as i32 / 2),
        ("sans-serif", 22).into_font().color(&BLACK),
    ))
    .map_err(plot_err)
}

/// Scatter of each sample series over optional grey background points.
pub fn scatter_svg(title: &str, background: &[Point], series: &[Series<Point>]) -> Result<String, String> {
    let all = background.iter().chain(series.iter().flat_map(|s| s.points.iter()));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let empty = series.iter().all(|s| s.points.is_empty());

    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("x1")
            .y_desc("x2")
            .draw()
            .map_err(plot_err)?;
        if !background.is_empty() {
            let grey = RGBColor(190, 190, 190);
            chart
                .draw_series(background.iter().map(|p| Circle::new((p[0], p[1]), 1, grey.filled())))
                .map_err(plot_err)?
                .label("data")
                .legend(move |(x, y)| Circle::new((x + 6, y), 3, grey.filled()));
        }
        for (i, s) in series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            chart
                .draw_series(s.points.iter().map(|p| Circle::new((p[0], p[1]), 2, c.filled())))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| Circle::new((x + 6, y), 3, c.filled()));
        }
        if !background.is_empty() || !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }
        if empty {
            no_data(&root)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(out)
}

/// Mean modification norm against `t`, one curve per series.
pub fn profile_svg(title: &str, series: &[Series<(usize, f64)>]) -> Result<String, String> {
    let t_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1000)
        .max(1) as f64;
    let y_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(0.0f64, f64::max);
    let y_top = if y_max > 0.0 { 1.1 * y_max } else { 1.0 };
    let empty = series.iter().all(|s| s.points.is_empty());

    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(0.0..t_max, 0.0..y_top)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("t")
            .y_desc("modification norm")
            .draw()
            .map_err(plot_err)?;
        for (i, s) in series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            let mut pts: Vec<(f64, f64)> = s.points.iter().map(|&(t, v)| (t as f64, v)).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            chart
                .draw_series(LineSeries::new(pts, c.stroke_width(2)))
                .map_err(plot_err)?
                .label(s.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], c.stroke_width(2)));
        }
        if !series.is_empty() {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }
        if empty {
            no_data(&root)?;
        }
        root.present().map_err(plot_err)?;
    }
    Ok(out)
}
