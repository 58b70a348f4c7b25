//! Minimal static SVG curve writer for quick inspection of run outputs.
//! Plotting proper is out of process; this is a convenience only.

use super::config::ExperimentConfig;
use super::csvio::MetricRow;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Mean metric per step per method, as one polyline each.
pub fn curves_from_rows(cfg: &ExperimentConfig, rows: &[MetricRow]) -> String {
    let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for method in &cfg.methods {
        let max_step = rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| r.step)
            .max();
        let Some(max_step) = max_step else { continue };
        let mut points = Vec::new();
        for step in 0..=max_step {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| &r.method == method && r.step == step && r.value.is_finite())
                .map(|r| r.value)
                .collect();
            if !values.is_empty() {
                points.push((step, values.iter().sum::<f64>() / values.len() as f64));
            }
        }
        series.push((method.clone(), points));
    }
    write_curves_svg(&series, cfg.experiment.metric_name())
}

/// Renders (step, value) series as polylines with a tiny legend.
pub fn write_curves_svg(series: &[(String, Vec<(usize, f64)>)], y_label: &str) -> String {
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    let mut max_x = 1usize;
    for (_, points) in series {
        for (x, y) in points {
            min_y = min_y.min(*y);
            max_y = max_y.max(*y);
            max_x = max_x.max(*x);
        }
    }
    if !min_y.is_finite() || !max_y.is_finite() {
        min_y = 0.0;
        max_y = 1.0;
    }
    if (max_y - min_y).abs() < 1e-12 {
        max_y = min_y + 1.0;
    }
    let to_px = |x: usize, y: f64| -> (f64, f64) {
        let px = MARGIN + (x as f64 / max_x as f64) * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - ((y - min_y) / (max_y - min_y)) * (HEIGHT - 2.0 * MARGIN);
        (px, py)
    };

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect width="100%" height="100%" fill="white"/>
<line x1="{MARGIN}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{y0}" stroke="black"/>
<text x="{xl}" y="{yl}" font-size="12" text-anchor="middle">step</text>
<text x="14" y="{ym}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {ym})">{y_label}</text>
"#,
        y0 = HEIGHT - MARGIN,
        x1 = WIDTH - MARGIN,
        xl = WIDTH / 2.0,
        yl = HEIGHT - 14.0,
        ym = HEIGHT / 2.0,
    );
    for (i, (name, points)) in series.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = points
            .iter()
            .map(|(x, y)| {
                let (px, py) = to_px(*x, *y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        let ly = MARGIN + 16.0 * i as f64;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"12\" height=\"3\" fill=\"{color}\"/><text x=\"{tx}\" y=\"{ty}\" font-size=\"11\">{name}</text>\n",
            x = WIDTH - MARGIN - 110.0,
            y = ly,
            tx = WIDTH - MARGIN - 92.0,
            ty = ly + 5.0,
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
