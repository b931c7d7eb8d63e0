//! Dependency-free SVG plotting: line plots and histograms as plain text,
//! deterministic for identical inputs.

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 500.0;
const ML: f64 = 72.0; // left margin
const MR: f64 = 24.0;
const MT: f64 = 44.0;
const MB: f64 = 56.0;

pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
                ymin = ymin.min(y);
                ymax = ymax.max(y);
            }
        }
    }
    if !xmin.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if xmax <= xmin {
        xmax = xmin + 1.0;
    }
    let pad = 0.05 * (ymax - ymin);
    let pad = if pad > 0.0 { pad } else { 0.5 * ymax.abs().max(1.0) };
    (xmin, xmax, ymin - pad, ymax + pad)
}

fn axes(out: &mut String, title: &str, x_label: &str, y_label: &str, b: (f64, f64, f64, f64)) {
    let (xmin, xmax, ymin, ymax) = b;
    let px = |x: f64| ML + (x - xmin) / (xmax - xmin) * (WIDTH - ML - MR);
    let py = |y: f64| HEIGHT - MB - (y - ymin) / (ymax - ymin) * (HEIGHT - MT - MB);
    out.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444\"/>\n",
        WIDTH - ML - MR,
        HEIGHT - MT - MB
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">{title}</text>\n",
        0.5 * WIDTH
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">{x_label}</text>\n",
        0.5 * WIDTH,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" transform=\"rotate(-90 18 {:.1})\">{y_label}</text>\n",
        0.5 * HEIGHT,
        0.5 * HEIGHT
    ));
    for i in 0..=5 {
        let fx = xmin + (xmax - xmin) * i as f64 / 5.0;
        let fy = ymin + (ymax - ymin) * i as f64 / 5.0;
        out.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"#ccc\" stroke-dasharray=\"3,3\"/>\n",
            px(fx),
            MT,
            HEIGHT - MB
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            px(fx),
            HEIGHT - MB + 16.0,
            fmt_tick(fx)
        ));
        out.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1:.1}\" x2=\"{2:.1}\" y2=\"{1:.1}\" stroke=\"#ccc\" stroke-dasharray=\"3,3\"/>\n",
            ML,
            py(fy),
            WIDTH - MR
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">{}</text>\n",
            ML - 6.0,
            py(fy) + 4.0,
            fmt_tick(fy)
        ));
    }
}

/// Renders one or more (x, y) series as an SVG line plot.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let b = bounds(series);
    let (xmin, xmax, ymin, ymax) = b;
    let px = |x: f64| ML + (x - xmin) / (xmax - xmin) * (WIDTH - ML - MR);
    let py = |y: f64| HEIGHT - MB - (y - ymin) / (ymax - ymin) * (HEIGHT - MT - MB);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    axes(&mut out, title, x_label, y_label, b);
    for s in series {
        let mut pts = String::new();
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                pts.push_str(&format!("{:.2},{:.2} ", px(x), py(y)));
            }
        }
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            pts.trim_end(),
            s.color
        ));
    }
    // legend
    for (i, s) in series.iter().enumerate() {
        let y = MT + 18.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{y:.1}\" x2=\"{1:.1}\" y2=\"{y:.1}\" stroke=\"{2}\" stroke-width=\"2\"/>\n",
            ML + 10.0,
            ML + 34.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\">{}</text>\n",
            ML + 40.0,
            y + 4.0,
            s.label
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Density-normalized histogram of `samples` with an overlaid model density.
pub fn histogram_with_pdf(
    title: &str,
    x_label: &str,
    samples: &[f64],
    bins: usize,
    pdf: impl Fn(f64) -> f64,
    pdf_label: &str,
) -> String {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    let bw = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let i = (((s - lo) / bw) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = samples.len().max(1) as f64;
    let dens: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * bw)).collect();
    let curve: Vec<(f64, f64)> = (0..400)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 399.0;
            (x, pdf(x))
        })
        .collect();
    let ymax = dens
        .iter()
        .cloned()
        .chain(curve.iter().map(|&(_, y)| y))
        .fold(0.0f64, f64::max);
    let b = (lo, hi, 0.0, 1.05 * ymax.max(1e-12));
    let (xmin, xmax, ymin, ymax) = b;
    let px = |x: f64| ML + (x - xmin) / (xmax - xmin) * (WIDTH - ML - MR);
    let py = |y: f64| HEIGHT - MB - (y - ymin) / (ymax - ymin) * (HEIGHT - MT - MB);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    axes(&mut out, title, x_label, "density (1/s)", b);
    for (i, &d) in dens.iter().enumerate() {
        let x0 = lo + bw * i as f64;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f77b4\" fill-opacity=\"0.55\" stroke=\"#1f77b4\"/>\n",
            px(x0),
            py(d),
            (px(x0 + bw) - px(x0)).max(0.5),
            (py(0.0) - py(d)).max(0.0)
        ));
    }
    let mut pts = String::new();
    for &(x, y) in &curve {
        if y.is_finite() {
            pts.push_str(&format!("{:.2},{:.2} ", px(x), py(y.min(ymax))));
        }
    }
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
        pts.trim_end()
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\" fill=\"#d62728\">{pdf_label}</text>\n",
        ML + 10.0,
        MT + 18.0
    ));
    out.push_str("</svg>\n");
    out
}
