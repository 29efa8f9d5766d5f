//! Tiny dependency-free SVG line charts for the sweep reports.

/// One named series of (x, y) points.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 150.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

fn transform(v: f64, lo: f64, hi: f64, log: bool) -> f64 {
    if log {
        (v.max(1e-300).ln() - lo) / (hi - lo)
    } else {
        (v - lo) / (hi - lo)
    }
}

/// Renders a line chart as an SVG document. Axes may be logarithmic; points
/// with non-finite coordinates are skipped.
pub fn line_chart_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_x: bool,
    log_y: bool,
) -> String {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x_lo, mut x_hi) = finite
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)));
    let (mut y_lo, mut y_hi) = finite
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    if finite.is_empty() {
        x_lo = 0.0;
        x_hi = 1.0;
        y_lo = 0.0;
        y_hi = 1.0;
    }
    if log_x {
        x_lo = x_lo.max(1e-300).ln();
        x_hi = x_hi.max(1e-300).ln();
    }
    if log_y {
        y_lo = y_lo.max(1e-300).ln();
        y_hi = y_hi.max(1e-300).ln();
    }
    if x_hi - x_lo < 1e-12 {
        x_hi = x_lo + 1.0;
    }
    if y_hi - y_lo < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    let px = |x: f64| ML + transform(x, x_lo, x_hi, log_x) * (W - ML - MR);
    let py = |y: f64| H - MB - transform(y, y_lo, y_hi, log_y) * (H - MT - MB);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR
    ));
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        escape(y_label)
    ));
    // tick labels at the extremes
    let fmt_tick = |v: f64, log: bool| {
        let raw = if log { v.exp() } else { v };
        if raw != 0.0 && (raw.abs() >= 1e4 || raw.abs() < 1e-2) {
            format!("{raw:.1e}")
        } else {
            format!("{raw:.3}")
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        }
    };
    svg.push_str(&format!(
        "<text x=\"{ML}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        H - MB + 16.0,
        fmt_tick(x_lo, log_x)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        W - MR,
        H - MB + 16.0,
        fmt_tick(x_hi, log_x)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
        ML - 6.0,
        H - MB + 4.0,
        fmt_tick(y_lo, log_y)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
        ML - 6.0,
        MT + 4.0,
        fmt_tick(y_hi, log_y)
    ));
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    px(if log_x { x.max(1e-300).ln() } else { x }),
                    py(if log_y { y.max(1e-300).ln() } else { y })
                )
            })
            .collect();
        if pts.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                pts.join(" ")
            ));
        }
        for p in &pts {
            let mut it = p.split(',');
            let (cx, cy) = (it.next().unwrap(), it.next().unwrap());
            svg.push_str(&format!(
                "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
        let ly = MT + 14.0 * k as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            W - MR + 10.0,
            ly
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            W - MR + 25.0,
            ly + 9.0,
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_series_and_labels() {
        let s = vec![
            Series {
                label: "dca".into(),
                points: vec![(1.0, 10.0), (100.0, 200.0), (10000.0, 500.0)],
            },
            Series {
                label: "agca".into(),
                points: vec![(1.0, 10.0), (100.0, 12.0), (10000.0, 15.0)],
            },
        ];
        let svg = line_chart_svg("iterations vs DR", "DR", "iterations", &s, true, false);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("dca"));
        assert!(svg.contains("agca"));
        assert!(svg.contains("iterations vs DR"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_series_still_valid() {
        let svg = line_chart_svg("empty", "x", "y", &[], false, false);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
