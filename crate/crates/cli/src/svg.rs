//! Hand-rolled SVG line charts for cohort confidence curves. Output is plain
//! deterministic text: fixed canvas, fixed palette, coordinates rounded to
//! two decimals.

use cropseries_core::analysis::CohortCurve;

use crate::error::CliError;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = [
    "#1f6f43", "#b8860b", "#8b3a62", "#2f6db3", "#a0522d", "#4a4a4a",
];

struct Frame {
    steps: usize,
}

impl Frame {
    fn x(&self, t: usize) -> f64 {
        let span = WIDTH - LEFT - RIGHT;
        let denom = (self.steps - 1).max(1) as f64;
        LEFT + span * t as f64 / denom
    }

    fn y(&self, v: f64) -> f64 {
        let span = HEIGHT - TOP - BOTTOM;
        TOP + span * (1.0 - v.clamp(0.0, 1.0))
    }
}

fn polyline(frame: &Frame, values: &[f64], color: &str) -> String {
    let points: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(t, v)| format!("{:.2},{:.2}", frame.x(t), frame.y(*v)))
        .collect();
    format!(
        "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
        points.join(" ")
    )
}

fn error_bars(frame: &Frame, mean: &[f64], std: &[f64], color: &str) -> String {
    let mut out = String::new();
    for (t, (m, s)) in mean.iter().zip(std).enumerate() {
        let x = frame.x(t);
        let lo = frame.y(m - s);
        let hi = frame.y(m + s);
        out.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{hi:.2}\" x2=\"{x:.2}\" y2=\"{lo:.2}\" stroke=\"{color}\" stroke-width=\"0.8\" opacity=\"0.6\"/>\n"
        ));
        for y in [hi, lo] {
            out.push_str(&format!(
                "  <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"0.8\" opacity=\"0.6\"/>\n",
                x - 2.5,
                x + 2.5
            ));
        }
    }
    out
}

/// Chart of per-class mean true-class confidence against prefix length,
/// one line and one error-bar family per class.
pub fn cohort_svg(
    curves: &[(String, CohortCurve)],
    threshold: Option<f64>,
) -> Result<String, CliError> {
    if curves.is_empty() {
        return Err(CliError::validation("no curves to plot"));
    }
    let steps = curves[0].1.mean.len();
    if steps == 0 {
        return Err(CliError::validation("curves have no steps"));
    }
    for (name, c) in curves {
        if c.mean.len() != steps || c.std.len() != steps {
            return Err(CliError::validation(format!(
                "curve '{name}' has {} steps, expected {steps}",
                c.mean.len()
            )));
        }
    }
    let frame = Frame { steps };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    svg.push_str(&format!(
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));

    for i in 0..=4 {
        let v = i as f64 * 0.25;
        let y = frame.y(v);
        svg.push_str(&format!(
            "  <line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            WIDTH - RIGHT
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\" fill=\"#444444\">{v:.2}</text>\n",
            LEFT - 8.0,
            y + 4.0
        ));
    }
    let mut t = 0;
    while t < steps {
        let x = frame.x(t);
        let y0 = frame.y(0.0);
        svg.push_str(&format!(
            "  <line x1=\"{x:.2}\" y1=\"{y0:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#bbbbbb\" stroke-width=\"1\"/>\n",
            y0 + 4.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#444444\">{t}</text>\n",
            y0 + 18.0
        ));
        t += 5;
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#222222\">prefix length (steps)</text>\n",
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#222222\" transform=\"rotate(-90 16 {:.2})\">mean true-class confidence</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));

    if let Some(th) = threshold {
        let y = frame.y(th);
        svg.push_str(&format!(
            "  <line x1=\"{LEFT:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#cc3333\" stroke-width=\"1\" stroke-dasharray=\"6 4\"/>\n",
            WIDTH - RIGHT
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#cc3333\">threshold {th}</text>\n",
            WIDTH - RIGHT + 6.0,
            y + 4.0
        ));
    }

    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        svg.push_str(&error_bars(&frame, &curve.mean, &curve.std, color));
        svg.push_str(&polyline(&frame, &curve.mean, color));
        let ly = TOP + 16.0 * i as f64 + 10.0;
        svg.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - RIGHT + 6.0,
            WIDTH - RIGHT + 26.0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#222222\">{name} (n={})</text>\n",
            WIDTH - RIGHT + 32.0,
            ly + 4.0,
            curve.count
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
