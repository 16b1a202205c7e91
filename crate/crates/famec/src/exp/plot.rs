//! Dependency-free SVG line plots for sweep outputs.

use std::io::Write;
use std::path::Path;

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

/// One labeled curve; an optional band draws a shaded (lo, hi) region.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64, f64)>>,
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_series(series: &[Series]) -> Self {
        let mut f = Frame { x_min: f64::INFINITY, x_max: f64::NEG_INFINITY, y_min: f64::INFINITY, y_max: f64::NEG_INFINITY };
        for s in series {
            for &(x, y) in &s.points {
                f.x_min = f.x_min.min(x);
                f.x_max = f.x_max.max(x);
                f.y_min = f.y_min.min(y);
                f.y_max = f.y_max.max(y);
            }
            if let Some(band) = &s.band {
                for &(x, lo, hi) in band {
                    f.x_min = f.x_min.min(x);
                    f.x_max = f.x_max.max(x);
                    f.y_min = f.y_min.min(lo);
                    f.y_max = f.y_max.max(hi);
                }
            }
        }
        if !f.x_min.is_finite() {
            f = Frame { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
        }
        if f.x_max == f.x_min {
            f.x_max = f.x_min + 1.0;
        }
        if f.y_max == f.y_min {
            f.y_max = f.y_min + 1.0;
        }
        // Breathing room on the y axis.
        let pad = (f.y_max - f.y_min) * 0.05;
        f.y_min -= pad;
        f.y_max += pad;
        f
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

fn sx(frame: &Frame, x: f64) -> f64 {
    MARGIN_L + (x - frame.x_min) / (frame.x_max - frame.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
}

fn sy(frame: &Frame, y: f64) -> f64 {
    HEIGHT - MARGIN_B
        - (y - frame.y_min) / (frame.y_max - frame.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
}

fn tick_values(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Render a deterministic SVG line plot.
pub fn line_plot_svg(
    path: &Path,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
) -> std::io::Result<()> {
    let frame = Frame::from_series(series);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    // Axes.
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for v in tick_values(frame.x_min, frame.x_max, 5) {
        let x = sx(&frame, v);
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            HEIGHT - MARGIN_B + 18.0,
            fmt(v)
        ));
    }
    for v in tick_values(frame.y_min, frame.y_max, 5) {
        let y = sy(&frame, v);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{MARGIN_L}\" y2=\"{y}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0,
            fmt(v)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{xlabel}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{ylabel}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            if band.len() >= 2 {
                let mut d = String::from("M");
                for &(x, lo, _) in band {
                    d.push_str(&format!(" {} {}", sx(&frame, x), sy(&frame, lo)));
                }
                for &(x, _, hi) in band.iter().rev() {
                    d.push_str(&format!(" L {} {}", sx(&frame, x), sy(&frame, hi)));
                }
                d.push_str(" Z");
                out.push_str(&format!(
                    "<path d=\"{d}\" fill=\"{color}\" opacity=\"0.15\" stroke=\"none\"/>\n"
                ));
            }
        }
        if !s.points.is_empty() {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", sx(&frame, x), sy(&frame, y)))
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
                pts.join(" ")
            ));
            for &(x, y) in &s.points {
                out.push_str(&format!(
                    "<circle cx=\"{}\" cy=\"{}\" r=\"2.6\" fill=\"{color}\"/>\n",
                    sx(&frame, x),
                    sy(&frame, y)
                ));
            }
        }
        // Legend.
        let ly = MARGIN_T + 16.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_R - 150.0,
            WIDTH - MARGIN_R - 126.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_R - 120.0,
            ly + 4.0,
            s.label
        ));
    }
    out.push_str("</svg>\n");

    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_renders_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        let series = vec![
            Series {
                label: "proposed".into(),
                points: vec![(10.0, 0.5), (16.0, 0.4), (24.0, 0.32)],
                band: Some(vec![(10.0, 0.45, 0.55), (16.0, 0.36, 0.44), (24.0, 0.3, 0.35)]),
            },
            Series { label: "fpa".into(), points: vec![(10.0, 0.8), (24.0, 0.8)], band: None },
        ];
        line_plot_svg(&a, "delay", "length", "seconds", &series).unwrap();
        line_plot_svg(&b, "delay", "length", "seconds", &series).unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap());
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        assert!(text.contains("proposed"));
    }

    #[test]
    fn empty_series_still_renders_axes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.svg");
        line_plot_svg(&p, "t", "x", "y", &[]).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("</svg>"));
    }
}
