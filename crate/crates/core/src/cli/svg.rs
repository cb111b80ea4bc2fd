//! Minimal static SVG scatter and line plots for diagnostics.

use std::fmt::Write;

use ndarray::ArrayView2;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = (f64, f64)> + 'a) -> Self {
        let (mut x, mut y) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
        for (a, b) in points.filter(|(a, b)| a.is_finite() && b.is_finite()) {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
        let pad = |r: (f64, f64)| {
            if !r.0.is_finite() {
                (-1.0, 1.0)
            } else if r.1 - r.0 < 1e-12 {
                (r.0 - 0.5, r.1 + 0.5)
            } else {
                let m = 0.05 * (r.1 - r.0);
                (r.0 - m, r.1 + m)
            }
        };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, a: f64) -> f64 {
        MARGIN + (a - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, b: f64) -> f64 {
        HEIGHT - MARGIN - (b - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(out: &mut String, title: &str, frame: &Frame) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\
         <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
        WIDTH / 2.0,
        escape(title),
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN,
    );
    let label = |out: &mut String, x: f64, y: f64, anchor: &str, v: f64| {
        let _ = write!(
            out,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{v:.3}</text>"
        );
    };
    label(out, MARGIN, HEIGHT - MARGIN + 14.0, "start", frame.x.0);
    label(out, WIDTH - MARGIN, HEIGHT - MARGIN + 14.0, "end", frame.x.1);
    label(out, MARGIN - 4.0, HEIGHT - MARGIN, "end", frame.y.0);
    label(out, MARGIN - 4.0, MARGIN + 8.0, "end", frame.y.1);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of the first two columns of each layer, one color per layer.
pub fn scatter(title: &str, layers: &[ArrayView2<f64>]) -> String {
    let frame = Frame::fit(layers.iter().flat_map(|l| l.rows().into_iter().map(|r| (r[0], r[1]))));
    let mut out = String::new();
    open(&mut out, title, &frame);
    for (k, layer) in layers.iter().enumerate() {
        let _ = write!(out, "<g fill=\"{}\" fill-opacity=\"0.5\">", COLORS[k % COLORS.len()]);
        for r in layer.rows() {
            if r[0].is_finite() && r[1].is_finite() {
                let _ = write!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\"/>", frame.px(r[0]), frame.py(r[1]));
            }
        }
        out.push_str("</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Polylines through `(x, y)` series, one color per series.
pub fn lines(title: &str, series: &[(&[f64], &[f64])]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|(x, y)| x.iter().copied().zip(y.iter().copied())));
    let mut out = String::new();
    open(&mut out, title, &frame);
    for (k, (x, y)) in series.iter().enumerate() {
        let pts: Vec<String> = x
            .iter()
            .zip(y.iter())
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", frame.px(*a), frame.py(*b)))
            .collect();
        let _ = write!(
            out,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            COLORS[k % COLORS.len()],
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scatter_is_well_formed() {
        let a = array![[0.0, 0.0], [1.0, 2.0], [f64::NAN, 1.0]];
        let svg = scatter("a <b>", &[a.view()]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt;b&gt;"));
    }

    #[test]
    fn degenerate_ranges_are_padded() {
        let svg = lines("flat", &[(&[0.0, 1.0], &[3.0, 3.0])]);
        assert!(svg.contains("<polyline") && !svg.contains("NaN"));
    }
}
