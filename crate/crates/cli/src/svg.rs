//! Minimal self-contained SVG line plots: inline styling, no scripts, one
//! polyline per data series, linear axes with a handful of labeled ticks.
//! These are static figures to accompany the CSV tables, not a UI.

/// One plotted curve.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.to_string(), points }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 58.0;
const PALETTE: [&str; 6] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Fixed-notation coordinate/label formatting (deterministic, locale-free).
fn fmt_coord(v: f64) -> String {
    let s = format!("{v:.3}");
    s
}

fn fmt_tick(v: f64) -> String {
    let mut s = format!("{v:.4}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        let trailing_dot = s.ends_with('.');
        s.pop();
        if trailing_dot {
            break;
        }
    }
    if s.is_empty() || s == "-" {
        s = "0".into();
    }
    s
}

struct Scale {
    lo: f64,
    hi: f64,
    pix_lo: f64,
    pix_hi: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        if self.hi == self.lo {
            return 0.5 * (self.pix_lo + self.pix_hi);
        }
        self.pix_lo + (v - self.lo) / (self.hi - self.lo) * (self.pix_hi - self.pix_lo)
    }
}

fn bounds(series: &[Series], pick: impl Fn(&(f64, f64)) -> f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for p in &s.points {
            let v = pick(p);
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Render a line plot. Every series becomes exactly one `<polyline>`; axes,
/// ticks, labels and the legend are plain shapes and text.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi) = bounds(series, |p| p.0);
    let (y_lo, y_hi) = bounds(series, |p| p.1);
    let x = Scale { lo: x_lo, hi: x_hi, pix_lo: MARGIN_L, pix_hi: WIDTH - MARGIN_R };
    let y = Scale { lo: y_lo, hi: y_hi, pix_lo: HEIGHT - MARGIN_B, pix_hi: MARGIN_T };

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    ));

    // Axes.
    let x0 = x.pix_lo;
    let x1 = x.pix_hi;
    let y0 = y.pix_lo;
    let y1 = y.pix_hi;
    out.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    out.push_str(&format!(
        "  <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));

    // Ticks: 5 per axis.
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x_lo + f * (x_hi - x_lo);
        let px = x.map(xv);
        out.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{y0}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            fmt_coord(px),
            fmt_coord(px),
            fmt_coord(y0 + 5.0)
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            fmt_coord(px),
            fmt_coord(y0 + 20.0),
            fmt_tick(xv)
        ));
        let yv = y_lo + f * (y_hi - y_lo);
        let py = y.map(yv);
        out.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{x0}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            fmt_coord(x0 - 5.0),
            fmt_coord(py),
            fmt_coord(py)
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            fmt_coord(x0 - 8.0),
            fmt_coord(py + 4.0),
            fmt_tick(yv)
        ));
    }

    // Axis labels.
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "  <text x=\"20\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 20 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    ));

    // Series.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{},{}", fmt_coord(x.map(p.0)), fmt_coord(y.map(p.1))))
            .collect();
        out.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }

    // Legend, top right inside the plot area.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = MARGIN_T + 14.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            x1 - 170.0,
            ly - 10.0
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            x1 - 152.0,
            ly,
            esc(&s.name)
        ));
    }

    out.push_str("</svg>\n");
    out
}
