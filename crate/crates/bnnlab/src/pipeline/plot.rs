//! Minimal deterministic SVG plots: scatter, line, bar and histogram
//! renderings of metric data. Hand-written SVG keeps output byte-stable
//! across runs.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 56.0;

pub const SERIES_COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_bounds(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        for v in xs {
            x_min = x_min.min(v);
            x_max = x_max.max(v);
        }
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for v in ys {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
        if !x_min.is_finite() || x_min == x_max {
            x_min -= 0.5;
            x_max += 0.5;
        }
        if !y_min.is_finite() || y_min == y_max {
            y_min -= 0.5;
            y_max += 0.5;
        }
        let pad_x = 0.05 * (x_max - x_min);
        let pad_y = 0.08 * (y_max - y_min);
        Self { x_min: x_min - pad_x, x_max: x_max + pad_x, y_min: y_min - pad_y, y_max: y_max + pad_y }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (W - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        H - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (H - MARGIN_T - MARGIN_B)
    }
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\
         <text x=\"{:.1}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        xml_escape(title)
    );
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let y0 = H - MARGIN_B;
    let _ = write!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{:.1}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN_T}\" stroke=\"black\"/>",
        W - MARGIN_R
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x_min + t * (f.x_max - f.x_min);
        let yv = f.y_min + t * (f.y_max - f.y_min);
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            f.sx(xv),
            y0 + 16.0,
            format_tick(xv)
        );
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            f.sy(yv) + 3.0,
            format_tick(yv)
        );
    }
    let _ = write!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (MARGIN_L + W - MARGIN_R) / 2.0,
        H - 14.0,
        xml_escape(x_label)
    );
    let _ = write!(
        s,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (MARGIN_T + H - MARGIN_B) / 2.0,
        (MARGIN_T + H - MARGIN_B) / 2.0,
        xml_escape(y_label)
    );
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.2e}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// One named series of `(x, y)` points.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Scatter plot with optional per-point color classes.
pub fn scatter_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
    color_class: Option<&[usize]>,
    annotation: Option<&str>,
) -> Result<()> {
    let f = Frame::from_bounds(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut s = open_svg(title);
    axes(&mut s, &f, x_label, y_label);
    for (i, (x, y)) in points.iter().enumerate() {
        let color = match color_class {
            Some(c) => SERIES_COLORS[c[i] % SERIES_COLORS.len()],
            None => SERIES_COLORS[0],
        };
        let _ = write!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.8\"/>",
            f.sx(*x),
            f.sy(*y)
        );
    }
    if let Some(a) = annotation {
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            MARGIN_L + 8.0,
            MARGIN_T + 14.0,
            xml_escape(a)
        );
    }
    s.push_str("</svg>");
    std::fs::write(path, s)?;
    Ok(())
}

/// Multi-series line plot.
pub fn lines_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
) -> Result<()> {
    let f = Frame::from_bounds(
        series.iter().flat_map(|s| s.points.iter().map(|p| p.0)),
        series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
    );
    let mut s = open_svg(title);
    axes(&mut s, &f, x_label, y_label);
    for (si, ser) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let mut d = String::new();
        for (i, (x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, f.sx(*x), f.sy(*y));
        }
        let _ = write!(s, "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>");
        for (x, y) in &ser.points {
            let _ = write!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                f.sx(*x),
                f.sy(*y)
            );
        }
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            W - MARGIN_R - 150.0,
            MARGIN_T + 16.0 + 14.0 * si as f64,
            xml_escape(ser.name)
        );
    }
    s.push_str("</svg>");
    std::fs::write(path, s)?;
    Ok(())
}

/// Bar chart over labeled categories.
pub fn bars_svg(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    let y_hi = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-12);
    let f = Frame { x_min: 0.0, x_max: bars.len() as f64, y_min: 0.0, y_max: y_hi * 1.1 };
    let mut s = open_svg(title);
    axes(&mut s, &f, "", y_label);
    let bw = (W - MARGIN_L - MARGIN_R) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let x = MARGIN_L + i as f64 * bw + 0.15 * bw;
        let y = f.sy(*v);
        let _ = write!(
            s,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>",
            0.7 * bw,
            (H - MARGIN_B) - y
        );
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x + 0.35 * bw,
            H - MARGIN_B + 16.0,
            xml_escape(label)
        );
        let _ = write!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            x + 0.35 * bw,
            y - 4.0,
            format_tick(*v)
        );
    }
    s.push_str("</svg>");
    std::fs::write(path, s)?;
    Ok(())
}

/// Overlaid histograms of two samples on a shared bin grid.
pub fn histogram_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    a_name: &str,
    a: &[f64],
    b_name: &str,
    b: &[f64],
    bins: usize,
) -> Result<()> {
    let hi = a.iter().chain(b.iter()).cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut ha = vec![0.0f64; bins];
    let mut hb = vec![0.0f64; bins];
    for &v in a {
        ha[((v / hi * bins as f64) as usize).min(bins - 1)] += 1.0 / a.len().max(1) as f64;
    }
    for &v in b {
        hb[((v / hi * bins as f64) as usize).min(bins - 1)] += 1.0 / b.len().max(1) as f64;
    }
    let y_hi = ha.iter().chain(hb.iter()).cloned().fold(0.0f64, f64::max);
    let f = Frame { x_min: 0.0, x_max: hi, y_min: 0.0, y_max: (y_hi * 1.1).max(1e-12) };
    let mut s = open_svg(title);
    axes(&mut s, &f, x_label, "fraction of mass");
    let bw = (W - MARGIN_L - MARGIN_R) / bins as f64;
    for (hist, color) in [(&ha, SERIES_COLORS[0]), (&hb, SERIES_COLORS[1])] {
        for (i, &v) in hist.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let x = MARGIN_L + i as f64 * bw;
            let y = f.sy(v);
            let _ = write!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.5\"/>",
                (H - MARGIN_B) - y
            );
        }
    }
    let _ = write!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>",
        W - MARGIN_R - 170.0,
        MARGIN_T + 16.0,
        SERIES_COLORS[0],
        xml_escape(a_name)
    );
    let _ = write!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>",
        W - MARGIN_R - 170.0,
        MARGIN_T + 30.0,
        SERIES_COLORS[1],
        xml_escape(b_name)
    );
    s.push_str("</svg>");
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_write_valid_svg() {
        let dir = tempfile::tempdir().unwrap();
        scatter_svg(
            &dir.path().join("s.svg"),
            "scatter",
            "x",
            "y",
            &[(0.0, 1.0), (1.0, 2.0), (2.0, 1.5)],
            Some(&[0, 1, 0]),
            Some("r = 0.5"),
        )
        .unwrap();
        lines_svg(
            &dir.path().join("l.svg"),
            "lines",
            "x",
            "y",
            &[Series { name: "a", points: vec![(0.0, 0.0), (1.0, 1.0)] }],
        )
        .unwrap();
        bars_svg(&dir.path().join("b.svg"), "bars", "v", &[("m1".into(), 0.5), ("m2".into(), 1.0)])
            .unwrap();
        histogram_svg(
            &dir.path().join("h.svg"),
            "hist",
            "d",
            "within",
            &[0.1, 0.2, 0.15],
            "between",
            &[0.8, 0.9, 0.85],
            20,
        )
        .unwrap();
        for f in ["s.svg", "l.svg", "b.svg", "h.svg"] {
            let content = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(content.starts_with("<svg"));
            assert!(content.ends_with("</svg>"));
        }
    }

    #[test]
    fn svg_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![(0.3, 0.7), (1.1, 0.2)];
        scatter_svg(&dir.path().join("a.svg"), "t", "x", "y", &pts, None, None).unwrap();
        scatter_svg(&dir.path().join("b.svg"), "t", "x", "y", &pts, None, None).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a.svg")).unwrap(),
            std::fs::read(dir.path().join("b.svg")).unwrap()
        );
    }
}
