//! Learning-curve plots as standalone SVG.

use std::fmt::Write;

use crate::error::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(episode, smoothed score)`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOptions {
    pub width: u32,
    pub height: u32,
    pub title: String,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            width: 720,
            height: 440,
            title: String::new(),
        }
    }
}

/// Trailing `window`-episode means, one per full window, keyed by the last
/// episode in the window.
pub fn smooth(scores: &[f64], window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 {
        return Err(Error::usage("smoothing window must be at least 1"));
    }
    if window > scores.len() {
        return Err(Error::usage(format!(
            "smoothing window {window} is longer than the curve ({} episodes)",
            scores.len()
        )));
    }
    let mut sum: f64 = scores[..window].iter().sum();
    let mut out = vec![((window - 1) as f64, sum / window as f64)];
    for i in window..scores.len() {
        sum += scores[i] - scores[i - window];
        out.push((i as f64, sum / window as f64));
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// "Nice" tick step for a span, from {1, 2, 5}·10^k.
fn tick_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

pub fn render_svg(series: &[Series], opts: &PlotOptions) -> Result<String> {
    if series.is_empty() {
        return Err(Error::usage("nothing to plot"));
    }
    let (w, h) = (opts.width as f64, opts.height as f64);
    let (left, right, top, bottom) = (64.0, 180.0, 36.0, 52.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let x_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let y_hi = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(1.0, f64::max)
        * 1.05;
    let y_lo = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(0.0, f64::min);
    let sx = |x: f64| left + x / x_max * pw;
    let sy = |y: f64| top + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if !opts.title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            left + pw / 2.0,
            escape(&opts.title)
        );
    }

    let xs = tick_step(x_max, 6);
    let mut t = 0.0;
    while t <= x_max + 1e-9 {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"##,
            top,
            top + ph,
            top + ph + 16.0
        );
        t += xs;
    }
    let ys = tick_step(y_hi - y_lo, 5);
    let mut t = (y_lo / ys).ceil() * ys;
    while t <= y_hi + 1e-9 {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{:.2}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0,
            t
        );
        t += ys;
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Episodes</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">Score</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="curve" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.trim_end()
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
                pts.split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_curve_is_flat_at_one() {
        let pts = smooth(&[1.0; 50], 10).unwrap();
        assert_eq!(pts.len(), 41);
        assert!(pts.iter().all(|p| (p.1 - 1.0).abs() < 1e-12));
        let svg = render_svg(
            &[Series {
                label: "No mask".into(),
                points: pts,
            }],
            &PlotOptions::default(),
        )
        .unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        let y0 = lines[0][0].1;
        assert!(lines[0].iter().all(|p| p.1 == y0));
        // y = 1.0 maps to top + 0.05/1.05 of the plot height.
        let expect = 36.0 + (1.05 - 1.0) / 1.05 * (440.0 - 36.0 - 52.0);
        assert!((y0 - expect).abs() < 0.01, "{y0} vs {expect}");
    }

    #[test]
    fn legends_per_series() {
        let labels = ["No mask", "LayerNorm", "Vector filter", "EPIC (128)"];
        let series: Vec<Series> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Series {
                label: l.to_string(),
                points: vec![(0.0, 0.1 * i as f64), (10.0, 0.5)],
            })
            .collect();
        let svg = render_svg(&series, &PlotOptions::default()).unwrap();
        assert_eq!(polylines(&svg).len(), 4);
        assert_eq!(svg.matches("class=\"legend\"").count(), 4);
        for l in labels {
            assert!(svg.contains(&format!(">{l}</text>")), "{l}");
        }
        assert!(svg.contains(">Episodes<") && svg.contains(">Score<"));
    }

    #[test]
    fn window_longer_than_curve_fails() {
        assert!(smooth(&[1.0; 5], 6).is_err());
        assert!(smooth(&[1.0; 5], 0).is_err());
        assert_eq!(smooth(&[1.0, 0.0, 1.0], 3).unwrap(), vec![(2.0, 2.0 / 3.0)]);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_svg(
            &[Series {
                label: "a<b&c".into(),
                points: vec![(0.0, 0.0)],
            }],
            &PlotOptions::default(),
        )
        .unwrap();
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
