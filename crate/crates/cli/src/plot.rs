//! SVG learning curves from metrics files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use lvm_core::metrics::read_metrics;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: [f64; 4] = [30.0, 30.0, 50.0, 70.0]; // top, right, bottom, left
const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Evaluation points of one metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub steps: Vec<f64>,
    pub returns: Vec<f64>,
}

pub fn load_series(path: &Path) -> Result<Series> {
    let table = read_metrics(path)?;
    let (Some(steps), Some(returns)) = (table.column("env_steps"), table.column("eval_return")) else {
        bail!("{}: missing env_steps or eval_return column", path.display());
    };
    let mut s = Series {
        steps: Vec::new(),
        returns: Vec::new(),
    };
    for (x, y) in steps.into_iter().zip(returns) {
        if let (Some(x), Some(y)) = (x, y) {
            s.steps.push(x);
            s.returns.push(y);
        }
    }
    if s.returns.is_empty() {
        bail!("{}: eval_return column is empty", path.display());
    }
    Ok(s)
}

/// Curve drawn for one label: mean over its series with the min/max range.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub runs: usize,
}

/// Aggregates series point by point, truncated to the shortest one.
pub fn aggregate(label: &str, series: &[Series]) -> Curve {
    let n = series.iter().map(|s| s.returns.len()).min().unwrap_or(0);
    let k = series.len() as f64;
    let mut c = Curve {
        label: label.to_string(),
        steps: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
        low: Vec::with_capacity(n),
        high: Vec::with_capacity(n),
        runs: series.len(),
    };
    for i in 0..n {
        c.steps.push(series.iter().map(|s| s.steps[i]).sum::<f64>() / k);
        c.mean.push(series.iter().map(|s| s.returns[i]).sum::<f64>() / k);
        c.low.push(series.iter().map(|s| s.returns[i]).fold(f64::INFINITY, f64::min));
        c.high.push(series.iter().map(|s| s.returns[i]).fold(f64::NEG_INFINITY, f64::max));
    }
    c
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

pub fn render_svg(curves: &[Curve]) -> String {
    let all_x = curves.iter().flat_map(|c| c.steps.iter().copied());
    let (x0, x1) = all_x.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let lows = curves.iter().flat_map(|c| c.low.iter().copied());
    let highs = curves.iter().flat_map(|c| c.high.iter().copied());
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(lows.fold(f64::INFINITY, f64::min), highs.fold(f64::NEG_INFINITY, f64::max));
    let [top, right, bottom, left] = MARGIN;
    let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (x, y) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            sx(x),
            top + ph + 18.0,
            x
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            left - 6.0,
            sy(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">environment steps</text>"#,
        left + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">average return</text>"#,
        top + ph / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if c.runs > 1 {
            let upper = c.steps.iter().zip(&c.high).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)));
            let lower = c.steps.iter().zip(&c.low).rev().map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                svg,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = c.steps.iter().zip(&c.mean).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="curve" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{} (n={})</text>"#,
            left + 10.0,
            left + 30.0,
            left + 36.0,
            ly + 4.0,
            escape(&c.label),
            c.runs
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Splits `LABEL=PATH`; a bare path is its own label.
fn parse_arg(arg: &str) -> (String, String) {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), path.to_string()),
        _ => (arg.to_string(), arg.to_string()),
    }
}

pub fn run(args: &[String], output: &Path) -> Result<()> {
    let mut groups: Vec<(String, Vec<Series>)> = Vec::new();
    for arg in args {
        let (label, path) = parse_arg(arg);
        let series = load_series(Path::new(&path))?;
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(series),
            None => groups.push((label, vec![series])),
        }
    }
    let curves: Vec<Curve> = groups.iter().map(|(l, s)| aggregate(l, s)).collect();
    fs::write(output, render_svg(&curves)).with_context(|| format!("writing {}", output.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> Series {
        Series {
            steps: (0..v.len()).map(|i| 100.0 * i as f64).collect(),
            returns: v.to_vec(),
        }
    }

    #[test]
    fn aggregate_takes_mean_and_range() {
        let c = aggregate("a", &[series(&[1.0, 2.0, 3.0]), series(&[3.0, 0.0])]);
        assert_eq!(c.mean, vec![2.0, 1.0]);
        assert_eq!(c.low, vec![1.0, 0.0]);
        assert_eq!(c.high, vec![3.0, 2.0]);
        assert_eq!(c.runs, 2);
    }

    #[test]
    fn bands_only_for_shared_labels() {
        let one = render_svg(&[aggregate("a", &[series(&[1.0, 2.0])])]);
        assert_eq!(one.matches("class=\"curve\"").count(), 1);
        assert_eq!(one.matches("class=\"band\"").count(), 0);
        let many: Vec<Series> = (0..5).map(|i| series(&[i as f64, 1.0])).collect();
        let five = render_svg(&[aggregate("a", &many)]);
        assert_eq!(five.matches("class=\"band\"").count(), 1);
        assert_eq!(five.matches("class=\"curve\"").count(), 1);
    }

    #[test]
    fn label_prefix_is_optional() {
        assert_eq!(parse_arg("twin=a/m.csv"), ("twin".into(), "a/m.csv".into()));
        assert_eq!(parse_arg("a/m.csv"), ("a/m.csv".into(), "a/m.csv".into()));
    }
}
