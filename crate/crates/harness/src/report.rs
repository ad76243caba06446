//! CSV tables and SVG plots from run summaries.
//!
//! Files: `summary.csv` (one row per summary and metric), and per metric
//! `metric-<name>.csv` plus a bar chart `metric-<name>.svg`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{unwritable, Error, Result};
use crate::record::{create_csv, RunSummary, METRICS};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377",
];

pub fn emit_report(summaries: &[RunSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    if summaries.is_empty() {
        return Err(Error::ConfigInvalid("nothing to report".into()));
    }
    std::fs::create_dir_all(dir).map_err(unwritable(dir))?;
    let mut written = Vec::new();

    let path = dir.join("summary.csv");
    let mut w = create_csv(&path)?;
    w.write_record(["label", "metric", "mean", "ci_low", "ci_high", "seeds"])?;
    for s in summaries {
        for m in &s.metrics {
            let (lo, hi) = m.ci.map_or((String::new(), String::new()), |c| {
                (c.low.to_string(), c.high.to_string())
            });
            w.write_record([
                &s.label,
                &m.name,
                &m.mean.to_string(),
                &lo,
                &hi,
                &m.per_seed.len().to_string(),
            ])?;
        }
    }
    w.flush().map_err(unwritable(&path))?;
    written.push(path);

    for metric in METRICS {
        let path = dir.join(format!("metric-{metric}.csv"));
        let mut w = create_csv(&path)?;
        w.write_record(["label", "mean", "ci_low", "ci_high"])?;
        let mut bars = Vec::with_capacity(summaries.len());
        for s in summaries {
            let m = s.metric(metric);
            let (lo, hi) = m.ci.map_or((m.mean, m.mean), |c| (c.low, c.high));
            w.write_record([
                s.label.clone(),
                m.mean.to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
            bars.push(Bar {
                label: s.label.clone(),
                value: m.mean,
                low: lo,
                high: hi,
            });
        }
        w.flush().map_err(unwritable(&path))?;
        written.push(path);

        let path = dir.join(format!("metric-{metric}.svg"));
        std::fs::write(&path, bar_chart(metric, &bars)).map_err(unwritable(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub low: f64,
    pub high: f64,
}

/// Vertical bars with error whiskers, on an axis that always includes 0.
pub fn bar_chart(title: &str, bars: &[Bar]) -> String {
    let top = bars.iter().map(|b| b.high.max(b.value)).fold(0.0, f64::max);
    let bottom = bars.iter().map(|b| b.low.min(b.value)).fold(0.0, f64::min);
    let span = if top - bottom > 0.0 {
        top - bottom
    } else {
        1.0
    };
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| MARGIN + (top - v) / span * plot_h;
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;

    let mut svg = header(title);
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        y(0.0),
        WIDTH - MARGIN,
        y(0.0)
    );
    axis_labels(&mut svg, top, bottom, y);
    for (i, b) in bars.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let w = slot * 0.7;
        let (y0, y1) = (y(b.value.max(0.0)), y(b.value.min(0.0)));
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{y0:.2}" width="{w:.2}" height="{:.2}" fill="{colour}"/>"#,
            y1 - y0
        );
        let cx = x + w / 2.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b.high),
            y(b.low)
        );
        for v in [b.low, b.high] {
            let _ = writeln!(
                svg,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - 6.0,
                y(v),
                cx + 6.0,
                y(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            HEIGHT - MARGIN + 16.0,
            escape(&b.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One polyline per series over shared, evenly spaced x positions.
pub fn line_chart(title: &str, xs: &[String], series: &[(String, Vec<f64>)]) -> String {
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| MARGIN + (hi - v) / span * plot_h;
    let step = (WIDTH - 2.0 * MARGIN) / (xs.len().max(2) - 1) as f64;
    let x = |i: usize| MARGIN + step * i as f64;

    let mut svg = header(title);
    axis_labels(&mut svg, hi, lo, y);
    for (i, label) in xs.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            x(i),
            HEIGHT - MARGIN + 16.0,
            escape(label)
        );
    }
    for (k, (name, values)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{colour}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * k as f64,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn header(title: &str) -> String {
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push('\n');
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    svg
}

fn axis_labels(svg: &mut String, top: f64, bottom: f64, y: impl Fn(f64) -> f64) {
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - MARGIN
    );
    for v in [bottom, top] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            y(v) + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
