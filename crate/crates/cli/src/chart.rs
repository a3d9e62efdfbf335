//! Plain SVG line charts: calendar signal against the matched topic, and
//! weekly error per group.

use std::fmt::Write as _;
use std::path::Path;

use occutrend_core::evaluation::EvalReport;

use crate::error::CliError;
use crate::experiment::{Dataset, Screening};

/// Calendar charts are drawn for at most this many meters, best r² first.
pub const MAX_CALENDAR_CHARTS: usize = 12;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

pub struct Line {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Keeps file names portable.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Lines share the x axis (point index); gaps break a line.
pub fn line_chart(title: &str, x_first: &str, x_last: &str, lines: &[Line]) -> String {
    let n = lines.iter().map(|l| l.values.len()).max().unwrap_or(0);
    let finite = lines.iter().flat_map(|l| l.values.iter().flatten()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let px = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n.max(2) - 1) as f64;
    let py = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="24" font-size="14">{}</text>"#, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, x0 - 4.0, y0 + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#, x0 - 4.0, y1);
    let _ = writeln!(svg, r#"<text x="{x0}" y="{}">{}</text>"#, y1 + 16.0, escape(x_first));
    let _ = writeln!(svg, r#"<text x="{x1}" y="{}" text-anchor="end">{}</text>"#, y1 + 16.0, escape(x_last));
    for (k, line) in lines.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (i, v) in line.values.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => {
                    let _ = write!(d, "{}{:.1} {:.1} ", if pen_down { "L" } else { "M" }, px(i), py(*v));
                    pen_down = true;
                }
                _ => pen_down = false,
            }
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            d.trim_end()
        );
        let ly = 24.0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            x1,
            escape(&line.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn zscore(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return values.to_vec();
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let sd = (present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values
        .iter()
        .map(|v| v.map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }))
        .collect()
}

fn write(dir: &Path, name: String, svg: String, out: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join(&name);
    std::fs::write(&path, svg).map_err(CliError::io(&path))?;
    out.push(name);
    Ok(())
}

/// Writes every chart into `dir` and returns the file names.
pub fn write_charts(dir: &Path, data: &Dataset, s: &Screening, report: &EvalReport) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();

    let mut screened: Vec<_> = s.records.iter().filter_map(|r| r.result.as_ref()).collect();
    screened.sort_by(|a, b| b.r_squared.total_cmp(&a.r_squared).then(a.meter_id.cmp(&b.meter_id)));
    for result in screened.into_iter().take(MAX_CALENDAR_CHARTS) {
        let Some(signal) = s.signals.iter().find(|g| g.meter_id == result.meter_id) else {
            continue;
        };
        let Some(trend) = data
            .trends
            .iter()
            .find(|t| t.topic_id == result.best_topic_id && t.geo == result.geo)
        else {
            continue;
        };
        let topic: Vec<Option<f64>> = signal.dates.iter().map(|d| trend.standardized_at(*d)).collect();
        let (Some(first), Some(last)) = (signal.dates.first(), signal.dates.last()) else {
            continue;
        };
        let svg = line_chart(
            &format!(
                "{}: calendar signal vs {} ({}), r² = {:.3} ({})",
                result.meter_id, result.best_topic_id, result.geo, result.r_squared, result.category
            ),
            &first.to_string(),
            &last.to_string(),
            &[
                Line {
                    label: "calendar signal (z)".into(),
                    values: zscore(&signal.scores),
                },
                Line {
                    label: format!("{} (z)", result.best_topic_id),
                    values: topic,
                },
            ],
        );
        write(dir, format!("calendar_{}.svg", slug(&result.meter_id)), svg, &mut out)?;
    }

    let mut groups: Vec<&str> = report.weekly.iter().map(|w| w.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    for group in groups {
        let rows: Vec<_> = report.weekly.iter().filter(|w| w.group == group).collect();
        let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
            continue;
        };
        let svg = line_chart(
            &format!("Weekly RMSLE, {group}"),
            &first.week_start.to_string(),
            &last.week_start.to_string(),
            &[
                Line {
                    label: "baseline".into(),
                    values: rows.iter().map(|w| w.baseline_rmsle).collect(),
                },
                Line {
                    label: "proposed".into(),
                    values: rows.iter().map(|w| w.proposed_rmsle).collect(),
                },
            ],
        );
        write(dir, format!("weekly_error_{}.svg", slug(group)), svg, &mut out)?;
    }
    Ok(out)
}
