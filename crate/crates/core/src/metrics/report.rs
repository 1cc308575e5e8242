//! Plain-text and CSV rendering of AP summaries.

use super::ApSummary;

pub const COLUMNS: [&str; 6] = ["AP", "AP50", "AP75", "APs", "APm", "APl"];

/// Shown in place of an undefined metric.
pub const DASH: &str = "-";

/// Percent with one decimal, or a dash for undefined (negative) values.
pub fn format_percent(v: f64) -> String {
    if v < 0.0 || !v.is_finite() {
        DASH.to_string()
    } else {
        format!("{:.1}", v * 100.0)
    }
}

/// Signed percent-point difference, `-0.0` printed as `+0.0`.
pub fn format_delta(points: f64) -> String {
    if !points.is_finite() {
        return DASH.to_string();
    }
    let s = format!("{points:+.1}");
    if s == "-0.0" {
        "+0.0".to_string()
    } else {
        s
    }
}

fn header(with_ar: bool) -> Vec<&'static str> {
    let mut h = COLUMNS.to_vec();
    if with_ar {
        h.push("AR");
    }
    h
}

fn cells(s: &ApSummary, with_ar: bool) -> Vec<String> {
    let mut c: Vec<String> = s.columns().iter().map(|&v| format_percent(v)).collect();
    if with_ar {
        c.push(format_percent(s.ar));
    }
    c
}

/// Header line and value line, space separated.
pub fn render_text(s: &ApSummary, with_ar: bool) -> String {
    format!("{}\n{}\n", header(with_ar).join(" "), cells(s, with_ar).join(" "))
}

pub fn render_csv(s: &ApSummary, with_ar: bool) -> String {
    format!("{}\n{}\n", header(with_ar).join(","), cells(s, with_ar).join(","))
}

/// Titled table as printed by `render`.
pub fn render_table(title: &str, s: &ApSummary) -> String {
    format!("{title}\n{}", render_text(s, false))
}

/// Column-wise `b - a` in percent points.
pub fn delta_points(a: &ApSummary, b: &ApSummary) -> [Option<f64>; 6] {
    let (ca, cb) = (a.columns(), b.columns());
    std::array::from_fn(|k| {
        if ca[k] < 0.0 || cb[k] < 0.0 {
            None
        } else {
            Some(cb[k] * 100.0 - ca[k] * 100.0)
        }
    })
}

pub fn render_delta(a: &ApSummary, b: &ApSummary) -> String {
    let row: Vec<String> = delta_points(a, b)
        .iter()
        .map(|d| d.map_or_else(|| DASH.to_string(), format_delta))
        .collect();
    format!("{}\n{}\n", COLUMNS.join(" "), row.join(" "))
}
