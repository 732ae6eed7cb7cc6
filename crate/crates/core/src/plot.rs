//! Hand-written SVG box plots of feature populations.
//!
//! Output depends only on the input numbers: coordinates are printed with
//! fixed precision and elements are emitted in feature order, so identical
//! populations give byte-identical documents.

use std::fmt::Write;

use crate::analysis::{percentile_sorted, SignificanceReport, StatPopulation};
use crate::env::SetExpectation;

/// Five-number summary with Tukey whiskers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Most extreme samples within 1.5 IQR of the box.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn new(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "box of an empty sample");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = percentile_sorted(&v, 25.0);
        let median = percentile_sorted(&v, 50.0);
        let q3 = percentile_sorted(&v, 75.0);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence);
        let whisker_lo = inside().next().unwrap_or(q1).min(q1);
        let whisker_hi = inside().next_back().unwrap_or(q3).max(q3);
        let outliers = v
            .iter()
            .copied()
            .filter(|x| *x < lo_fence || *x > hi_fence)
            .collect();
        Self {
            q1,
            median,
            q3,
            whisker_lo,
            whisker_hi,
            outliers,
        }
    }
}

/// One panel: a population, the significance report whose percentile is
/// marked on each box, and optionally what the panel is expected to show.
pub struct Panel<'a> {
    pub title: String,
    pub population: &'a StatPopulation,
    pub report: &'a SignificanceReport,
    pub expected: Option<&'a SetExpectation>,
}

const BOX_W: f64 = 48.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const PANEL_H: f64 = 240.0;
const PANEL_GAP: f64 = 70.0;
const TOP: f64 = 40.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e3 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn expectation_label(e: &SetExpectation) -> String {
    match e {
        SetExpectation::Empty => "expected: none".into(),
        SetExpectation::NonEmpty => "expected: at least one".into(),
        SetExpectation::All => "expected: all".into(),
        SetExpectation::Exactly(s) => format!(
            "expected: {{{}}}",
            s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn expected_member(e: &SetExpectation, feature: usize) -> bool {
    match e {
        SetExpectation::All => true,
        SetExpectation::Exactly(s) => s.contains(&feature),
        SetExpectation::Empty | SetExpectation::NonEmpty => false,
    }
}

/// Render the panels stacked vertically, one box per feature.
pub fn render_boxplots(panels: &[Panel<'_>]) -> String {
    let d = panels
        .iter()
        .map(|p| p.population.num_features())
        .max()
        .unwrap_or(0);
    let width = LEFT + RIGHT + BOX_W * d.max(1) as f64;
    let height = TOP + panels.len() as f64 * (PANEL_H + PANEL_GAP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="11">"#,
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (pi, panel) in panels.iter().enumerate() {
        let y0 = TOP + pi as f64 * (PANEL_H + PANEL_GAP);
        render_panel(&mut s, panel, y0);
    }
    s.push_str("</svg>\n");
    s
}

fn render_panel(s: &mut String, panel: &Panel<'_>, y0: f64) {
    let pop = panel.population;
    let stats: Vec<BoxStats> = pop.values.iter().map(|v| BoxStats::new(v)).collect();
    let markers: Vec<f64> = panel.report.features.iter().map(|f| f.percentile_value).collect();

    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for b in &stats {
        lo = lo.min(b.whisker_lo);
        hi = hi.max(b.whisker_hi);
        for o in &b.outliers {
            lo = lo.min(*o);
            hi = hi.max(*o);
        }
    }
    for m in &markers {
        lo = lo.min(*m);
        hi = hi.max(*m);
    }
    if hi - lo <= 0.0 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y = |v: f64| y0 + PANEL_H * (hi - v) / (hi - lo);
    let x_end = LEFT + BOX_W * pop.num_features() as f64;

    let mut title = escape(&panel.title);
    if let Some(e) = panel.expected {
        title.push_str(" — ");
        title.push_str(&escape(&expectation_label(e)));
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13">{}</text>"#,
        fmt(LEFT),
        fmt(y0 - 12.0),
        title
    );
    let _ = writeln!(
        s,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        fmt(LEFT),
        fmt(y0),
        fmt(x_end - LEFT),
        fmt(PANEL_H)
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt(LEFT - 6.0),
            fmt(y(v) + 4.0),
            tick_label(v)
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#c00" stroke-dasharray="4 3"/>"##,
        fmt(LEFT),
        fmt(y(0.0)),
        fmt(x_end),
        fmt(y(0.0))
    );

    for (i, (b, m)) in stats.iter().zip(&markers).enumerate() {
        let cx = LEFT + BOX_W * (i as f64 + 0.5);
        let half = BOX_W * 0.3;
        let significant = panel.report.features[i].significant;
        let fill = if significant { "#9ecae1" } else { "#eeeeee" };
        if let Some(e) = panel.expected {
            if expected_member(e, i) {
                let _ = writeln!(
                    s,
                    r##"<rect x="{}" y="{}" width="{}" height="{}" fill="#fff3c4"/>"##,
                    fmt(cx - BOX_W / 2.0),
                    fmt(y0 + 1.0),
                    fmt(BOX_W),
                    fmt(PANEL_H - 2.0)
                );
            }
        }
        // whiskers
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            fmt(cx),
            fmt(y(b.whisker_hi)),
            fmt(cx),
            fmt(y(b.whisker_lo))
        );
        for w in [b.whisker_lo, b.whisker_hi] {
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
                fmt(cx - half / 2.0),
                fmt(y(w)),
                fmt(cx + half / 2.0),
                fmt(y(w))
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="black"/>"#,
            fmt(cx - half),
            fmt(y(b.q3)),
            fmt(2.0 * half),
            fmt(y(b.q1) - y(b.q3))
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="2"/>"#,
            fmt(cx - half),
            fmt(y(b.median)),
            fmt(cx + half),
            fmt(y(b.median))
        );
        for o in &b.outliers {
            let _ = writeln!(
                s,
                r##"<circle cx="{}" cy="{}" r="1.5" fill="none" stroke="#555"/>"##,
                fmt(cx),
                fmt(y(*o))
            );
        }
        // percentile used by the significance rule
        let _ = writeln!(
            s,
            r##"<path d="M {} {} l 8 -4 l 0 8 z" fill="#c00"/>"##,
            fmt(cx + half + 1.0),
            fmt(y(*m))
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">f{i}</text>"#,
            fmt(cx),
            fmt(y0 + PANEL_H + 14.0)
        );
    }
}
