//! Forest-plot rows and a plain SVG rendering of them.

use std::fmt::Write as _;
use std::io::{self, Write};

use aucmeta::format::sig6;
use aucmeta::model::z_for_level;
use aucmeta::{CpmSeries, PredictionInterval};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Study,
    Pooled,
    PiTrue,
    PiObserved,
}

impl RowKind {
    fn name(self) -> &'static str {
        match self {
            RowKind::Study => "study",
            RowKind::Pooled => "pooled",
            RowKind::PiTrue => "pi-true",
            RowKind::PiObserved => "pi-observed",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestRow {
    pub kind: RowKind,
    pub label: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// One row per study (with its own CI), then the pooled diamond and the
/// prediction whiskers. `pooled` is `(centre, se, lower, upper)`.
pub fn rows(
    series: &CpmSeries,
    level: f64,
    pooled: (f64, f64, f64, f64),
    pi_true: &PredictionInterval,
    pi_observed: Option<&PredictionInterval>,
) -> aucmeta::Result<Vec<ForestRow>> {
    let z = z_for_level(level)?;
    let mut out: Vec<ForestRow> = series
        .studies()
        .iter()
        .map(|s| ForestRow {
            kind: RowKind::Study,
            label: s.label().to_string(),
            estimate: s.auc(),
            se: Some(s.se()),
            lower: s.auc() - z * s.se(),
            upper: s.auc() + z * s.se(),
        })
        .collect();
    out.push(ForestRow {
        kind: RowKind::Pooled,
        label: "pooled".into(),
        estimate: pooled.0,
        se: Some(pooled.1),
        lower: pooled.2,
        upper: pooled.3,
    });
    out.push(ForestRow {
        kind: RowKind::PiTrue,
        label: "new setting (true AUC)".into(),
        estimate: pi_true.center,
        se: None,
        lower: pi_true.lower,
        upper: pi_true.upper,
    });
    if let Some(pi) = pi_observed {
        out.push(ForestRow {
            kind: RowKind::PiObserved,
            label: "next study (observed AUC)".into(),
            estimate: pi.center,
            se: None,
            lower: pi.lower,
            upper: pi.upper,
        });
    }
    Ok(out)
}

fn cells(r: &ForestRow) -> [String; 6] {
    [
        r.kind.name().to_string(),
        r.label.clone(),
        sig6(r.estimate),
        r.se.map(sig6).unwrap_or_default(),
        sig6(r.lower),
        sig6(r.upper),
    ]
}

const HEADER: [&str; 6] = ["kind", "label", "estimate", "se", "lower", "upper"];

pub fn write_csv<W: Write>(writer: W, rows: &[ForestRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record(cells(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table(out: &mut impl Write, rows: &[ForestRow]) -> io::Result<()> {
    let table: Vec<[String; 6]> = rows.iter().map(cells).collect();
    let mut widths = HEADER.map(str::len);
    for r in &table {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[&str]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "{}", line(&HEADER))?;
    for r in &table {
        let refs: Vec<&str> = r.iter().map(String::as_str).collect();
        writeln!(out, "{}", line(&refs))?;
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick spacing giving roughly five to ten ticks over `span`.
fn tick_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag)
}

pub fn svg(title: &str, rows: &[ForestRow]) -> String {
    const LABEL_W: f64 = 200.0;
    const PLOT_W: f64 = 420.0;
    const TEXT_W: f64 = 200.0;
    const ROW_H: f64 = 22.0;
    const TOP: f64 = 40.0;

    let lo = rows.iter().map(|r| r.lower).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.upper).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |v: f64| LABEL_W + (v - lo) / (hi - lo) * PLOT_W;
    let height = TOP + ROW_H * (rows.len() as f64 + 1.0) + 30.0;
    let width = LABEL_W + PLOT_W + TEXT_W;
    let axis_y = TOP + ROW_H * (rows.len() as f64 + 0.5);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="22" font-size="14" font-weight="bold">{}</text>"#, escape(title));

    // reference lines at 0.5 and 1 when they fall inside the range
    for v in [0.5, 1.0] {
        if v > lo && v < hi {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.2}" y1="{TOP}" x2="{0:.2}" y2="{axis_y:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
                x(v)
            );
        }
    }

    for (i, r) in rows.iter().enumerate() {
        let cy = TOP + ROW_H * (i as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="10" y="{:.2}">{}</text>"#, cy + 4.0, escape(&r.label));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{} [{}, {}]</text>"#,
            LABEL_W + PLOT_W + 10.0,
            cy + 4.0,
            sig6(r.estimate),
            sig6(r.lower),
            sig6(r.upper)
        );
        match r.kind {
            RowKind::Study => {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}" stroke="black"/>"#,
                    x(r.lower),
                    x(r.upper)
                );
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="black"/>"#,
                    x(r.estimate) - 4.0,
                    cy - 4.0
                );
            }
            RowKind::Pooled => {
                let _ = writeln!(
                    s,
                    r#"<polygon points="{:.2},{cy:.2} {:.2},{:.2} {:.2},{cy:.2} {:.2},{:.2}" fill="black"/>"#,
                    x(r.lower),
                    x(r.estimate),
                    cy - 7.0,
                    x(r.upper),
                    x(r.estimate),
                    cy + 7.0
                );
            }
            RowKind::PiTrue | RowKind::PiObserved => {
                let colour = if r.kind == RowKind::PiTrue { "#c0392b" } else { "#2c6fbb" };
                let (a, b) = (x(r.lower), x(r.upper));
                let _ = writeln!(
                    s,
                    r#"<line x1="{a:.2}" y1="{cy:.2}" x2="{b:.2}" y2="{cy:.2}" stroke="{colour}" stroke-width="2"/>"#
                );
                for end in [a, b] {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{end:.2}" y1="{:.2}" x2="{end:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"/>"#,
                        cy - 5.0,
                        cy + 5.0
                    );
                }
            }
        }
    }

    let _ = writeln!(
        s,
        r#"<line x1="{LABEL_W}" y1="{axis_y:.2}" x2="{:.2}" y2="{axis_y:.2}" stroke="black"/>"#,
        LABEL_W + PLOT_W
    );
    let step = tick_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    while t <= hi {
        let tx = x(t);
        let _ = writeln!(
            s,
            r#"<line x1="{tx:.2}" y1="{axis_y:.2}" x2="{tx:.2}" y2="{:.2}" stroke="black"/>"#,
            axis_y + 5.0
        );
        let label = format!("{:.3}", t);
        let label = label.trim_end_matches('0').trim_end_matches('.');
        let _ = writeln!(
            s,
            r#"<text x="{tx:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            axis_y + 18.0
        );
        t += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">AUC</text>"#,
        LABEL_W + PLOT_W / 2.0,
        height - 4.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use aucmeta::{fe_pool, pi_true_next};

    fn demo() -> Vec<ForestRow> {
        let series = CpmSeries::from_pairs("demo", &[(0.70, 0.02), (0.80, 0.04), (0.76, 0.03)]).unwrap();
        let fe = fe_pool(series.studies()).unwrap();
        let pi = pi_true_next(&fe, 0.95).unwrap();
        let ci = (fe.pooled - 1.96 * fe.pooled_se, fe.pooled + 1.96 * fe.pooled_se);
        rows(&series, 0.95, (fe.pooled, fe.pooled_se, ci.0, ci.1), &pi, None).unwrap()
    }

    #[test]
    fn study_rows_use_their_own_ci() {
        let r = demo();
        assert_eq!(r.len(), 5);
        assert!((r[0].lower - (0.70 - 1.96 * 0.02)).abs() < 1e-12);
        assert_eq!(r[3].kind, RowKind::Pooled);
        assert_eq!(r[4].kind, RowKind::PiTrue);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = svg("a <b> & c", &demo());
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt;b&gt; &amp; c"));
        assert_eq!(s.matches("<polygon").count(), 1);
        assert_eq!(s.matches("<rect x=").count(), 3);
    }

    #[test]
    fn ticks() {
        assert_eq!(tick_step(0.3), 0.05);
        assert_eq!(tick_step(1.2), 0.2);
    }
}
