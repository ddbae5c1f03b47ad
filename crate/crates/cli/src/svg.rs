//! Static SVG line charts. Output depends only on the input numbers, so
//! identical tables give byte-identical files.

use std::fmt::Write as _;

use crate::csvio::TrajectoryTable;
use crate::error::CliError;

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Profile,
    Entropy,
    Waterfall,
}

impl std::str::FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "profile" => Ok(Self::Profile),
            "entropy" => Ok(Self::Entropy),
            "waterfall" => Ok(Self::Waterfall),
            other => Err(CliError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
struct Series {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
struct Panel {
    title: String,
    x_label: String,
    y_label: String,
    /// Tick labels show `10^y` instead of `y`.
    log_y: bool,
    series: Vec<Series>,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-2..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * (1.0 + lo.abs());
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

impl Panel {
    fn render(&self, out: &mut String, y0: f64) {
        let (x_lo, x_hi) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (y_lo, y_hi) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let (y_lo, y_hi) = (y_lo - 0.05 * (y_hi - y_lo), y_hi + 0.05 * (y_hi - y_lo));
        let pw = PANEL_W - MARGIN_L - MARGIN_R;
        let ph = PANEL_H - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * pw;
        let sy = |y: f64| y0 + MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##,
            MARGIN_L,
            y0 + MARGIN_T
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_L + pw / 2.0,
            y0 + MARGIN_T - 10.0,
            escape(&self.title)
        );
        for i in 0..=4 {
            let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
            let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
            let ylab = if self.log_y { format!("1e{fy:.1}") } else { fmt_tick(fy) };
            let _ = writeln!(
                out,
                r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#444"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle" font-size="11">{4}</text>"##,
                sx(fx),
                y0 + MARGIN_T + ph,
                y0 + MARGIN_T + ph + 5.0,
                y0 + MARGIN_T + ph + 18.0,
                fmt_tick(fx)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#444"/><text x="{3:.2}" y="{4:.2}" text-anchor="end" font-size="11">{5}</text>"##,
                MARGIN_L - 5.0,
                sy(fy),
                MARGIN_L,
                MARGIN_L - 8.0,
                sy(fy) + 4.0,
                escape(&ylab)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            MARGIN_L + pw / 2.0,
            y0 + PANEL_H - 8.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{0:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {0:.2})">{1}</text>"#,
            y0 + MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                s.color,
                pts.join(" ")
            );
            if !s.label.is_empty() {
                let ly = y0 + MARGIN_T + 14.0 + 14.0 * i as f64;
                let lx = MARGIN_L + pw - 150.0;
                let _ = writeln!(
                    out,
                    r#"<line x1="{lx:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="{2}" stroke-width="2"/><text x="{3:.2}" y="{4:.2}" font-size="11">{5}</text>"#,
                    ly - 4.0,
                    lx + 20.0,
                    s.color,
                    lx + 25.0,
                    ly,
                    escape(&s.label)
                );
            }
        }
    }
}

fn document(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, PANEL_H * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn trait_axis(n: usize) -> impl Iterator<Item = f64> + Clone {
    (1..=n).map(|j| j as f64)
}

fn nearest_row(t: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (i, v) in t.iter().enumerate() {
        if (v - target).abs() < (t[best] - target).abs() {
            best = i;
        }
    }
    best
}

/// Rows shown by the profile plot: the start, `t = 10` when the run is long
/// enough to make it a distinct snapshot, and the end.
pub fn profile_rows(table: &TrajectoryTable) -> Vec<usize> {
    let last = table.t.len() - 1;
    let mut rows = vec![0];
    let mid = nearest_row(&table.t, 10.0);
    if mid != 0 && mid != last && table.t[last] > 20.0 {
        rows.push(mid);
    }
    if last != 0 {
        rows.push(last);
    }
    rows
}

pub fn profile(table: &TrajectoryTable) -> String {
    let rows = profile_rows(table);
    let series = |data: &Vec<Vec<f64>>| -> Vec<Series> {
        rows.iter()
            .enumerate()
            .map(|(c, &i)| Series {
                label: format!("t = {}", fmt_tick(table.t[i])),
                color: PALETTE[c % PALETTE.len()],
                points: trait_axis(table.n).zip(data[i].iter().copied()).collect(),
            })
            .collect()
    };
    document(&[
        Panel {
            title: "species density f".into(),
            x_label: "trait index j".into(),
            y_label: "f_j".into(),
            log_y: false,
            series: series(&table.f),
        },
        Panel {
            title: "resource R".into(),
            x_label: "resource index k".into(),
            y_label: "R_k".into(),
            log_y: false,
            series: series(&table.r),
        },
    ])
}

/// `S` and `Q` against time. With `log`, the panels show `log10(S - min S)`
/// and `log10 Q`, dropping nonpositive values.
pub fn entropy(table: &TrajectoryTable, log: bool) -> String {
    let s_min = table.s.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let transform = |v: f64| {
        if log {
            if v > 0.0 {
                v.log10()
            } else {
                f64::NAN
            }
        } else {
            v
        }
    };
    let s_pts: Vec<(f64, f64)> = table
        .t
        .iter()
        .zip(&table.s)
        .filter_map(|(t, s)| s.map(|s| (*t, transform(if log { s - s_min } else { s }))))
        .collect();
    let q_pts: Vec<(f64, f64)> = table.t.iter().zip(&table.q).map(|(t, q)| (*t, transform(*q))).collect();
    let s_label = if log { "S - min S" } else { "S" };
    document(&[
        Panel {
            title: "relative entropy".into(),
            x_label: "t".into(),
            y_label: s_label.into(),
            log_y: log,
            series: vec![Series {
                label: String::new(),
                color: PALETTE[0],
                points: s_pts,
            }],
        },
        Panel {
            title: "resource deviation Q".into(),
            x_label: "t".into(),
            y_label: "Q".into(),
            log_y: log,
            series: vec![Series {
                label: String::new(),
                color: PALETTE[1],
                points: q_pts,
            }],
        },
    ])
}

/// Up to `layers` evenly spaced snapshots of `f`, each lifted by a fixed
/// fraction of the peak so later times sit higher.
pub fn waterfall(table: &TrajectoryTable, layers: usize) -> String {
    let rows = table.t.len();
    let count = layers.clamp(1, rows);
    let picks: Vec<usize> = if count == 1 {
        vec![rows - 1]
    } else {
        (0..count).map(|c| c * (rows - 1) / (count - 1)).collect()
    };
    let peak = table.f.iter().flatten().copied().fold(0.0f64, f64::max).max(1e-300);
    let lift = 0.15 * peak;
    let series = picks
        .iter()
        .enumerate()
        .map(|(c, &i)| Series {
            label: if c == 0 || c + 1 == picks.len() {
                format!("t = {}", fmt_tick(table.t[i]))
            } else {
                String::new()
            },
            color: PALETTE[c % PALETTE.len()],
            points: trait_axis(table.n)
                .zip(table.f[i].iter().map(|v| v + lift * c as f64))
                .collect(),
        })
        .collect();
    document(&[Panel {
        title: "f over time".into(),
        x_label: "trait index j".into(),
        y_label: "f_j (offset by time)".into(),
        log_y: false,
        series,
    }])
}

pub fn render(table: &TrajectoryTable, kind: PlotKind, log: bool) -> String {
    match kind {
        PlotKind::Profile => profile(table),
        PlotKind::Entropy => entropy(table, log),
        PlotKind::Waterfall => waterfall(table, 20),
    }
}
