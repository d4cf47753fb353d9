//! CSV tables and dependency-free SVG charts.

use std::fmt::Write as _;

use crate::geometry::Circle;
use crate::sim::MetricReport;
use crate::train::EpochStats;

pub const METRIC_HEADER: &str = "method,episodes,grr,cr,time,kcv_percent,kcv_count,kcv_steps";

/// Fixed-precision number, `nan` for missing values.
pub fn fmt_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.4}"),
        _ => "nan".to_string(),
    }
}

pub fn metric_row(method: &str, m: &MetricReport) -> String {
    format!(
        "{method},{},{},{},{},{},{},{}",
        m.episodes,
        fmt_num(Some(m.grr)),
        fmt_num(Some(m.cr)),
        fmt_num(m.time),
        fmt_num(Some(m.kcv_percent)),
        m.kcv_count,
        m.kcv_steps
    )
}

pub fn metrics_csv(method: &str, m: &MetricReport) -> String {
    format!("{METRIC_HEADER}\n{}\n", metric_row(method, m))
}

pub fn curve_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,steps,train_loss,val_loss\n");
    for e in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.epoch,
            e.steps,
            fmt_num(Some(e.train_loss)),
            fmt_num(Some(e.val_loss))
        );
    }
    out
}

/// Parses a metrics CSV produced by [`metrics_csv`] into `(method, column,
/// value)` triples.
pub fn parse_metrics_csv(text: &str) -> Vec<(String, String, String)> {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return Vec::new();
    };
    let cols: Vec<&str> = header.split(',').collect();
    lines
        .filter(|l| !l.trim().is_empty())
        .flat_map(|l| {
            let vals: Vec<&str> = l.split(',').collect();
            let method = vals.first().copied().unwrap_or("").to_string();
            cols.iter()
                .zip(vals.iter())
                .skip(1)
                .map(move |(c, v)| (method.clone(), c.to_string(), v.to_string()))
                .collect::<Vec<_>>()
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self { lo, hi, a, b }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn axes(out: &mut String, xs: &Scale, ys: &Scale, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = xs.lo + t * (xs.hi - xs.lo);
        let yv = ys.lo + t * (ys.hi - ys.lo);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            xs.map(xv),
            H - PAD + 16.0,
            short(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 4.0,
            ys.map(yv) + 4.0,
            short(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn short(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = PAD + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD - 110.0,
            y,
            PALETTE[i % PALETTE.len()],
            W - PAD - 96.0,
            y + 9.0,
            escape(n)
        );
    }
}

/// Line chart of named `(x, y)` series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let xs = Scale::new(x0, x1, PAD, W - PAD);
    let ys = Scale::new(y0.min(0.0), y1, H - PAD, PAD);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &xs, &ys, xlabel, ylabel);
    for (i, (_, s)) in series.iter().enumerate() {
        let d: Vec<String> = s
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(k, &(x, y))| format!("{}{:.1} {:.1}", if k == 0 { "M" } else { "L" }, xs.map(x), ys.map(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<path d="{}" stroke="{}" stroke-width="2" fill="none"/>"#,
            d.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart.
pub fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let top = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let ys = Scale::new(0.0, if top > 0.0 { top * 1.1 } else { 1.0 }, H - PAD, PAD);
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let v = if v.is_finite() { *v } else { 0.0 };
        let x = PAD + slot * (i as f64 + 0.15);
        let y = ys.map(v);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            slot * 0.7,
            H - PAD - y,
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text><text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - PAD + 16.0,
            escape(name),
            y - 4.0,
            short(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    out.push_str("</svg>\n");
    out
}

/// Top-down view of obstacles, a goal and named paths.
pub fn trajectory_plot(title: &str, obstacles: &[Circle], goal: [f64; 2], paths: &[(String, Vec<[f64; 2]>)]) -> String {
    let mut lo = [goal[0], goal[1]];
    let mut hi = lo;
    let mut grow = |x: f64, y: f64, r: f64| {
        lo = [lo[0].min(x - r), lo[1].min(y - r)];
        hi = [hi[0].max(x + r), hi[1].max(y + r)];
    };
    obstacles.iter().for_each(|o| grow(o.cx, o.cy, o.r));
    paths.iter().flat_map(|(_, p)| p).for_each(|p| grow(p[0], p[1], 1.0));
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
    let side = H - 2.0 * PAD;
    let sx = |x: f64| PAD + (x - lo[0]) / span * side;
    let sy = |y: f64| H - PAD - (y - lo[1]) / span * side;
    let k = side / span;
    let mut out = String::new();
    header(&mut out, title);
    for o in obstacles {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="#888888"/>"##,
            sx(o.cx),
            sy(o.cy),
            o.r * k
        );
    }
    let _ = writeln!(
        out,
        r##"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="none" stroke="#2ca02c" stroke-width="2"/>"##,
        sx(goal[0]),
        sy(goal[1]),
        (0.5 * k).max(3.0)
    );
    for (i, (_, p)) in paths.iter().enumerate() {
        let d: Vec<String> = p
            .iter()
            .enumerate()
            .map(|(j, q)| format!("{}{:.1} {:.1}", if j == 0 { "M" } else { "L" }, sx(q[0]), sy(q[1])))
            .collect();
        let _ = writeln!(
            out,
            r#"<path d="{}" stroke="{}" stroke-width="2" fill="none"/>"#,
            d.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    let names: Vec<&str> = paths.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}
