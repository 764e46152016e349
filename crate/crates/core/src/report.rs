//! Report bundle: metrics JSON, CSV tables and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::TaskRecord;
use crate::metrics::{
    aggregate, error_composition, pass_at_k_curve, transitions, DatasetMetrics, MetricsError, RoundComposition,
    Transitions,
};
use crate::taxonomy::ErrorCategory;

/// One labelled record set, e.g. dataset "IID", condition "Baseline".
#[derive(Debug, Clone)]
pub struct Condition {
    pub dataset: String,
    pub condition: String,
    pub records: Vec<TaskRecord>,
}

#[derive(Debug, Clone)]
pub struct ReportInput {
    pub conditions: Vec<Condition>,
    /// Training rollouts keyed by evolution iteration.
    pub training_rounds: Vec<(u32, Vec<TaskRecord>)>,
    pub k_max: u32,
    /// Optional conversion from tokens to currency.
    pub usd_per_1k_tokens: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub dataset: String,
    pub condition: String,
    pub metrics: DatasetMetrics,
    pub pass_at_k: Vec<f64>,
    pub attempts: BoxStats,
    pub usd_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub dataset: String,
    pub from: String,
    pub to: String,
    pub sg: f64,
    pub se: f64,
    pub cpf: f64,
    pub bm: Option<f64>,
    pub attempts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub dataset: String,
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub counts: Transitions,
}

/// Five-number summary of an attempts distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    /// Quartiles by linear interpolation between order statistics.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(BoxStats { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub conditions: Vec<ConditionReport>,
    pub deltas: Vec<DeltaRow>,
    pub transitions: Vec<TransitionRow>,
    pub errors_by_round: Vec<RoundComposition>,
    pub k_max: u32,
}

fn opt_diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// Compute the bundle. Within each dataset the first condition is the
/// reference for delta rows and transitions.
pub fn build_report(input: &ReportInput) -> Result<ReportBundle, MetricsError> {
    let mut conditions = Vec::new();
    for c in &input.conditions {
        let metrics = aggregate(&c.records)?;
        let attempts: Vec<f64> = c.records.iter().map(|r| f64::from(r.attempts)).collect();
        conditions.push(ConditionReport {
            dataset: c.dataset.clone(),
            condition: c.condition.clone(),
            pass_at_k: pass_at_k_curve(&c.records, input.k_max),
            attempts: BoxStats::from_values(&attempts).expect("nonempty after aggregate"),
            usd_total: input.usd_per_1k_tokens.map(|rate| rate * metrics.tokens_total as f64 / 1000.0),
            metrics,
        });
    }
    let mut deltas = Vec::new();
    let mut trans = Vec::new();
    for (i, c) in input.conditions.iter().enumerate() {
        let Some(j) = input.conditions[..i].iter().position(|b| b.dataset == c.dataset) else { continue };
        let (base, post) = (&conditions[j].metrics, &conditions[i].metrics);
        deltas.push(DeltaRow {
            dataset: c.dataset.clone(),
            from: input.conditions[j].condition.clone(),
            to: c.condition.clone(),
            sg: post.sg - base.sg,
            se: post.se - base.se,
            cpf: post.cpf - base.cpf,
            bm: opt_diff(post.bm, base.bm),
            attempts: post.attempts_mean - base.attempts_mean,
        });
        trans.push(TransitionRow {
            dataset: c.dataset.clone(),
            from: input.conditions[j].condition.clone(),
            to: c.condition.clone(),
            counts: transitions(&input.conditions[j].records, &c.records)?,
        });
    }
    Ok(ReportBundle {
        conditions,
        deltas,
        transitions: trans,
        errors_by_round: error_composition(&input.training_rounds),
        k_max: input.k_max,
    })
}

fn signed(x: f64, decimals: usize) -> String {
    let s = format!("{x:+.decimals$}");
    if s.trim_start_matches(['+', '-']).chars().all(|c| c == '0' || c == '.') { format!("{:.decimals$}", 0.0) } else { s }
}

pub fn table1_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("Dataset,Condition,SG,SE,CPF,BM,Attempts\n");
    let bm = |b: Option<f64>| b.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    for c in &bundle.conditions {
        let m = &c.metrics;
        let _ = writeln!(
            out,
            "{},{},{:.1}%,{:.1}%,{:.3},{},{:.2}",
            c.dataset,
            c.condition,
            100.0 * m.sg,
            100.0 * m.se,
            m.cpf,
            bm(m.bm),
            m.attempts_mean
        );
        for d in bundle.deltas.iter().filter(|d| d.dataset == c.dataset && d.to == c.condition) {
            let _ = writeln!(
                out,
                "{},Delta ({} - {}),{},{},{},{},{}",
                d.dataset,
                d.to,
                d.from,
                signed(100.0 * d.sg, 1),
                signed(100.0 * d.se, 1),
                signed(d.cpf, 3),
                d.bm.map_or_else(|| "n/a".to_string(), |v| signed(v, 3)),
                signed(d.attempts, 2)
            );
        }
    }
    out
}

pub fn passk_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("k");
    for c in &bundle.conditions {
        let _ = write!(out, ",{}/{}", c.dataset, c.condition);
    }
    out.push('\n');
    for k in 0..bundle.k_max as usize {
        let _ = write!(out, "{}", k + 1);
        for c in &bundle.conditions {
            let _ = write!(out, ",{:.4}", c.pass_at_k[k]);
        }
        out.push('\n');
    }
    out
}

pub fn transitions_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("Dataset,From,To,pass_to_pass,pass_to_fail,fail_to_pass,fail_to_fail\n");
    for t in &bundle.transitions {
        let c = t.counts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.dataset, t.from, t.to, c.pass_to_pass, c.pass_to_fail, c.fail_to_pass, c.fail_to_fail
        );
    }
    out
}

/// One row per (round, code-level category); excluded categories never
/// appear.
pub fn errors_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("round,category,count,fraction\n");
    for r in &bundle.errors_by_round {
        for cat in ErrorCategory::CODE_LEVEL {
            let n = r.counts.get(&cat).copied().unwrap_or(0);
            let f = r.fractions.get(&cat).copied().unwrap_or(0.0);
            let _ = writeln!(out, "{},{},{n},{f:.4}", r.round, cat.as_str());
        }
    }
    out
}

pub fn attempts_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from("Dataset,Condition,min,q1,median,q3,max,mean\n");
    for c in &bundle.conditions {
        let b = c.attempts;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.2}",
            c.dataset, c.condition, b.min, b.q1, b.median, b.q3, b.max, c.metrics.attempts_mean
        );
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn svg_frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let (x0, y0, x1) = (LEFT, H - BOTTOM, W - RIGHT);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{y_label}</text>"#,
        (TOP + y0) / 2.0,
        (TOP + y0) / 2.0
    );
    s
}

fn y_ticks(s: &mut String, max: f64, fmt: impl Fn(f64) -> String) {
    for i in 0..=4 {
        let v = max * f64::from(i) / 4.0;
        let y = H - BOTTOM - (H - BOTTOM - TOP) * f64::from(i) / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt(v));
    }
}

fn legend(s: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let c = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<rect x="{}" y="{y:.1}" width="10" height="10" fill="{c}"/>"#, W - RIGHT + 12.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}">{l}</text>"#, W - RIGHT + 28.0, y + 9.0);
    }
}

pub fn passk_svg(bundle: &ReportBundle) -> String {
    let mut s = svg_frame("Pass@K", "K (attempts)", "fraction solved");
    y_ticks(&mut s, 1.0, |v| format!("{v:.2}"));
    let k = bundle.k_max.max(1) as f64;
    let px = |i: usize| LEFT + (W - RIGHT - LEFT) * (i as f64 + 1.0) / k;
    let py = |v: f64| H - BOTTOM - (H - BOTTOM - TOP) * v;
    for i in 0..bundle.k_max as usize {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(i), H - BOTTOM + 16.0, i + 1);
    }
    for (ci, c) in bundle.conditions.iter().enumerate() {
        let pts: Vec<String> = c.pass_at_k.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", px(i), py(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            PALETTE[ci % PALETTE.len()],
            pts.join(" ")
        );
    }
    let labels: Vec<String> = bundle.conditions.iter().map(|c| format!("{} {}", c.dataset, c.condition)).collect();
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

pub fn attempts_svg(bundle: &ReportBundle) -> String {
    let mut s = svg_frame("Attempts per task", "condition", "attempts");
    let max = bundle.conditions.iter().map(|c| c.attempts.max).fold(1.0, f64::max);
    y_ticks(&mut s, max, |v| format!("{v:.1}"));
    let n = bundle.conditions.len().max(1) as f64;
    let slot = (W - RIGHT - LEFT) / n;
    let py = |v: f64| H - BOTTOM - (H - BOTTOM - TOP) * v / max;
    for (i, c) in bundle.conditions.iter().enumerate() {
        let b = c.attempts;
        let cx = LEFT + slot * (i as f64 + 0.5);
        let hw = slot * 0.2;
        let col = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{col}"/>"#, py(b.min), py(b.max));
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="white" stroke="{col}" stroke-width="2"/>"#,
            cx - hw,
            py(b.q3),
            2.0 * hw,
            (py(b.q1) - py(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{col}" stroke-width="2"/>"#,
            cx - hw,
            py(b.median),
            cx + hw,
            py(b.median)
        );
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{} {}</text>"#,
            H - BOTTOM + 16.0,
            c.dataset,
            c.condition
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn errors_svg(bundle: &ReportBundle) -> String {
    let mut s = svg_frame("Error composition by round", "round", "fraction");
    y_ticks(&mut s, 1.0, |v| format!("{v:.2}"));
    let n = bundle.errors_by_round.len().max(1) as f64;
    let slot = (W - RIGHT - LEFT) / n;
    let span = H - BOTTOM - TOP;
    for (i, r) in bundle.errors_by_round.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let mut y = H - BOTTOM;
        for (ci, cat) in ErrorCategory::CODE_LEVEL.iter().enumerate() {
            let f = r.fractions.get(cat).copied().unwrap_or(0.0);
            if f <= 0.0 {
                continue;
            }
            let h = span * f;
            y -= h;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                slot * 0.6,
                PALETTE[ci]
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x + slot * 0.3, H - BOTTOM + 16.0, r.round);
    }
    let labels: Vec<String> = ErrorCategory::CODE_LEVEL.iter().map(|c| c.label().to_string()).collect();
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

/// Write the bundle under `dir`; returns the written paths in a fixed order.
pub fn write_report(dir: &Path, bundle: &ReportBundle) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("plots"))?;
    let files = [
        ("metrics.json", serde_json::to_string_pretty(bundle).expect("bundle serializes") + "\n"),
        ("table1.csv", table1_csv(bundle)),
        ("passk.csv", passk_csv(bundle)),
        ("transitions.csv", transitions_csv(bundle)),
        ("errors_by_round.csv", errors_csv(bundle)),
        ("attempts.csv", attempts_csv(bundle)),
        ("plots/passk.svg", passk_svg(bundle)),
        ("plots/attempts.svg", attempts_svg(bundle)),
        ("plots/errors.svg", errors_svg(bundle)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
