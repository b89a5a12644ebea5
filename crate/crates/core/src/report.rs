//! Stage reports, verdicts, the JSON run report and text/CSV tables.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experiment::ModalSummary;
use crate::scan::ScanResult;
use crate::Result;

/// Exit code for an execution error (config, I/O, numerical failure).
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
    C,
    D,
    E,
    Modal,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::A => "A",
            Stage::B => "B",
            Stage::C => "C",
            Stage::D => "D",
            Stage::E => "E",
            Stage::Modal => "Modal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "limit", rename_all = "snake_case")]
pub enum Bound {
    /// value ≤ limit
    Max(f64),
    /// value ≥ limit
    Min(f64),
    Informational,
}

impl Bound {
    pub fn admits(&self, value: f64) -> bool {
        match *self {
            Bound::Max(limit) => value <= limit,
            Bound::Min(limit) => value >= limit,
            Bound::Informational => true,
        }
    }

    /// Remaining margin as a fraction of |limit|; `None` when undefined.
    pub fn slack(&self, value: f64) -> Option<f64> {
        match *self {
            Bound::Max(limit) if limit != 0.0 => Some((limit - value) / limit.abs()),
            Bound::Min(limit) if limit != 0.0 => Some((value - limit) / limit.abs()),
            _ => None,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::Max(l) => write!(f, "<= {}", format_sig(l, 6)),
            Bound::Min(l) => write!(f, ">= {}", format_sig(l, 6)),
            Bound::Informational => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Info,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Info => "info",
        })
    }
}

/// How a value is printed in tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Error,
    Spectral,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub verdict: Verdict,
    pub kind: MetricKind,
    /// Passing, but with less than the configured slack left.
    #[serde(default)]
    pub near_threshold: bool,
}

impl Metric {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound, kind: MetricKind) -> Self {
        let verdict = match bound {
            Bound::Informational => Verdict::Info,
            b if b.admits(value) => Verdict::Pass,
            _ => Verdict::Fail,
        };
        Self {
            name: name.into(),
            value,
            bound,
            verdict,
            kind,
            near_threshold: false,
        }
    }

    pub fn info(name: impl Into<String>, value: f64, kind: MetricKind) -> Self {
        Self::new(name, value, Bound::Informational, kind)
    }

    pub fn with_near_flag(mut self, min_slack: f64) -> Self {
        self.near_threshold = self.verdict == Verdict::Pass && self.bound.slack(self.value).is_some_and(|s| s < min_slack);
        self
    }

    pub fn formatted_value(&self) -> String {
        format_value(self.value, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub n_mc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub metrics: Vec<Metric>,
    pub provenance: Provenance,
}

impl StageReport {
    pub fn new(stage: Stage, provenance: Provenance) -> Self {
        Self {
            stage,
            metrics: Vec::new(),
            provenance,
        }
    }

    pub fn push(&mut self, metric: Metric) {
        self.metrics.push(metric);
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.metric(name).map(|m| m.value)
    }

    pub fn passed(&self) -> bool {
        self.metrics.iter().all(|m| m.verdict != Verdict::Fail)
    }
}

/// Look up a metric across a list of stage reports.
pub fn find_metric<'a>(reports: &'a [StageReport], name: &str) -> Option<&'a Metric> {
    reports.iter().find_map(|r| r.metric(name))
}

/// Everything one CLI invocation produced; the `report` command re-renders
/// tables from this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub provenance: Provenance,
    #[serde(default)]
    pub stages: Vec<StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modal: Option<ModalSummary>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(StageReport::passed)
            && self.scan.as_ref().is_none_or(ScanResult::passed)
            && self.modal.as_ref().is_none_or(|m| m.stage.passed())
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty() && self.scan.is_none() && self.modal.is_none()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// 0 when every verdict passes, 1 otherwise.
pub fn exit_code(reports: &[RunReport]) -> i32 {
    if reports.iter().all(RunReport::passed) {
        0
    } else {
        1
    }
}

/// `digits` significant digits; scientific notation outside [1e-3, 1e6).
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-3..6).contains(&mag) {
        return format!("{:.*e}", digits - 1, x);
    }
    let decimals = (digits as i32 - 1 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn format_value(x: f64, kind: MetricKind) -> String {
    match kind {
        MetricKind::Error => format_sig(x, 6),
        MetricKind::Spectral => format_sig(x, 4),
        MetricKind::Count => format!("{}", x.round() as i64),
    }
}

/// A rendered table: text for the terminal, CSV twin for tooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, title: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n", self.title);
        out += &line(&self.columns);
        out.push('\n');
        out += &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ");
        out.push('\n');
        for row in &self.rows {
            out += &line(row);
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(format!("{}.txt", self.name)), self.render())?;
        self.write_csv(std::fs::File::create(dir.join(format!("{}.csv", self.name)))?)
    }
}

const METRIC_COLUMNS: [&str; 5] = ["stage", "metric", "value", "threshold", "verdict"];

fn metric_row(stage: Stage, m: &Metric) -> Vec<String> {
    let verdict = if m.near_threshold {
        format!("{} (near)", m.verdict)
    } else {
        m.verdict.to_string()
    };
    vec![stage.to_string(), m.name.clone(), m.formatted_value(), m.bound.to_string(), verdict]
}

/// The nine gated rows of the baseline consistency table.
pub const TABLE_I_METRICS: [(Stage, &str); 9] = [
    (Stage::A, "permittivity_covariance_error"),
    (Stage::B, "wavenumber_covariance_error"),
    (Stage::B, "wavenumber_linearization_rms"),
    (Stage::C, "max_local_covariance_error"),
    (Stage::C, "max_steering_linearization_rms"),
    (Stage::D, "rmed_error"),
    (Stage::D, "rc_error"),
    (Stage::D, "max_hermitian_residual"),
    (Stage::D, "min_eigenvalue"),
];

pub fn table_i(stages: &[StageReport]) -> Table {
    let mut t = Table::new("table_1_baseline", "Table I: baseline consistency metrics (Stages A-D)", &METRIC_COLUMNS);
    for (stage, name) in TABLE_I_METRICS {
        if let Some(m) = stages.iter().filter(|r| r.stage == stage).find_map(|r| r.metric(name)) {
            t.push(metric_row(stage, m));
        }
    }
    t
}

/// Every metric of every stage, including informational ones.
pub fn table_all_metrics(stages: &[StageReport]) -> Table {
    let mut t = Table::new("stage_metrics", "All stage metrics", &METRIC_COLUMNS);
    for r in stages {
        for m in &r.metrics {
            t.push(metric_row(r.stage, m));
        }
    }
    t
}

pub fn table_vi(stages: &[StageReport]) -> Table {
    let mut t = Table::new(
        "table_6_stage_e",
        "Table VI: Stage E spectral and separability metrics",
        &["metric", "theory", "monte_carlo", "gap", "threshold", "verdict"],
    );
    let Some(e) = stages.iter().find(|r| r.stage == Stage::E) else {
        return t;
    };
    for (label, key, kind) in [
        ("effective rank r_eff(R_c)", "r_eff", MetricKind::Spectral),
        ("effective subspace dimension p_rho", "p_rho", MetricKind::Count),
        ("separability eta(p_rho)", "eta", MetricKind::Spectral),
        ("overlap gamma(p_rho)", "gamma", MetricKind::Spectral),
        ("alignment mu(R0, R_med)", "mu", MetricKind::Spectral),
        ("bound slack p_rho - rho^2 r_eff", "bound_slack", MetricKind::Spectral),
    ] {
        let th = e.metric(&format!("{key}_theory"));
        let mc = e.metric(&format!("{key}_mc"));
        if th.is_none() && mc.is_none() {
            continue;
        }
        let gap = e.metric(&format!("{key}_gap"));
        let fmt = |m: Option<&Metric>| m.map_or("-".into(), |m| format_value(m.value, kind));
        let verdict = [th, mc, gap]
            .into_iter()
            .flatten()
            .map(|m| m.verdict)
            .find(|v| *v == Verdict::Fail)
            .unwrap_or(if gap.is_some() || key == "bound_slack" { Verdict::Pass } else { Verdict::Info });
        let threshold = gap
            .map(|g| g.bound.to_string())
            .or_else(|| th.filter(|m| m.bound != Bound::Informational).map(|m| m.bound.to_string()))
            .unwrap_or_else(|| "-".into());
        t.push(vec![
            label.into(),
            fmt(th),
            fmt(mc),
            gap.map_or("-".into(), |g| format_value(g.value, kind)),
            threshold,
            verdict.to_string(),
        ]);
    }
    t
}

pub fn table_vii(modal: &ModalSummary) -> Table {
    let mut t = Table::new("table_7_modal", "Table VII: modal closure validation", &METRIC_COLUMNS);
    for m in &modal.stage.metrics {
        t.push(metric_row(Stage::Modal, m));
    }
    t
}

pub fn closure_table(modal: &ModalSummary) -> Table {
    let mut t = Table::new("table_7_closure_curve", "Closure error vs truncation order Q", &crate::modal::CLOSURE_COLUMNS);
    for r in &modal.curve {
        t.push(vec![
            r.q.to_string(),
            format_sig(r.global_closure, 6),
            format_sig(r.local_closure_center, 6),
            format_sig(r.local_closure_left, 6),
            format_sig(r.local_closure_right, 6),
            format_sig(r.r_eff_q, 4),
            format_sig(r.kl_energy_q, 4),
        ]);
    }
    t
}

/// Tables for a run report, in presentation order.
pub fn render_tables(report: &RunReport) -> Vec<Table> {
    let mut tables = Vec::new();
    if !report.stages.is_empty() {
        tables.push(table_i(&report.stages));
        if report.stages.iter().any(|s| s.stage == Stage::E) {
            tables.push(table_vi(&report.stages));
        }
        tables.push(table_all_metrics(&report.stages));
    }
    if let Some(scan) = &report.scan {
        tables.extend(crate::scan::scan_tables(scan));
    }
    if let Some(modal) = &report.modal {
        tables.push(table_vii(modal));
        tables.push(closure_table(modal));
    }
    tables
}

pub const EMPTY_NOTICE: &str = "no reports to render";

/// Text for a set of tables, or the empty-output notice.
pub fn render_text(tables: &[Table]) -> String {
    if tables.is_empty() {
        return format!("{EMPTY_NOTICE}\n");
    }
    tables.iter().map(Table::render).collect::<Vec<_>>().join("\n")
}
