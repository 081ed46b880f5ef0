//! Report rendering: one row per class in canonical order, macro-average
//! footer. Text and CSV round to two decimals; JSON keeps full precision and
//! embeds the confusion matrix.

use crate::{EvalReport, MetricsError, Result};
use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format: {other}")),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Text => Ok(render_text(report)),
        ReportFormat::Csv => Ok(render_csv(report)),
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).map_err(|_| MetricsError::EmptyMatrix)
        }
    }
}

fn render_text(report: &EvalReport) -> String {
    let m = &report.metrics;
    let mut out = String::new();
    let name_w = m
        .per_class
        .iter()
        .map(|c| c.class.len())
        .max()
        .unwrap_or(5)
        .max("macro".len());
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>7}",
        "class", "precision", "recall", "f1", "support"
    );
    for c in &m.per_class {
        let flag = if c.degenerate { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}{}",
            c.class, c.precision, c.recall, c.f1, c.support, flag
        );
    }
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
        "macro", m.macro_precision, m.macro_recall, m.macro_f1, m.total
    );
    let _ = writeln!(out, "accuracy: {:.4} over {} samples", m.accuracy, m.total);
    let _ = writeln!(out, "average rule: {} (unweighted over classes)", m.average);
    if m.per_class.iter().any(|c| c.degenerate) {
        let _ = writeln!(out, "* zero-denominator metric reported as 0.00");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "confusion matrix (rows = true, cols = predicted):");
    let cm = &report.confusion;
    let _ = write!(out, "{:<name_w$}", "");
    for name in &cm.class_names {
        let _ = write!(out, " {name:>6}");
    }
    let _ = writeln!(out);
    for (i, row) in cm.counts.iter().enumerate() {
        let _ = write!(out, "{:<name_w$}", cm.class_names[i]);
        for v in row {
            let _ = write!(out, " {v:>6}");
        }
        let _ = writeln!(out);
    }
    out
}

fn render_csv(report: &EvalReport) -> String {
    let m = &report.metrics;
    let mut out = String::from("class,precision,recall,f1,support\n");
    for c in &m.per_class {
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{}",
            c.class, c.precision, c.recall, c.f1, c.support
        );
    }
    let _ = writeln!(
        out,
        "macro,{:.2},{:.2},{:.2},{}",
        m.macro_precision, m.macro_recall, m.macro_f1, m.total
    );
    out
}
