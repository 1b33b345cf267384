use std::fmt::Write as _;

use super::{Delta, Report};
use crate::error::Result;
use crate::metrics::Aggregate;

pub const NOT_APPLICABLE: &str = "n/a";

/// `mean±half_width` with three decimals.
pub fn format_cell(agg: Option<&Aggregate>) -> String {
    match agg {
        Some(a) => format!("{:.3}±{:.3}", a.mean, a.half_width),
        None => NOT_APPLICABLE.to_string(),
    }
}

pub fn format_delta(delta: Delta) -> String {
    match delta {
        Delta::Base => "-".to_string(),
        Delta::NotApplicable => NOT_APPLICABLE.to_string(),
        Delta::Value(v) => {
            let s = format!("{v:.2}");
            if s == "-0.00" {
                "0.00".to_string()
            } else {
                s
            }
        }
    }
}

fn raw(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per estimator: formatted cells next to full-precision values.
pub fn results_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["name".to_string()];
    for m in &report.config.metrics {
        for suffix in ["", "_delta", "_mean", "_ci", "_n"] {
            header.push(format!("{m}{suffix}"));
        }
    }
    w.write_record(&header)?;
    for row in &report.rows {
        let mut rec = vec![row.name.clone()];
        for s in &row.metrics {
            let agg = s.aggregate.as_ref();
            rec.push(format_cell(agg));
            rec.push(format_delta(s.delta));
            rec.push(raw(agg.map(|a| a.mean)));
            rec.push(raw(agg.map(|a| a.half_width)));
            rec.push(agg.map_or(0, |a| a.n).to_string());
        }
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

pub fn rules_csv(report: &Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replication", "rules_plain", "rules_augmented"])?;
    for r in &report.rules {
        let f = |v: Option<usize>| v.map_or_else(|| NOT_APPLICABLE.to_string(), |c| c.to_string());
        w.write_record([r.replication.to_string(), f(r.plain), f(r.augmented)])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is utf-8"))
}

fn push_aligned(out: &mut String, rows: &[Vec<String>], right: &[bool]) {
    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0).max(3))
        .collect();
    let line = |out: &mut String, cells: &[String]| {
        out.push('|');
        for (c, cell) in cells.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if right[c] {
                let _ = write!(out, " {}{} |", " ".repeat(pad), cell);
            } else {
                let _ = write!(out, " {}{} |", cell, " ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(out, &rows[0]);
    out.push('|');
    for (c, w) in widths.iter().enumerate() {
        if right[c] {
            let _ = write!(out, " {}: |", "-".repeat(w - 1));
        } else {
            let _ = write!(out, " {} |", "-".repeat(*w));
        }
    }
    out.push('\n');
    for r in &rows[1..] {
        line(out, r);
    }
}

fn mean_ci(values: &[f64]) -> String {
    crate::metrics::aggregate(values)
        .map(|a| format!("{:.1}±{:.1}", a.mean, a.half_width))
        .unwrap_or_else(|_| NOT_APPLICABLE.to_string())
}

/// Results table followed by the pruned-tree rule counts.
pub fn markdown_table(report: &Report) -> String {
    let mut rows = Vec::with_capacity(report.rows.len() + 1);
    let mut header = vec!["name".to_string()];
    let mut right = vec![false];
    for m in &report.config.metrics {
        header.push(m.label().to_string());
        header.push("Δ%".to_string());
        right.extend([true, true]);
    }
    rows.push(header);
    for row in &report.rows {
        let mut r = vec![row.name.clone()];
        for s in &row.metrics {
            r.push(format_cell(s.aggregate.as_ref()));
            r.push(format_delta(s.delta));
        }
        rows.push(r);
    }
    let mut out = String::new();
    push_aligned(&mut out, &rows, &right);

    let plain: Vec<f64> = report.rules.iter().filter_map(|r| r.plain).map(|v| v as f64).collect();
    let aug: Vec<f64> = report.rules.iter().filter_map(|r| r.augmented).map(|v| v as f64).collect();
    out.push_str("\nRules in a pruned decision tree:\n\n");
    push_aligned(
        &mut out,
        &[
            vec!["dt".to_string(), "degef-dt".to_string()],
            vec![mean_ci(&plain), mean_ci(&aug)],
        ],
        &[true, true],
    );
    out
}
