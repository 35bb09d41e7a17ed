//! Text tables and line-delimited JSON records.

use std::fmt::Write as _;

use super::{summarize, EvalReport, MethodSummary, Scores, SweepReport};
use crate::error::Result;
use crate::methods::Method;

fn pad(out: &mut String, cells: &[String], widths: &[usize]) {
    for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
        if i + 1 == cells.len() {
            out.push_str(cell);
        } else {
            let _ = write!(out, "{cell:<w$}  ");
        }
    }
    out.push('\n');
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        pad(&mut out, row, &widths);
    }
    out
}

fn pair(debug: f64, orig: f64) -> String {
    format!("({debug:.3}, {orig:.3})")
}

/// One row per method, one column per suite; each cell is
/// `(debugging accuracy, original accuracy)` averaged over seeds.
pub fn accuracy_table(records: &[EvalReport], before: &[(String, Scores)]) -> String {
    let mut suites: Vec<&str> = before.iter().map(|(s, _)| s.as_str()).collect();
    for r in records {
        if !suites.contains(&r.suite.as_str()) {
            suites.push(&r.suite);
        }
    }
    let mut rows = vec![std::iter::once("Test suite".to_owned())
        .chain(suites.iter().map(|s| s.to_string()))
        .collect::<Vec<_>>()];
    if !before.is_empty() {
        let mut row = vec!["Before debugging".to_owned()];
        for suite in &suites {
            row.push(
                before
                    .iter()
                    .find(|(s, _)| s == suite)
                    .map(|(_, sc)| pair(sc.debug_accuracy, sc.original_accuracy))
                    .unwrap_or_else(|| "-".to_owned()),
            );
        }
        rows.push(row);
    }
    let per_suite: Vec<Vec<MethodSummary>> = suites
        .iter()
        .map(|s| {
            let rs: Vec<EvalReport> = records.iter().filter(|r| r.suite == *s).cloned().collect();
            summarize(&rs)
        })
        .collect();
    for fast in [true, false] {
        let methods: Vec<Method> = Method::ALL
            .into_iter()
            .filter(|m| m.is_fast() == fast && records.iter().any(|r| r.method == *m))
            .collect();
        if methods.is_empty() {
            continue;
        }
        rows.push(vec![if fast { "Fast" } else { "Slow" }.to_owned()]);
        for m in methods {
            let mut row = vec![m.label().to_owned()];
            for summaries in &per_suite {
                row.push(
                    summaries
                        .iter()
                        .find(|s| s.method == m)
                        .map(|s| pair(s.debug_acc.mean, s.orig_acc.mean))
                        .unwrap_or_else(|| "-".to_owned()),
                );
            }
            rows.push(row);
        }
    }
    render(&rows)
}

/// Mean debugging time per method, with the in-danger phases broken out.
pub fn timing_table(summaries: &[MethodSummary]) -> String {
    let mut rows = vec![vec!["Method".to_owned(), "Seconds".to_owned()]];
    for fast in [true, false] {
        let group: Vec<&MethodSummary> =
            summaries.iter().filter(|s| s.method.is_fast() == fast).collect();
        if group.is_empty() {
            continue;
        }
        rows.push(vec![if fast { "Fast" } else { "Slow" }.to_owned()]);
        for s in group {
            let secs = |v: f64| format!("{v:.4}");
            match (s.method, s.timing) {
                (Method::InDanger, Some(t)) => {
                    rows.push(vec![format!("{} - total", s.method.label()), secs(s.wall_time_s)]);
                    rows.push(vec!["  debug-only fine-tuning".to_owned(), secs(t.debug_only_s)]);
                    rows.push(vec!["  finding new misclassifications W".to_owned(), secs(t.collect_s)]);
                    rows.push(vec!["  final fine-tuning".to_owned(), secs(t.final_s)]);
                }
                _ => rows.push(vec![s.method.label().to_owned(), secs(s.wall_time_s)]),
            }
        }
    }
    render(&rows)
}

/// Mean ± std of both accuracies for every (shots, method) cell.
pub fn sweep_table(sweep: &SweepReport) -> String {
    let mut rows = vec![vec![
        "Shots".to_owned(),
        "Method".to_owned(),
        "Debug acc".to_owned(),
        "Orig acc".to_owned(),
        "n".to_owned(),
    ]];
    for cell in &sweep.cells {
        let s = &cell.summary;
        rows.push(vec![
            cell.shots.to_string(),
            s.method.label().to_owned(),
            format!("{:.3} ± {:.3}", s.debug_acc.mean, s.debug_acc.std),
            format!("{:.3} ± {:.3}", s.orig_acc.mean, s.orig_acc.std),
            s.runs.to_string(),
        ]);
    }
    render(&rows)
}

pub fn to_jsonl(records: &[EvalReport]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EvalReport>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}
