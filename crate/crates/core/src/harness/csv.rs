//! CSV output: one row per (scenario, algorithm, step), values with 17
//! significant digits, LF line endings.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::runner::ScenarioResult;

pub const HEADER: &str = "scenario,algorithm,step,mean_regret,stderr,mean_mistakes,bound_overlay";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Rows sorted by scenario, then algorithm label, then step.
pub fn render_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    let mut scenarios: Vec<&ScenarioResult> = results.iter().collect();
    scenarios.sort_by(|a, b| a.scenario.cmp(&b.scenario));
    for s in scenarios {
        let mut algs: Vec<_> = s.algorithms.iter().collect();
        algs.sort_by(|a, b| a.label.cmp(&b.label));
        for a in algs {
            if a.trials.is_empty() {
                continue;
            }
            for k in 0..s.steps {
                let mistakes = a.mean_mistakes.as_ref().map(|m| num(m[k])).unwrap_or_default();
                let overlay = s.bound_overlay.as_ref().map(|b| num(b[k])).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{},{},{},{}", s.scenario, a.label, k + 1, num(a.mean_regret[k]), num(a.stderr[k]), mistakes, overlay);
            }
        }
    }
    out
}

pub fn emit_csv(results: &[ScenarioResult], path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(results)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// One parsed data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scenario: String,
    pub algorithm: String,
    pub step: usize,
    pub mean_regret: f64,
    pub stderr: f64,
    pub mean_mistakes: Option<f64>,
    pub bound_overlay: Option<f64>,
}

pub fn parse_csv(text: &str) -> std::result::Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err("missing or unexpected header".into());
    }
    let opt = |s: &str| -> std::result::Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("{s:?}: {e}"))
        }
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields, got {}", i + 2, f.len()));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {s:?}: {e}", i + 2));
            Ok(CsvRow {
                scenario: f[0].to_string(),
                algorithm: f[1].to_string(),
                step: f[2].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
                mean_regret: float(f[3])?,
                stderr: float(f[4])?,
                mean_mistakes: opt(f[5])?,
                bound_overlay: opt(f[6])?,
            })
        })
        .collect()
}
