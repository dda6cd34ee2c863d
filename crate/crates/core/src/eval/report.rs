use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ProtocolResult, SweepRow};
use crate::warning::Warning;
use crate::{Error, Result};

/// Everything an evaluation run produced, with the configuration echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest_hash: String,
    pub config: serde_json::Value,
    pub protocol: ProtocolResult,
    pub sweep: Vec<SweepRow>,
    pub warnings: Vec<Warning>,
}

impl EvalReport {
    /// Checks the report's own invariants: metrics in `[0, 1]`, no row
    /// trains and tests on one source, averages recompute from rows.
    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        for r in &p.rows {
            if r.train_source == r.test_source {
                return Err(Error::Invariant(format!("row trains and tests on source {}", r.train_source)));
            }
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let metrics = p.rows.iter().map(|r| (r.auprc, r.auroc));
        let metrics = metrics.chain(self.sweep.iter().map(|r| (r.auprc, r.auroc)));
        if metrics.clone().any(|(a, b)| !in_unit(a) || !in_unit(b)) {
            return Err(Error::Invariant("metric outside [0, 1]".into()));
        }
        for avg in &p.averages {
            let rows: Vec<_> = p.rows.iter().filter(|r| r.train == avg.train && r.method == avg.method).collect();
            let n = rows.len() as f64;
            let auprc = rows.iter().map(|r| r.auprc).sum::<f64>() / n;
            let auroc = rows.iter().map(|r| r.auroc).sum::<f64>() / n;
            if rows.len() != avg.tests || (auprc - avg.auprc).abs() > 1e-12 || (auroc - avg.auroc).abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "average for {} / {} does not match its rows",
                    avg.train, avg.method
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report: {e}")))
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "manifest {}", self.manifest_hash);
        let p = &self.protocol;
        if !p.rows.is_empty() {
            let head = ["train", "test", "method", "AUPRC", "AUROC", "pos", "neg"];
            let body: Vec<[String; 7]> = p
                .rows
                .iter()
                .map(|r| {
                    [
                        r.train.clone(),
                        r.test.clone(),
                        r.method.to_string(),
                        format!("{:.4}", r.auprc),
                        format!("{:.4}", r.auroc),
                        r.positives.to_string(),
                        r.negatives.to_string(),
                    ]
                })
                .collect();
            table(&mut out, &head, &body);
            out.push('\n');
            let head = ["train", "method", "mean AUPRC", "mean AUROC", "tests"];
            let body: Vec<[String; 5]> = p
                .averages
                .iter()
                .chain(&p.method_averages)
                .map(|a| {
                    [
                        a.train.clone(),
                        a.method.to_string(),
                        format!("{:.4}", a.auprc),
                        format!("{:.4}", a.auroc),
                        a.tests.to_string(),
                    ]
                })
                .collect();
            table(&mut out, &head, &body);
        }
        if !self.sweep.is_empty() {
            out.push('\n');
            let head = ["method", "N/P", "AUROC", "AUPRC", "pos", "neg"];
            let body: Vec<[String; 6]> = self
                .sweep
                .iter()
                .map(|r| {
                    [
                        r.method.to_string(),
                        format!("{}", r.ratio),
                        format!("{:.4}", r.auroc),
                        format!("{:.4}", r.auprc),
                        r.positives.to_string(),
                        r.negatives.to_string(),
                    ]
                })
                .collect();
            table(&mut out, &head, &body);
        }
        for e in &p.errors {
            let _ = writeln!(out, "error: {} / {}: {}", e.train, e.method, e.message);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {:?}: {}", w.kind, w.detail);
        }
        out
    }
}

fn table<const N: usize>(out: &mut String, head: &[&str; N], body: &[[String; N]]) {
    let mut width = head.map(str::len);
    for row in body {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |out: &mut String, cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(out, head.to_vec());
    for row in body {
        line(out, row.iter().map(String::as_str).collect());
    }
}
