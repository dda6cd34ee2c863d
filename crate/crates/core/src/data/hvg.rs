use std::collections::HashSet;

use super::ExpressionMatrix;
use crate::{Error, Result};

/// Restricts `expression` to its `k` highest-variance genes plus every gene
/// in `tfs`. Equal variances rank the lexicographically smaller symbol first;
/// the input column order is kept.
pub fn select_hvg(expression: &ExpressionMatrix, k: usize, tfs: &[String]) -> Result<ExpressionMatrix> {
    if k == 0 {
        return Err(Error::Config("HVG count must be positive".into()));
    }
    let n = expression.n_genes();
    if k > n {
        return Err(Error::Config(format!("HVG count {k} exceeds {n} genes")));
    }
    let var = expression.variances();
    let symbols = expression.symbols();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then_with(|| symbols[a].cmp(&symbols[b])));

    let tf_set: HashSet<&str> = tfs.iter().map(String::as_str).collect();
    let mut keep = vec![false; n];
    for &g in &order[..k] {
        keep[g] = true;
    }
    for (g, s) in symbols.iter().enumerate() {
        if tf_set.contains(s.as_str()) {
            keep[g] = true;
        }
    }
    let columns: Vec<usize> = (0..n).filter(|&g| keep[g]).collect();
    expression.select_columns(&columns)
}
