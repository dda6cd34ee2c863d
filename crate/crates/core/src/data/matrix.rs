use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Labels that place a dataset in a protocol family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DatasetTags {
    pub source: String,
    pub species: String,
    pub network: String,
}

impl DatasetTags {
    pub fn new(source: impl Into<String>, species: impl Into<String>, network: impl Into<String>) -> Self {
        Self { source: source.into(), species: species.into(), network: network.into() }
    }

    /// Display name, `source-network`.
    pub fn name(&self) -> String {
        format!("{}-{}", self.source, self.network)
    }
}

impl Default for DatasetTags {
    fn default() -> Self {
        Self::new("synthetic", "toy", "planted")
    }
}

/// `N` cells by `K` genes of nonnegative log1p-normalized expression,
/// stored row-major (one row per cell).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    symbols: Vec<String>,
    values: Vec<f64>,
    n_cells: usize,
    tags: DatasetTags,
    index: HashMap<String, usize>,
}

impl ExpressionMatrix {
    pub fn new(symbols: Vec<String>, values: Vec<f64>, tags: DatasetTags) -> Result<Self> {
        let k = symbols.len();
        if k < 2 {
            return Err(Error::Data(format!("expression needs at least 2 genes, got {k}")));
        }
        if values.is_empty() || values.len() % k != 0 {
            return Err(Error::Data(format!("{} values do not fill rows of {k} genes", values.len())));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at cell {}, gene `{}`", pos / k, symbols[pos % k])));
        }
        let mut index = HashMap::with_capacity(k);
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate gene column `{s}`")));
            }
        }
        let n_cells = values.len() / k;
        Ok(Self { symbols, values, n_cells, tags, index })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_genes(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tags(&self) -> &DatasetTags {
        &self.tags
    }

    pub fn with_tags(mut self, tags: DatasetTags) -> Self {
        self.tags = tags;
        self
    }

    pub fn gene_index(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let k = self.n_genes();
        &self.values[c * k..(c + 1) * k]
    }

    pub fn column(&self, g: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(g).step_by(self.n_genes()).copied()
    }

    /// Per-gene mean over all cells.
    pub fn mean_cell(&self) -> Vec<f64> {
        let k = self.n_genes();
        let mut mean = vec![0.0; k];
        for row in self.values.chunks(k) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n_cells as f64);
        mean
    }

    /// Per-gene population variance.
    pub fn variances(&self) -> Vec<f64> {
        let k = self.n_genes();
        let mean = self.mean_cell();
        let mut var = vec![0.0; k];
        for row in self.values.chunks(k) {
            for g in 0..k {
                let d = row[g] - mean[g];
                var[g] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= self.n_cells as f64);
        var
    }

    /// Keeps the listed columns, in the order given.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        let symbols = columns.iter().map(|&g| self.symbols[g].clone()).collect();
        let mut values = Vec::with_capacity(self.n_cells * columns.len());
        for row in self.values.chunks(self.n_genes()) {
            values.extend(columns.iter().map(|&g| row[g]));
        }
        Self::new(symbols, values, self.tags.clone())
    }

    /// Stacks several matrices over the union of their gene panels (ordered
    /// by first appearance). Genes absent from a dataset are filled with 0.
    pub fn stack_union(parts: &[&ExpressionMatrix], tags: DatasetTags) -> Result<Self> {
        let mut symbols: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for m in parts {
            for s in m.symbols() {
                if seen.insert(s.clone()) {
                    symbols.push(s.clone());
                }
            }
        }
        let pos: HashMap<&str, usize> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let k = symbols.len();
        let mut values = Vec::new();
        for m in parts {
            let cols: Vec<usize> = m.symbols().iter().map(|s| pos[s.as_str()]).collect();
            for row in m.values.chunks(m.n_genes()) {
                let mut out = vec![0.0; k];
                for (&c, v) in cols.iter().zip(row) {
                    out[c] = *v;
                }
                values.extend(out);
            }
        }
        Self::new(symbols, values, tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_duplicates_nan_and_tiny_panels() {
        let t = DatasetTags::default();
        assert!(ExpressionMatrix::new(sym(&["a", "a"]), vec![1.0, 2.0], t.clone()).is_err());
        assert!(ExpressionMatrix::new(sym(&["a", "b"]), vec![1.0, f64::NAN], t.clone()).is_err());
        assert!(ExpressionMatrix::new(sym(&["a"]), vec![1.0], t.clone()).is_err());
        assert!(ExpressionMatrix::new(sym(&["a", "b"]), vec![], t).is_err());
    }

    #[test]
    fn mean_and_variance() {
        let m = ExpressionMatrix::new(sym(&["a", "b"]), vec![1.0, 0.0, 3.0, 0.0], DatasetTags::default()).unwrap();
        assert_eq!(m.mean_cell(), vec![2.0, 0.0]);
        assert_eq!(m.variances(), vec![1.0, 0.0]);
        assert_eq!(m.column(0).collect::<Vec<_>>(), vec![1.0, 3.0]);
    }

    #[test]
    fn stack_union_zero_fills_absent_genes() {
        let t = DatasetTags::default();
        let a = ExpressionMatrix::new(sym(&["x", "y"]), vec![1.0, 2.0], t.clone()).unwrap();
        let b = ExpressionMatrix::new(sym(&["y", "z"]), vec![3.0, 4.0], t.clone()).unwrap();
        let s = ExpressionMatrix::stack_union(&[&a, &b], t).unwrap();
        assert_eq!(s.symbols(), &sym(&["x", "y", "z"])[..]);
        assert_eq!(s.values(), &[1.0, 2.0, 0.0, 0.0, 3.0, 4.0]);
    }
}
