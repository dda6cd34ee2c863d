//! Ridge-regression reconstruction backend.
//!
//! Each gene `j` is reconstructed from every other gene by
//! `b_j + sum_{k != j} w_kj x_k`, fitted in closed form. Being linear, its
//! input gradient is the weight column and perturbation responses have exact
//! closed forms, which makes it the reference backend for the probes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_batch, ExpressionModel, GeneVocabulary, PanelInput};
use crate::data::ExpressionMatrix;
use crate::parallel::{self, Execution};
use crate::{Error, Result};

const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBackend {
    pub vocabulary: GeneVocabulary,
    /// Row-major `[K, K]`, entry `(k, j)` is the weight of gene `k` in the
    /// reconstruction of gene `j`; the diagonal is zero.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Training means; masked inputs read these instead of their value.
    pub means: Vec<f64>,
    pub lambda: f64,
}

impl LinearBackend {
    pub fn n_genes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn weight(&self, source: usize, target: usize) -> f64 {
        self.weights[source * self.n_genes() + target]
    }
}

/// Fits one ridge regression per target gene:
/// `min_w sum_cells (x_j - sum_{k != j} w_k x_k - b_j)^2 + lambda |w|^2`,
/// with the intercept unpenalized.
pub fn fit_linear_backend(expression: &ExpressionMatrix, lambda: f64) -> Result<LinearBackend> {
    fit_linear_backend_with(expression, lambda, Execution::Serial)
}

pub fn fit_linear_backend_with(expression: &ExpressionMatrix, lambda: f64, exec: Execution) -> Result<LinearBackend> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("ridge strength {lambda} must be finite and >= 0")));
    }
    let n = expression.n_cells();
    if n < 2 {
        return Err(Error::Data(format!("ridge fit needs at least 2 cells, got {n}")));
    }
    let k = expression.n_genes();
    let means = expression.mean_cell();
    let centered = DMatrix::from_fn(n, k, |c, g| expression.cell(c)[g] - means[g]);
    let gram = centered.transpose() * &centered;

    let columns = parallel::map_range(exec, k, |j| -> Result<Vec<f64>> {
        let others: Vec<usize> = (0..k).filter(|&g| g != j).collect();
        let mut a = DMatrix::from_fn(k - 1, k - 1, |r, c| gram[(others[r], others[c])]);
        for d in 0..k - 1 {
            a[(d, d)] += lambda;
        }
        let rhs = DVector::from_fn(k - 1, |r, _| gram[(others[r], j)]);
        let singular = || Error::Singular { target: expression.symbols()[j].clone() };
        let scale = (0..k - 1).map(|d| a[(d, d)]).fold(0.0, f64::max);
        let chol = a.cholesky().ok_or_else(singular)?;
        // Pivots at rounding level mean the system is singular in exact arithmetic.
        let l = chol.l_dirty();
        if (0..k - 1).any(|d| l[(d, d)] * l[(d, d)] <= SINGULAR_PIVOT * scale) {
            return Err(singular());
        }
        let w = chol.solve(&rhs);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(singular());
        }
        let mut col = vec![0.0; k];
        for (r, &g) in others.iter().enumerate() {
            col[g] = w[r];
        }
        Ok(col)
    });

    let mut weights = vec![0.0; k * k];
    let mut bias = vec![0.0; k];
    for (j, col) in columns.into_iter().enumerate() {
        let col = col?;
        bias[j] = means[j] - col.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
        for (g, w) in col.into_iter().enumerate() {
            weights[g * k + j] = w;
        }
    }
    let vocabulary = GeneVocabulary::new(expression.symbols().to_vec())?;
    Ok(LinearBackend { vocabulary, weights, bias, means, lambda })
}

impl ExpressionModel for LinearBackend {
    fn backend_name(&self) -> &'static str {
        "linear"
    }

    fn vocabulary(&self) -> &GeneVocabulary {
        &self.vocabulary
    }

    /// Genes outside the panel contribute 0; masked panel genes contribute
    /// their training mean.
    fn reconstruct_batch(&self, inputs: &[PanelInput]) -> Result<Vec<Vec<f64>>> {
        check_batch(inputs, self.n_genes())?;
        Ok(inputs
            .iter()
            .map(|input| {
                let effective: Vec<f64> = input
                    .genes
                    .iter()
                    .zip(&input.values)
                    .zip(&input.masked)
                    .map(|((&g, &v), &m)| if m { self.means[g] } else { v })
                    .collect();
                input
                    .genes
                    .iter()
                    .map(|&j| {
                        self.bias[j]
                            + input.genes.iter().zip(&effective).map(|(&g, v)| self.weight(g, j) * v).sum::<f64>()
                    })
                    .collect()
            })
            .collect())
    }

    fn input_gradient_batch(&self, inputs: &[PanelInput], targets: &[usize]) -> Result<Vec<Vec<f64>>> {
        let k = check_batch(inputs, self.n_genes())?;
        if targets.len() != inputs.len() {
            return Err(Error::DimMismatch { expected: inputs.len(), got: targets.len() });
        }
        inputs
            .iter()
            .zip(targets)
            .map(|(input, &t)| {
                if t >= k {
                    return Err(Error::NotInPanel(format!("position {t}")));
                }
                let j = input.genes[t];
                Ok(input
                    .genes
                    .iter()
                    .zip(&input.masked)
                    .map(|(&g, &m)| if m { 0.0 } else { self.weight(g, j) })
                    .collect())
            })
            .collect()
    }
}
