use nalgebra::DMatrix;

use super::{BasisBlock, Evaluator, Penalty};
use crate::error::{GammError, Result};

/// Three-term recurrence for polynomials orthogonal over the training points.
#[derive(Debug, Clone)]
pub(crate) struct PolyMap {
    alpha: Vec<f64>,
    /// Squared norms of the unnormalized polynomials p_0..p_degree.
    norm2: Vec<f64>,
}

impl PolyMap {
    fn degree(&self) -> usize {
        self.norm2.len() - 1
    }

    fn raw(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.degree();
        let mut cols = vec![vec![1.0; x.len()]];
        for j in 0..d {
            let next: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &xi)| {
                    let mut v = (xi - self.alpha[j]) * cols[j][i];
                    if j > 0 {
                        v -= self.norm2[j] / self.norm2[j - 1] * cols[j - 1][i];
                    }
                    v
                })
                .collect();
            cols.push(next);
        }
        cols
    }

    pub(crate) fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let cols = self.raw(x);
        let d = self.degree();
        DMatrix::from_fn(x.len(), d, |i, j| cols[j + 1][i] / self.norm2[j + 1].sqrt())
    }
}

/// Orthonormal polynomial basis of the given degree (constant excluded).
/// The block is unpenalized.
pub fn poly_basis(x: &[f64], degree: usize) -> Result<BasisBlock> {
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if degree == 0 || degree >= distinct.len() {
        return Err(GammError::Rank(format!(
            "degree {degree} needs more than {} distinct values",
            distinct.len()
        )));
    }
    let n = x.len() as f64;
    let mut alpha = Vec::with_capacity(degree);
    let mut norm2 = vec![n];
    let mut prev: Vec<f64> = vec![0.0; x.len()];
    let mut cur: Vec<f64> = vec![1.0; x.len()];
    for j in 0..degree {
        let a = x.iter().zip(&cur).map(|(xi, c)| xi * c * c).sum::<f64>() / norm2[j];
        alpha.push(a);
        let ratio = if j > 0 { norm2[j] / norm2[j - 1] } else { 0.0 };
        let next: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| (xi - a) * cur[i] - ratio * prev[i])
            .collect();
        let nn: f64 = next.iter().map(|v| v * v).sum();
        let scale: f64 = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| ((xi - a) * cur[i]).powi(2) + (ratio * prev[i]).powi(2))
            .sum();
        if !(nn > 1e-24 * scale) {
            return Err(GammError::Rank(format!("polynomial degree {} is degenerate", j + 1)));
        }
        norm2.push(nn);
        prev = std::mem::replace(&mut cur, next);
    }
    let map = PolyMap { alpha, norm2 };
    let xm = map.design(x);
    Ok(BasisBlock {
        label: format!("poly(x,{degree})"),
        x: xm,
        penalties: vec![Penalty::new(DMatrix::zeros(degree, degree), "none")],
        null_dim: degree,
        constraint: None,
        eval: Evaluator::Poly { covariate: "x".into(), map },
        transforms: Vec::new(),
    })
}
