//! Cubic regression splines in the cardinal (value-at-knot) parameterization.
//!
//! Coefficient `β_j` is the value of the curve at knot `j`. Natural boundary
//! conditions (zero second derivative at the end knots) make the second
//! derivatives at the knots a linear map `γ = F β`, and the exact wiggliness
//! penalty is `∫ f''(x)² dx = βᵀ Dᵀ B⁻¹ D β`.

use nalgebra::DMatrix;

use super::{BasisBlock, Evaluator, Extrapolation, Penalty};
use crate::error::{GammError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotPlacement {
    Quantile,
    Even,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    pub locations: Vec<f64>,
    pub placement: KnotPlacement,
}

impl KnotSet {
    pub fn new(locations: Vec<f64>, placement: KnotPlacement) -> Result<Self> {
        if locations.len() < 3 {
            return Err(GammError::Dimension("cubic splines need at least 3 knots".into()));
        }
        if locations.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GammError::InvalidValue("knots must be strictly increasing".into()));
        }
        Ok(Self { locations, placement })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

fn distinct_sorted(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Knots at `k` evenly spaced empirical quantiles of the distinct values of `x`.
pub fn knots_quantile(x: &[f64], k: usize) -> Result<KnotSet> {
    if k < 3 {
        return Err(GammError::Dimension("cubic splines need k >= 3".into()));
    }
    let u = distinct_sorted(x);
    if u.len() < k {
        return Err(GammError::Rank(format!(
            "{} distinct covariate values, {k} knots requested",
            u.len()
        )));
    }
    let m = u.len() - 1;
    let locations = (0..k)
        .map(|i| {
            let pos = i as f64 * m as f64 / (k - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if lo >= m {
                u[m]
            } else {
                u[lo] + frac * (u[lo + 1] - u[lo])
            }
        })
        .collect();
    KnotSet::new(locations, KnotPlacement::Quantile)
}

/// `k` evenly spaced knots spanning the range of `x`.
pub fn knots_even(x: &[f64], k: usize) -> Result<KnotSet> {
    if k < 3 {
        return Err(GammError::Dimension("cubic splines need k >= 3".into()));
    }
    let u = distinct_sorted(x);
    if u.len() < k {
        return Err(GammError::Rank(format!(
            "{} distinct covariate values, {k} knots requested",
            u.len()
        )));
    }
    let (lo, hi) = (u[0], u[u.len() - 1]);
    let locations = (0..k)
        .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
        .collect();
    KnotSet::new(locations, KnotPlacement::Even)
}

/// The `(D, B)` pair: `D` is (k-2)×k second-difference, `B` (k-2)×(k-2) tridiagonal.
fn d_and_b(knots: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut d = DMatrix::zeros(k - 2, k);
    let mut b = DMatrix::zeros(k - 2, k - 2);
    for i in 0..k - 2 {
        d[(i, i)] = 1.0 / h[i];
        d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
        d[(i, i + 2)] = 1.0 / h[i + 1];
        b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
        if i + 1 < k - 2 {
            b[(i, i + 1)] = h[i + 1] / 6.0;
            b[(i + 1, i)] = h[i + 1] / 6.0;
        }
    }
    (d, b)
}

/// Exact `∫ f''² dx` Gram matrix for the cardinal natural cubic spline basis.
pub fn cr_penalty(knots: &KnotSet) -> DMatrix<f64> {
    let (d, b) = d_and_b(&knots.locations);
    let binv_d = b.cholesky().expect("B is positive definite").solve(&d);
    let mut s = d.transpose() * binv_d;
    crate::linalg::symmetrize(&mut s);
    s
}

#[derive(Debug, Clone)]
pub(crate) struct CrMap {
    knots: Vec<f64>,
    /// k×k map from knot values to knot second derivatives.
    f: DMatrix<f64>,
}

impl CrMap {
    fn new(knots: &KnotSet) -> Self {
        let k = knots.len();
        let (d, b) = d_and_b(&knots.locations);
        let inner = b.cholesky().expect("B is positive definite").solve(&d);
        let mut f = DMatrix::zeros(k, k);
        f.rows_mut(1, k - 2).copy_from(&inner);
        Self { knots: knots.locations.clone(), f }
    }

    pub(crate) fn design(&self, x: &[f64], mode: Extrapolation) -> Result<(DMatrix<f64>, bool)> {
        let kn = &self.knots;
        let k = kn.len();
        let (lo, hi) = (kn[0], kn[k - 1]);
        let mut out = DMatrix::zeros(x.len(), k);
        let mut extrapolated = false;
        for (i, &xi) in x.iter().enumerate() {
            if xi < lo || xi > hi {
                if mode == Extrapolation::Error {
                    return Err(GammError::Extrapolation { value: xi, lo, hi });
                }
                extrapolated = true;
                // linear continuation from the nearest boundary knot
                let (j, at, slope) = if xi < lo {
                    let h = kn[1] - kn[0];
                    let mut s = DMatrix::zeros(1, k);
                    s[(0, 0)] -= 1.0 / h;
                    s[(0, 1)] += 1.0 / h;
                    let g = self.f.row(0) * (-h / 3.0) + self.f.row(1) * (-h / 6.0);
                    (0, lo, s + g)
                } else {
                    let h = kn[k - 1] - kn[k - 2];
                    let mut s = DMatrix::zeros(1, k);
                    s[(0, k - 2)] -= 1.0 / h;
                    s[(0, k - 1)] += 1.0 / h;
                    let g = self.f.row(k - 2) * (h / 6.0) + self.f.row(k - 1) * (h / 3.0);
                    (k - 1, hi, s + g)
                };
                let mut row = slope * (xi - at);
                row[(0, j)] += 1.0;
                out.row_mut(i).copy_from(&row);
                continue;
            }
            // interval j with kn[j] <= x <= kn[j+1]
            let j = match kn.binary_search_by(|v| v.total_cmp(&xi)) {
                Ok(pos) => pos.min(k - 2),
                Err(pos) => pos - 1,
            };
            let h = kn[j + 1] - kn[j];
            let am = (kn[j + 1] - xi) / h;
            let ap = (xi - kn[j]) / h;
            let cm = ((kn[j + 1] - xi).powi(3) / h - h * (kn[j + 1] - xi)) / 6.0;
            let cp = ((xi - kn[j]).powi(3) / h - h * (xi - kn[j])) / 6.0;
            let mut row = self.f.row(j) * cm + self.f.row(j + 1) * cp;
            row[(0, j)] += am;
            row[(0, j + 1)] += ap;
            out.row_mut(i).copy_from(&row);
        }
        Ok((out, extrapolated))
    }
}

/// Cardinal natural cubic regression spline basis with its exact curvature penalty.
pub fn cr_basis(x: &[f64], knots: &KnotSet) -> Result<BasisBlock> {
    let map = CrMap::new(knots);
    let (xm, _) = map.design(x, Extrapolation::Error)?;
    Ok(BasisBlock {
        label: "s(x)".into(),
        x: xm,
        penalties: vec![Penalty::new(cr_penalty(knots), "S")],
        null_dim: 2,
        constraint: None,
        eval: Evaluator::Cr { covariate: "x".into(), map },
        transforms: Vec::new(),
    })
}
