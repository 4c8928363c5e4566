//! Thin plate regression splines for one or two covariates.
//!
//! The full thin plate system is built on the unique covariate points, the
//! radial part is truncated to its `k` leading eigen-directions, the
//! polynomial side condition is absorbed, and the remaining wiggly space is
//! rotated so the penalty is diagonal. Columns come out as the polynomial
//! null space first (constant, then linear terms) followed by wiggly
//! functions of increasing penalty.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BasisBlock, Evaluator, Penalty};
use crate::error::{GammError, Result};
use crate::linalg::sym_eigen_sorted;

const MAX_KNOTS: usize = 2000;
const SUBSAMPLE_SEED: u64 = 0x7470_6b6e;

fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Radial kernel η_{m,d}(r). For d = 1, m = 2 this is r³/12 and for d = 2,
/// m = 2 it is r² log(r) / (8π).
pub(crate) fn eta(r: f64, d: usize, m: usize) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let p = (2 * m - d) as i32;
    if d % 2 == 0 {
        let sign = if (m + 1 + d / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let c = sign
            / (2f64.powi(2 * m as i32 - 1)
                * PI.powf(d as f64 / 2.0)
                * factorial(m - 1)
                * factorial(m - d / 2));
        c * r.powi(p) * r.ln()
    } else {
        let c = gamma(d as f64 / 2.0 - m as f64)
            / (2f64.powi(2 * m as i32) * PI.powf(d as f64 / 2.0) * factorial(m - 1));
        c * r.powi(p)
    }
}

/// Dimension of the thin plate null space: monomials of total degree < m in d variables.
pub fn tp_null_dim(d: usize, m: usize) -> usize {
    monomials(d, m).len()
}

fn monomials(d: usize, m: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 0..m as u32 {
        if d == 1 {
            out.push(vec![deg]);
        } else {
            for a in (0..=deg).rev() {
                out.push(vec![a, deg - a]);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct TpMap {
    d: usize,
    m: usize,
    knots: DMatrix<f64>,
    powers: Vec<Vec<u32>>,
    /// n_knots × (k - M) map from radial kernel values to wiggly columns.
    wiggly: DMatrix<f64>,
}

impl TpMap {
    fn radial(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(pts.nrows(), self.knots.nrows(), |i, j| {
            let r2: f64 = (0..self.d)
                .map(|c| (pts[(i, c)] - self.knots[(j, c)]).powi(2))
                .sum();
            eta(r2.sqrt(), self.d, self.m)
        })
    }

    fn poly(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(pts.nrows(), self.powers.len(), |i, j| {
            self.powers[j]
                .iter()
                .enumerate()
                .map(|(c, &e)| pts[(i, c)].powi(e as i32))
                .product()
        })
    }

    pub(crate) fn design(&self, pts: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.poly(pts);
        let w = self.radial(pts) * &self.wiggly;
        let mut out = DMatrix::zeros(pts.nrows(), t.ncols() + w.ncols());
        out.columns_mut(0, t.ncols()).copy_from(&t);
        out.columns_mut(t.ncols(), w.ncols()).copy_from(&w);
        out
    }
}

fn unique_rows(pts: &DMatrix<f64>) -> DMatrix<f64> {
    let mut rows: Vec<Vec<f64>> = pts.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.dedup();
    DMatrix::from_fn(rows.len(), pts.ncols(), |i, j| rows[i][j])
}

/// Thin plate regression spline basis of dimension `k` and penalty order `m`
/// for the covariate matrix `cov` (n × d, d ∈ {1, 2}).
pub fn tp_basis(cov: &DMatrix<f64>, k: usize, m: usize) -> Result<BasisBlock> {
    let d = cov.ncols();
    if !(1..=2).contains(&d) {
        return Err(GammError::Dimension(format!("thin plate splines support d = 1 or 2, got {d}")));
    }
    if 2 * m <= d {
        return Err(GammError::Dimension(format!("penalty order m = {m} too low for d = {d}")));
    }
    let powers = monomials(d, m);
    let null = powers.len();
    if k <= null {
        return Err(GammError::Dimension(format!(
            "k = {k} must exceed the null space dimension {null}"
        )));
    }
    let mut knots = unique_rows(cov);
    if knots.nrows() < k {
        return Err(GammError::Rank(format!(
            "{} distinct covariate points, k = {k}",
            knots.nrows()
        )));
    }
    if knots.nrows() > MAX_KNOTS {
        let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
        let mut idx = sample(&mut rng, knots.nrows(), MAX_KNOTS).into_vec();
        idx.sort_unstable();
        knots = DMatrix::from_fn(MAX_KNOTS, d, |i, j| knots[(idx[i], j)]);
    }

    let proto = TpMap {
        d,
        m,
        knots: knots.clone(),
        powers: powers.clone(),
        wiggly: DMatrix::zeros(0, 0),
    };
    let e = proto.radial(&knots);
    let t = proto.poly(&knots);

    // k leading eigenpairs of E by absolute value
    let (vals, vecs) = sym_eigen_sorted(&e);
    let nk = vals.len();
    let mut order: Vec<usize> = (0..nk).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    let keep = &order[..k];
    let uk = DMatrix::from_fn(nk, k, |i, j| vecs[(i, keep[j])]);
    let dk: Vec<f64> = keep.iter().map(|&i| vals[i]).collect();

    // absorb Tᵀ U_k δ = 0
    let c = t.transpose() * &uk; // null × k
    let qr = c.transpose().qr();
    let mut q_full = DMatrix::<f64>::identity(k, k);
    qr.q_tr_mul(&mut q_full);
    let q_full = q_full.transpose();
    let z = q_full.columns(null, k - null).into_owned();
    let pen = z.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dk)) * &z;
    let (pvals, pvecs) = sym_eigen_sorted(&pen);
    let scale = pvals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if pvals[0] < -1e-8 * scale {
        return Err(GammError::Numeric(format!(
            "thin plate penalty not positive semidefinite (min eigenvalue {})",
            pvals[0]
        )));
    }
    let wiggly = &uk * z * pvecs;
    let map = TpMap { wiggly, ..proto };
    let xm = map.design(cov);

    let mut diag = nalgebra::DVector::zeros(k);
    for j in 0..k - null {
        diag[null + j] = pvals[j].max(0.0);
    }
    let label = if d == 1 { "s(x)" } else { "s(x,z)" };
    let covariates = if d == 1 { vec!["x".into()] } else { vec!["x".into(), "z".into()] };
    Ok(BasisBlock {
        label: label.into(),
        x: xm,
        penalties: vec![Penalty::new(DMatrix::from_diagonal(&diag), "S")],
        null_dim: null,
        constraint: None,
        eval: Evaluator::Tp { covariates, map },
        transforms: Vec::new(),
    })
}
