//! Evaluated basis matrices and penalties for every smooth-term type.
//!
//! Every constructor returns a [`BasisBlock`]: the `n × p` design columns of
//! one model term together with its quadratic penalties. Blocks remember how
//! they were built so they can be re-evaluated on new covariate values, and
//! re-evaluating at the training covariates reproduces `x` exactly.

mod constraint;
mod cr;
mod factor;
mod poly;
mod tensor;
mod tp;

pub use constraint::absorb_constraints;
pub use cr::{cr_basis, cr_penalty, knots_even, knots_quantile, KnotSet, KnotPlacement};
pub use factor::{apply_by_factor, factor_smooth, random_effect};
pub use poly::poly_basis;
pub use tensor::tensor_product;
pub use tp::{tp_basis, tp_null_dim};

use nalgebra::{DMatrix, DVector};

use crate::data_io::DataTable;
use crate::error::{GammError, Result};
use crate::linalg::{is_diagonal, psd_rank, sym_eigen_sorted, RANK_TOL};

/// What to do with covariate values outside the range a spline was built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extrapolation {
    #[default]
    Error,
    /// Continue the spline linearly beyond its boundary knots.
    Linear,
}

#[derive(Debug, Clone)]
pub struct Penalty {
    pub matrix: DMatrix<f64>,
    pub label: String,
}

impl Penalty {
    pub fn new(matrix: DMatrix<f64>, label: impl Into<String>) -> Self {
        Self { matrix, label: label.into() }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Evaluator {
    Poly { covariate: String, map: poly::PolyMap },
    Cr { covariate: String, map: cr::CrMap },
    Tp { covariates: Vec<String>, map: tp::TpMap },
    Tensor { a: Box<BasisBlock>, b: Box<BasisBlock> },
    /// One copy of `inner` per factor level, zero off-level.
    Replicated { inner: Box<BasisBlock>, factor: String, levels: Vec<String> },
    RandomEffect { factor: String, levels: Vec<String>, slope: Option<String> },
}

#[derive(Debug, Clone)]
pub struct BasisBlock {
    pub label: String,
    /// Evaluated basis functions, one row per observation.
    pub x: DMatrix<f64>,
    pub penalties: Vec<Penalty>,
    /// Dimension of the space left unpenalized by every penalty.
    pub null_dim: usize,
    /// Reparameterization `Z` recorded by [`absorb_constraints`].
    pub constraint: Option<DMatrix<f64>>,
    pub(crate) eval: Evaluator,
    /// Right-multiplications applied, in order, to the raw basis.
    pub(crate) transforms: Vec<DMatrix<f64>>,
}

/// Basis columns evaluated at new covariate values.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub x: DMatrix<f64>,
    /// True when some value fell outside a spline's boundary knots.
    pub extrapolated: bool,
}

impl BasisBlock {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Names of the covariate and factor columns the block reads.
    pub fn covariates(&self) -> Vec<String> {
        match &self.eval {
            Evaluator::Poly { covariate, .. } | Evaluator::Cr { covariate, .. } => {
                vec![covariate.clone()]
            }
            Evaluator::Tp { covariates, .. } => covariates.clone(),
            Evaluator::Tensor { a, b } => {
                let mut v = a.covariates();
                v.extend(b.covariates());
                v
            }
            Evaluator::Replicated { inner, factor, .. } => {
                let mut v = inner.covariates();
                v.push(factor.clone());
                v
            }
            Evaluator::RandomEffect { factor, slope, .. } => {
                let mut v = vec![factor.clone()];
                v.extend(slope.iter().cloned());
                v
            }
        }
    }

    /// Renames the covariates of a primitive (poly/cr/tp) block.
    pub fn with_covariates(mut self, names: &[&str]) -> Result<Self> {
        match &mut self.eval {
            Evaluator::Poly { covariate, .. } | Evaluator::Cr { covariate, .. }
                if names.len() == 1 =>
            {
                *covariate = names[0].to_string();
            }
            Evaluator::Tp { covariates, .. } if names.len() == covariates.len() => {
                *covariates = names.iter().map(|s| s.to_string()).collect();
            }
            _ => {
                return Err(GammError::Spec(format!(
                    "cannot rename covariates of block '{}' to {names:?}",
                    self.label
                )))
            }
        }
        Ok(self)
    }

    /// Evaluates the block's columns at the rows of `table`.
    pub fn evaluate(&self, table: &DataTable, mode: Extrapolation) -> Result<Evaluated> {
        let (mut x, extrapolated) = self.evaluate_raw(table, mode)?;
        for t in &self.transforms {
            x = &x * t;
        }
        Ok(Evaluated { x, extrapolated })
    }

    fn evaluate_raw(&self, table: &DataTable, mode: Extrapolation) -> Result<(DMatrix<f64>, bool)> {
        match &self.eval {
            Evaluator::Poly { covariate, map } => Ok((map.design(table.numeric(covariate)?), false)),
            Evaluator::Cr { covariate, map } => map.design(table.numeric(covariate)?, mode),
            Evaluator::Tp { covariates, map } => {
                let cols: Vec<&[f64]> = covariates
                    .iter()
                    .map(|c| table.numeric(c))
                    .collect::<Result<_>>()?;
                let n = table.n_rows();
                let pts = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
                Ok((map.design(&pts), false))
            }
            Evaluator::Tensor { a, b } => {
                let ea = a.evaluate(table, mode)?;
                let eb = b.evaluate(table, mode)?;
                Ok((
                    crate::linalg::row_kron(&ea.x, &eb.x),
                    ea.extrapolated || eb.extrapolated,
                ))
            }
            Evaluator::Replicated { inner, factor, levels } => {
                let codes = map_levels(table, factor, levels)?;
                let e = inner.evaluate(table, mode)?;
                Ok((factor::spread_by_level(&e.x, &codes, levels.len()), e.extrapolated))
            }
            Evaluator::RandomEffect { factor, levels, slope } => {
                let codes = map_levels(table, factor, levels)?;
                let s = match slope {
                    Some(name) => Some(table.numeric(name)?),
                    None => None,
                };
                Ok((factor::indicator_design(&codes, levels.len(), s), false))
            }
        }
    }

    /// Per-penalty null-space dimensions `p - rank(S_j)`.
    pub fn penalty_null_dims(&self) -> Vec<usize> {
        self.penalties
            .iter()
            .map(|s| self.p() - psd_rank(&s.matrix))
            .collect()
    }

    pub(crate) fn push_transform(&mut self, t: DMatrix<f64>) {
        self.x = &self.x * &t;
        self.transforms.push(t);
    }
}

/// Dimension of the space unpenalized by all of `penalties`.
pub(crate) fn joint_null_dim(penalties: &[Penalty], p: usize) -> usize {
    if penalties.is_empty() {
        return p;
    }
    let mut total = DMatrix::zeros(p, p);
    for s in penalties {
        let norm = s.matrix.norm();
        if norm > 0.0 {
            total += &s.matrix / norm;
        }
    }
    p - psd_rank(&total)
}

pub(crate) fn map_levels(table: &DataTable, factor: &str, levels: &[String]) -> Result<Vec<usize>> {
    let f = table.factor(factor)?;
    let lookup: Vec<Option<usize>> = f
        .levels()
        .iter()
        .map(|l| levels.iter().position(|t| t == l))
        .collect();
    f.codes()
        .iter()
        .map(|&c| {
            lookup[c as usize].ok_or_else(|| GammError::Level {
                factor: factor.to_string(),
                level: f.levels()[c as usize].clone(),
            })
        })
        .collect()
}

/// Reparameterizes a single-penalty block so its penalty is diagonal:
/// unpenalized directions first, then penalized directions by increasing
/// eigenvalue. When the constant function lies in the null space it becomes
/// column 0.
pub fn natural_reparam(block: &BasisBlock) -> Result<BasisBlock> {
    if block.penalties.len() != 1 {
        return Err(GammError::Spec(format!(
            "natural reparameterization needs exactly one penalty, block '{}' has {}",
            block.label,
            block.penalties.len()
        )));
    }
    let s = &block.penalties[0].matrix;
    let p = block.p();
    if is_diagonal(s) {
        let d: Vec<f64> = (0..p).map(|i| s[(i, i)]).collect();
        let leading_null = d.iter().take_while(|&&v| v == 0.0).count();
        if d[leading_null..].iter().all(|&v| v > 0.0) && d[leading_null..].windows(2).all(|w| w[0] <= w[1]) {
            return Ok(block.clone());
        }
    }
    let (vals, vecs) = sym_eigen_sorted(s);
    let max = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let n_null = vals.iter().filter(|&&v| v <= RANK_TOL * max).count();
    let null = vecs.columns(0, n_null).into_owned();
    let range = vecs.columns(n_null, p - n_null).into_owned();

    let mut null_basis = null.clone();
    if n_null > 0 {
        // Look for the constant function inside the null space.
        let a = &block.x * &null;
        let ones = DVector::from_element(block.n_rows(), 1.0);
        let svd = a.clone().svd(true, true);
        if let Ok(c) = svd.solve(&ones, 1e-12) {
            let resid = (&a * &c - &ones).norm() / (block.n_rows() as f64).sqrt();
            if resid < 1e-8 && c.norm() > 0.0 {
                let h = crate::linalg::householder_for(&c);
                null_basis = DMatrix::zeros(p, n_null);
                null_basis.set_column(0, &(&null * &c));
                for j in 1..n_null {
                    null_basis.set_column(j, &(&null * h.column(j)));
                }
            }
        }
    }
    let mut t = DMatrix::zeros(p, p);
    t.columns_mut(0, n_null).copy_from(&null_basis);
    t.columns_mut(n_null, p - n_null).copy_from(&range);
    let mut diag = DVector::zeros(p);
    for j in n_null..p {
        diag[j] = vals[j].max(0.0);
    }
    let mut out = block.clone();
    out.push_transform(t);
    out.penalties = vec![Penalty::new(DMatrix::from_diagonal(&diag), block.penalties[0].label.clone())];
    out.null_dim = n_null;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Unpenalized orthogonal polynomial of degree `k`.
    Poly,
    /// Cubic regression spline with `k` knots.
    Cr,
    /// Thin plate regression spline (one or two covariates).
    Tp,
    /// Full tensor product of cubic regression spline margins.
    Tensor,
    /// Tensor-product interaction (or constrained main effect) term.
    Ti,
    /// Ridge-penalized random intercepts (optionally slopes).
    RandomEffect,
}

/// Declarative description of one smooth or random-effect term.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothTermSpec {
    pub covariates: Vec<String>,
    pub kind: BasisKind,
    /// Basis dimension; one entry per margin for tensor/ti terms.
    pub k: Vec<usize>,
    /// Penalty order for thin plate splines.
    pub m: usize,
    pub by: Option<String>,
    pub fs_group: Option<String>,
}

impl SmoothTermSpec {
    fn new(kind: BasisKind, covariates: &[&str], k: Vec<usize>) -> Self {
        Self {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            kind,
            k,
            m: 2,
            by: None,
            fs_group: None,
        }
    }

    pub fn poly(x: &str, degree: usize) -> Self {
        Self::new(BasisKind::Poly, &[x], vec![degree])
    }

    pub fn cr(x: &str, k: usize) -> Self {
        Self::new(BasisKind::Cr, &[x], vec![k])
    }

    pub fn tp(x: &str, k: usize) -> Self {
        Self::new(BasisKind::Tp, &[x], vec![k])
    }

    pub fn tp2(x: &str, z: &str, k: usize) -> Self {
        Self::new(BasisKind::Tp, &[x, z], vec![k])
    }

    pub fn te(x: &str, z: &str, kx: usize, kz: usize) -> Self {
        Self::new(BasisKind::Tensor, &[x, z], vec![kx, kz])
    }

    pub fn ti(x: &str, z: &str, kx: usize, kz: usize) -> Self {
        Self::new(BasisKind::Ti, &[x, z], vec![kx, kz])
    }

    /// Constrained main effect in a tensor ANOVA decomposition.
    pub fn ti_main(x: &str, k: usize) -> Self {
        Self::new(BasisKind::Ti, &[x], vec![k])
    }

    /// Factor smooth: one penalized curve of `x` per level of `group`.
    pub fn fs(x: &str, group: &str, k: usize) -> Self {
        let mut s = Self::new(BasisKind::Cr, &[x], vec![k]);
        s.fs_group = Some(group.to_string());
        s
    }

    pub fn re(group: &str) -> Self {
        Self::new(BasisKind::RandomEffect, &[group], vec![])
    }

    pub fn re_slope(group: &str, x: &str) -> Self {
        Self::new(BasisKind::RandomEffect, &[group, x], vec![])
    }

    pub fn by(mut self, factor: &str) -> Self {
        self.by = Some(factor.to_string());
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn is_random_effect(&self) -> bool {
        self.kind == BasisKind::RandomEffect
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.covariates.len();
        let bad = |msg: String| Err(GammError::Spec(msg));
        if self.by.is_some() && self.fs_group.is_some() {
            return bad("'by' and factor-smooth grouping are mutually exclusive".into());
        }
        match self.kind {
            BasisKind::Cr | BasisKind::Tp => {
                if self.k.len() != 1 || self.k[0] < 3 {
                    return bad(format!("{}: k must be a single value >= 3", self.label()));
                }
                if self.kind == BasisKind::Cr && nc != 1 {
                    return bad("cr smooths take exactly one covariate".into());
                }
                if self.kind == BasisKind::Tp && !(1..=2).contains(&nc) {
                    return bad("tp smooths take one or two covariates".into());
                }
            }
            BasisKind::Poly => {
                if nc != 1 || self.k.len() != 1 || self.k[0] == 0 {
                    return bad("poly terms take one covariate and a degree >= 1".into());
                }
            }
            BasisKind::Tensor | BasisKind::Ti => {
                let min = if self.kind == BasisKind::Tensor { 2 } else { 1 };
                if nc < min || nc > 2 || self.k.len() != nc || self.k.iter().any(|&k| k < 3) {
                    return bad(format!(
                        "{}: needs {min}-2 covariates and one k >= 3 per margin",
                        self.label()
                    ));
                }
            }
            BasisKind::RandomEffect => {
                if !(1..=2).contains(&nc) {
                    return bad("random effects take a grouping factor and an optional slope".into());
                }
            }
        }
        if self.fs_group.is_some() && (nc != 1 || !matches!(self.kind, BasisKind::Cr | BasisKind::Tp)) {
            return bad("factor smooths need a univariate cr or tp base".into());
        }
        Ok(())
    }

    /// Summary-table label, e.g. `s(trial)`, `te(freq,trial)`, `fs(trial,subject)`.
    pub fn label(&self) -> String {
        let cov = self.covariates.join(",");
        let base = if let Some(g) = &self.fs_group {
            format!("fs({cov},{g})")
        } else {
            match self.kind {
                BasisKind::Poly => format!("poly({cov},{})", self.k.first().copied().unwrap_or(0)),
                BasisKind::Cr | BasisKind::Tp => format!("s({cov})"),
                BasisKind::Tensor => format!("te({cov})"),
                BasisKind::Ti => format!("ti({cov})"),
                BasisKind::RandomEffect => format!("re({cov})"),
            }
        };
        match &self.by {
            Some(f) => format!("{base}:{f}"),
            None => base,
        }
    }
}
