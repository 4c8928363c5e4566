use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::AssembledDesign;
use crate::error::{GammError, Result};
use crate::linalg::{is_diagonal, psd_rank, sym_eigen_sorted};

/// Solution of the penalized least squares problem at fixed λ.
#[derive(Debug, Clone)]
pub struct PlsSolution {
    pub beta: DVector<f64>,
    /// `(XᵀX + Σ λ_j S_j)⁻¹`.
    pub vb_unscaled: DMatrix<f64>,
    /// Diagonal of `Vb_unscaled · XᵀX`.
    pub edf: DVector<f64>,
    pub rss: f64,
    /// `βᵀ (Σ λ_j S_j) β`.
    pub penalty: f64,
    /// True when the ridge of last resort was needed.
    pub ridge_added: bool,
}

/// Groups of penalties with overlapping support, used for the log
/// pseudo-determinant of `Σ λ_j S_j`.
#[derive(Debug, Clone)]
enum Component {
    /// All members diagonal: each penalized coordinate carries `(penalty, value)` pairs.
    Diagonal(Vec<Vec<(usize, f64)>>),
    Dense { offset: usize, size: usize, members: Vec<usize>, rank: usize },
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    /// Equilibration: the factored matrix is `D H D`.
    d: DVector<f64>,
    beta: DVector<f64>,
    log_det: f64,
    ridge_added: bool,
}

/// Precomputed cross products of a design, reused across λ values.
pub struct PenalizedProblem<'a> {
    design: &'a AssembledDesign,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    components: Vec<Component>,
    null_dim: usize,
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    parent[i] = r;
    r
}

fn components(design: &AssembledDesign) -> (Vec<Component>, usize) {
    let pens = &design.penalties;
    let m = pens.len();
    let supports: Vec<Vec<usize>> = pens
        .iter()
        .map(|s| {
            (0..s.size())
                .filter(|&i| s.matrix.row(i).iter().any(|&v| v != 0.0))
                .map(|i| i + s.offset)
                .collect()
        })
        .collect();
    let mut parent: Vec<usize> = (0..m).collect();
    let mut owner = vec![usize::MAX; design.p()];
    for (j, sup) in supports.iter().enumerate() {
        for &i in sup {
            if owner[i] == usize::MAX {
                owner[i] = j;
            } else {
                let (a, b) = (find(&mut parent, owner[i]), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of = vec![usize::MAX; m];
    for j in 0..m {
        let r = find(&mut parent, j);
        if root_of[r] == usize::MAX {
            root_of[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_of[r]].push(j);
    }
    let mut out = Vec::new();
    let mut rank_total = 0;
    for members in groups {
        if members.iter().all(|&j| is_diagonal(&pens[j].matrix)) {
            let mut coords: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
            for &j in &members {
                let s = &pens[j];
                for i in 0..s.size() {
                    let v = s.matrix[(i, i)];
                    if v > 0.0 {
                        coords.entry(i + s.offset).or_default().push((j, v));
                    }
                }
            }
            rank_total += coords.len();
            out.push(Component::Diagonal(coords.into_values().collect()));
        } else {
            let lo = members.iter().flat_map(|&j| supports[j].iter()).min().copied().unwrap_or(0);
            let hi = members.iter().flat_map(|&j| supports[j].iter()).max().copied().unwrap_or(0);
            let size = hi + 1 - lo;
            let mut total = DMatrix::zeros(size, size);
            for &j in &members {
                let s = &pens[j];
                let norm = s.matrix.norm();
                if norm > 0.0 {
                    let mut v = total.view_mut((s.offset - lo, s.offset - lo), (s.size(), s.size()));
                    v += &s.matrix / norm;
                }
            }
            let rank = psd_rank(&total);
            rank_total += rank;
            out.push(Component::Dense { offset: lo, size, members, rank });
        }
    }
    (out, design.p() - rank_total)
}

impl<'a> PenalizedProblem<'a> {
    pub fn new(design: &'a AssembledDesign) -> Self {
        let xt = design.x.transpose();
        let xtx = &xt * &design.x;
        let xty = &xt * &design.y;
        let (components, null_dim) = components(design);
        Self { design, xtx, xty, components, null_dim }
    }

    pub fn design(&self) -> &AssembledDesign {
        self.design
    }

    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }

    /// Dimension of the joint null space of all penalties.
    pub fn penalty_null_dim(&self) -> usize {
        self.null_dim
    }

    fn check_lambdas(&self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.design.n_penalties() {
            return Err(GammError::Dimension(format!(
                "{} smoothing parameters for {} penalties",
                lambdas.len(),
                self.design.n_penalties()
            )));
        }
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(GammError::InvalidValue(format!("smoothing parameters must be finite and >= 0: {lambdas:?}")));
        }
        Ok(())
    }

    fn offending_term(&self, h: &DMatrix<f64>) -> String {
        for t in &self.design.terms {
            let r = t.range.clone();
            let block = h.view((r.start, r.start), (r.len(), r.len())).into_owned();
            if Cholesky::new(block).is_none() {
                return t.label.clone();
            }
        }
        "the combined design".into()
    }

    fn factor(&self, lambdas: &[f64]) -> Result<Factored> {
        let mut h = &self.xtx + self.design.total_penalty(lambdas);
        let p = h.nrows();
        let mut ridge_added = false;
        loop {
            let d = DVector::from_iterator(
                p,
                (0..p).map(|i| if h[(i, i)] > 0.0 { 1.0 / h[(i, i)].sqrt() } else { 1.0 }),
            );
            let mut he = h.clone();
            for j in 0..p {
                for i in 0..p {
                    he[(i, j)] *= d[i] * d[j];
                }
            }
            if let Some(chol) = Cholesky::new(he) {
                let l = chol.l_dirty();
                let mut log_det = 0.0;
                for i in 0..p {
                    log_det += 2.0 * l[(i, i)].ln() - 2.0 * d[i].ln();
                }
                let rhs = self.xty.component_mul(&d);
                let beta = chol.solve(&rhs).component_mul(&d);
                return Ok(Factored { chol, d, beta, log_det, ridge_added });
            }
            if ridge_added {
                return Err(GammError::Rank(format!(
                    "penalized system is singular; offending term: {}",
                    self.offending_term(&(&self.xtx + self.design.total_penalty(lambdas)))
                )));
            }
            let mean_diag = h.diagonal().mean().abs().max(f64::MIN_POSITIVE);
            for i in 0..p {
                h[(i, i)] += 1e-10 * mean_diag;
            }
            ridge_added = true;
        }
    }

    fn penalty_form(&self, lambdas: &[f64], beta: &DVector<f64>) -> f64 {
        self.design
            .penalties
            .iter()
            .zip(lambdas)
            .map(|(s, &l)| {
                let b = beta.rows(s.offset, s.size());
                l * (b.transpose() * &s.matrix * b)[(0, 0)]
            })
            .sum()
    }

    fn rss(&self, beta: &DVector<f64>) -> f64 {
        (&self.design.y - &self.design.x * beta).norm_squared()
    }

    /// `log |Σ λ_j S_j|₊` over the structural range of the penalties.
    pub fn log_pdet(&self, lambdas: &[f64]) -> f64 {
        let mut total = 0.0;
        for c in &self.components {
            match c {
                Component::Diagonal(coords) => {
                    for entries in coords {
                        let s: f64 = entries.iter().map(|&(j, v)| lambdas[j] * v).sum();
                        total += s.ln();
                    }
                }
                Component::Dense { offset, size, members, rank } => {
                    let mut m = DMatrix::zeros(*size, *size);
                    for &j in members {
                        let s = &self.design.penalties[j];
                        let mut v = m.view_mut((s.offset - offset, s.offset - offset), (s.size(), s.size()));
                        v += &s.matrix * lambdas[j];
                    }
                    let (vals, _) = sym_eigen_sorted(&m);
                    for k in (size - rank)..*size {
                        total += vals[k].ln();
                    }
                }
            }
        }
        total
    }

    pub fn solve(&self, lambdas: &[f64]) -> Result<PlsSolution> {
        self.check_lambdas(lambdas)?;
        let f = self.factor(lambdas)?;
        let p = self.xtx.nrows();
        let mut vb = f.chol.inverse();
        for j in 0..p {
            for i in 0..p {
                vb[(i, j)] *= f.d[i] * f.d[j];
            }
        }
        let edf = DVector::from_iterator(p, (0..p).map(|i| vb.row(i).dot(&self.xtx.column(i).transpose())));
        let rss = self.rss(&f.beta);
        let penalty = self.penalty_form(lambdas, &f.beta);
        Ok(PlsSolution { beta: f.beta, vb_unscaled: vb, edf, rss, penalty, ridge_added: f.ridge_added })
    }

    /// Negative log restricted likelihood with the scale profiled out.
    pub fn reml(&self, log_lambdas: &[f64]) -> Result<f64> {
        let lambdas: Vec<f64> = log_lambdas.iter().map(|v| v.exp()).collect();
        self.check_lambdas(&lambdas)?;
        let f = self.factor(&lambdas)?;
        let dp = self.rss(&f.beta) + self.penalty_form(&lambdas, &f.beta);
        let nr = (self.design.n() - self.null_dim) as f64;
        let log_s = self.log_pdet(&lambdas);
        let score = 0.5 * (nr * ((2.0 * PI * dp / nr).ln() + 1.0) + f.log_det - log_s);
        if !score.is_finite() {
            return Err(GammError::Numeric(format!("non-finite REML score at lambdas {lambdas:?}")));
        }
        Ok(score)
    }
}

/// Penalized least squares at fixed smoothing parameters.
pub fn pls_solve(design: &AssembledDesign, lambdas: &[f64]) -> Result<PlsSolution> {
    PenalizedProblem::new(design).solve(lambdas)
}

/// REML criterion (lower is better) at natural-log smoothing parameters.
pub fn reml_score(design: &AssembledDesign, log_lambdas: &[f64]) -> Result<f64> {
    PenalizedProblem::new(design).reml(log_lambdas)
}

/// `‖y − Xβ‖² + Σ λ_j βᵀ S_j β`.
pub fn penalized_objective(design: &AssembledDesign, lambdas: &[f64], beta: &DVector<f64>) -> f64 {
    let r = &design.y - &design.x * beta;
    r.norm_squared() + (beta.transpose() * design.total_penalty(lambdas) * beta)[(0, 0)]
}

/// Gradient of [`penalized_objective`]: `2 (Xᵀ(Xβ − y) + Σ λ_j S_j β)`.
pub fn objective_gradient(design: &AssembledDesign, lambdas: &[f64], beta: &DVector<f64>) -> DVector<f64> {
    let r = &design.x * beta - &design.y;
    (design.x.transpose() * r + design.total_penalty(lambdas) * beta) * 2.0
}
