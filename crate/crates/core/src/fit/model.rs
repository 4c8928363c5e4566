use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::assemble::{ar1_unwhiten, ar1_whiten, assemble, design_rows, term_rows};
use super::optimize::{optimize_problem, NelderMeadOptions};
use super::{AssembledDesign, ModelSpec, PenalizedProblem, Reference, TermBlock, TermSource};
use crate::basis::Extrapolation;
use crate::data_io::{Column, DataTable, FactorColumn};
use crate::error::{GammError, Result};

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Fixed smoothing parameters; REML selection is skipped when given.
    pub lambdas: Option<Vec<f64>>,
    /// Starting natural-log smoothing parameters for the optimizer.
    pub init_log_lambdas: Option<Vec<f64>>,
    pub optimizer: Option<NelderMeadOptions>,
}

impl FitOptions {
    pub fn fixed(lambdas: Vec<f64>) -> Self {
        Self { lambdas: Some(lambdas), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub design: Arc<AssembledDesign>,
    pub beta: DVector<f64>,
    pub lambdas: Vec<f64>,
    /// Residual variance `RSS / (n − total edf)` of the whitened fit.
    pub sigma2: f64,
    /// Bayesian posterior covariance `σ² (XᵀX + Σ λ_j S_j)⁻¹`.
    pub vb: DMatrix<f64>,
    pub vb_unscaled: DMatrix<f64>,
    pub edf: DVector<f64>,
    pub total_edf: f64,
    /// REML score including the whitening Jacobian; `None` when some λ is zero.
    pub reml: Option<f64>,
    /// Gaussian log-likelihood at the maximum-likelihood scale `RSS / n`.
    pub loglik: f64,
    /// Residual sum of squares of the whitened fit.
    pub rss: f64,
    /// Fitted values on the response scale, in table row order.
    pub fitted: Vec<f64>,
    pub residuals_raw: Vec<f64>,
    pub residuals_whitened: Vec<f64>,
    /// False when λ selection stopped on its evaluation budget.
    pub converged: bool,
    pub ridge_added: bool,
}

impl FittedModel {
    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn p(&self) -> usize {
        self.design.p()
    }

    pub fn rho(&self) -> f64 {
        self.design.rho
    }

    pub fn term(&self, label: &str) -> Result<&TermBlock> {
        Ok(&self.design.terms[self.design.term_index(label)?])
    }

    pub fn residual_df(&self) -> f64 {
        self.n() as f64 - self.total_edf
    }

    /// Number of smoothing parameters.
    pub fn n_lambdas(&self) -> usize {
        self.lambdas.len()
    }
}

fn to_table_order(values: &[f64], row_order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (i, &r) in row_order.iter().enumerate() {
        out[r] = values[i];
    }
    out
}

pub fn fit(spec: &ModelSpec, table: &DataTable) -> Result<FittedModel> {
    fit_with(spec, table, &FitOptions::default())
}

pub fn fit_with(spec: &ModelSpec, table: &DataTable, opts: &FitOptions) -> Result<FittedModel> {
    let design = assemble(spec, table)?;
    let design = if spec.rho > 0.0 {
        let series = match &design.series {
            Some(s) => FactorColumn::from_codes(s.codes.clone(), s.levels.clone())?,
            None => FactorColumn::from_codes(vec![0; design.n()], vec!["all".into()])?,
        };
        ar1_whiten(&design, spec.rho, &series)?
    } else {
        design
    };
    fit_design(spec, design, opts)
}

/// Fits an already assembled (and possibly whitened) design.
pub fn fit_design(spec: &ModelSpec, design: AssembledDesign, opts: &FitOptions) -> Result<FittedModel> {
    let prob = PenalizedProblem::new(&design);
    let (lambdas, converged) = match &opts.lambdas {
        Some(l) => (l.clone(), true),
        None => {
            let nm = opts.optimizer.clone().unwrap_or_default();
            let r = optimize_problem(&prob, opts.init_log_lambdas.as_deref(), &nm)?;
            (r.lambdas, r.converged)
        }
    };
    let sol = prob.solve(&lambdas)?;
    let log_w = design.whitening_log_det();
    let reml = if lambdas.iter().all(|&l| l > 0.0) {
        let logs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
        Some(prob.reml(&logs)? - log_w)
    } else {
        None
    };
    let n = design.n() as f64;
    let total_edf = sol.edf.sum();
    let resid_df = n - total_edf;
    let sigma2 = if resid_df > 1e-9 * n { sol.rss / resid_df } else { 0.0 };
    let loglik = -0.5 * n * ((2.0 * PI * sol.rss / n).ln() + 1.0) + log_w;

    let e_w: Vec<f64> = (&design.y - &design.x * &sol.beta).iter().copied().collect();
    let e_raw = if design.whitened {
        ar1_unwhiten(&e_w, design.rho, &design.series_codes())
    } else {
        e_w.clone()
    };
    let fitted: Vec<f64> = design.y_raw.iter().zip(&e_raw).map(|(y, e)| y - e).collect();
    let order = &design.row_order;
    Ok(FittedModel {
        spec: spec.clone(),
        beta: sol.beta,
        lambdas,
        sigma2,
        vb: &sol.vb_unscaled * sigma2,
        vb_unscaled: sol.vb_unscaled,
        edf: sol.edf,
        total_edf,
        reml,
        loglik,
        rss: sol.rss,
        fitted: to_table_order(&fitted, order),
        residuals_raw: to_table_order(&e_raw, order),
        residuals_whitened: to_table_order(&e_w, order),
        converged,
        ridge_added: sol.ridge_added,
        design: Arc::new(design),
    })
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    /// Labels of terms whose contribution is set to zero.
    pub exclude: Vec<String>,
    pub extrapolation: Extrapolation,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub extrapolated: bool,
}

fn se_rows(x: &DMatrix<f64>, vb: &DMatrix<f64>) -> Vec<f64> {
    let xv = x * vb;
    (0..x.nrows())
        .map(|i| xv.row(i).dot(&x.row(i)).max(0.0).sqrt())
        .collect()
}

pub fn predict(model: &FittedModel, newdata: &DataTable) -> Result<Prediction> {
    predict_with(model, newdata, &PredictOptions::default())
}

pub fn predict_with(model: &FittedModel, newdata: &DataTable, opts: &PredictOptions) -> Result<Prediction> {
    let d = &model.design;
    for e in &opts.exclude {
        d.term_index(e)?;
    }
    let include: Vec<bool> = d.terms.iter().map(|t| !opts.exclude.contains(&t.label)).collect();
    let (x, extrapolated) = design_rows(d, newdata, opts.extrapolation, &include)?;
    let mean = (&x * &model.beta).iter().copied().collect();
    Ok(Prediction { mean, se: se_rows(&x, &model.vb), extrapolated })
}

#[derive(Debug, Clone)]
pub struct PartialEffect {
    pub term: String,
    pub effect: Vec<f64>,
    pub se: Vec<f64>,
    pub grid: DataTable,
    pub extrapolated: bool,
}

/// Contribution of a single term on the rows of `grid`, with its standard error.
pub fn partial_effect(model: &FittedModel, term: &str, grid: &DataTable) -> Result<PartialEffect> {
    let t = model.term(term)?;
    let (x, extrapolated) = term_rows(t, grid, Extrapolation::Linear)?;
    let r = t.range.clone();
    let beta = model.beta.rows(r.start, r.len());
    let vb = model.vb.view((r.start, r.start), (r.len(), r.len())).into_owned();
    Ok(PartialEffect {
        term: term.to_string(),
        effect: (&x * beta).iter().copied().collect(),
        se: se_rows(&x, &vb),
        grid: grid.clone(),
        extrapolated,
    })
}

/// Evaluation grid for a term: `n` evenly spaced values over the training
/// range of each numeric covariate (a lattice for two covariates, first
/// covariate varying slowest) crossed with every level of each factor.
pub fn effect_grid(model: &FittedModel, term: &str, n: usize) -> Result<DataTable> {
    let t = model.term(term)?;
    let names: Vec<String> = match &t.source {
        TermSource::Intercept => return Err(GammError::Spec("the intercept has no partial effect".into())),
        TermSource::Parametric(_) => t.label.split(':').map(|s| s.to_string()).collect(),
        TermSource::Smooth(b) => b.covariates(),
    };
    let mut axes: Vec<Vec<usize>> = Vec::new();
    let mut refs: Vec<&Reference> = Vec::new();
    for name in &names {
        let r = model
            .design
            .references
            .get(name)
            .ok_or_else(|| GammError::Lookup(format!("covariate '{name}'")))?;
        let len = match r {
            Reference::Numeric { .. } => n.max(2),
            Reference::Factor { levels } => levels.len(),
        };
        axes.push((0..len).collect());
        refs.push(r);
    }
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut cols = Vec::new();
    let mut stride = total;
    for (k, name) in names.iter().enumerate() {
        let len = axes[k].len();
        stride /= len;
        let idx: Vec<usize> = (0..total).map(|i| (i / stride) % len).collect();
        let col = match refs[k] {
            Reference::Numeric { min, max, .. } => Column::Numeric(
                idx.iter()
                    .map(|&i| if i + 1 == len { *max } else { min + (max - min) * i as f64 / (len - 1) as f64 })
                    .collect(),
            ),
            Reference::Factor { levels } => Column::Factor(FactorColumn::from_codes(
                idx.iter().map(|&i| i as u32).collect(),
                levels.clone(),
            )?),
        };
        cols.push((name.clone(), col));
    }
    DataTable::from_columns(cols)
}
