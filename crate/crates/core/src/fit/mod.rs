//! Model assembly, AR(1) whitening, penalized least squares and REML
//! smoothing-parameter selection.

mod assemble;
mod model;
mod optimize;
mod pls;

pub use assemble::{ar1_unwhiten, ar1_whiten, assemble};
pub use model::{
    effect_grid, fit, fit_design, fit_with, partial_effect, predict, predict_with, FitOptions, FittedModel,
    PartialEffect, Prediction, PredictOptions,
};
pub use optimize::{nelder_mead, optimize_lambdas, NelderMeadOptions, NelderMeadResult, OptimizeResult};
pub use pls::{objective_gradient, penalized_objective, pls_solve, reml_score, PenalizedProblem, PlsSolution};

use std::ops::Range;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisBlock, KnotPlacement, SmoothTermSpec};
use crate::error::{GammError, Result};

/// Contrast coding for factor columns in the parametric part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coding {
    /// Level 0 is coded −0.5, level j is coded +0.5 in column j.
    #[default]
    Sum,
    /// Indicator columns for every level but the first.
    Treatment,
}

/// A main effect or interaction in the parametric part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricTerm {
    pub variables: Vec<String>,
    pub coding: Coding,
}

impl ParametricTerm {
    pub fn new(variable: &str) -> Self {
        Self { variables: vec![variable.to_string()], coding: Coding::Sum }
    }

    pub fn interaction(variables: &[&str]) -> Self {
        Self { variables: variables.iter().map(|s| s.to_string()).collect(), coding: Coding::Sum }
    }

    pub fn with_coding(mut self, coding: Coding) -> Self {
        self.coding = coding;
        self
    }

    pub fn label(&self) -> String {
        self.variables.join(":")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub response: String,
    pub parametric: Vec<ParametricTerm>,
    pub smooths: Vec<SmoothTermSpec>,
    /// AR(1) coefficient of the residuals within each series.
    pub rho: f64,
    pub knots: KnotPlacement,
    /// Rescale smooth penalties to the size of their design block so that
    /// log λ = 0 is a sensible starting point. Random effects are left alone.
    pub scale_penalties: bool,
}

impl ModelSpec {
    pub fn new(response: &str) -> Self {
        Self {
            response: response.to_string(),
            parametric: Vec::new(),
            smooths: Vec::new(),
            rho: 0.0,
            knots: KnotPlacement::Quantile,
            scale_penalties: true,
        }
    }

    pub fn parametric(mut self, term: ParametricTerm) -> Self {
        self.parametric.push(term);
        self
    }

    pub fn smooth(mut self, term: SmoothTermSpec) -> Self {
        self.smooths.push(term);
        self
    }

    pub fn rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn knots(mut self, placement: KnotPlacement) -> Self {
        self.knots = placement;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(GammError::Domain { row: 0, msg: format!("rho = {} outside [0, 1)", self.rho) });
        }
        let mut labels = vec!["(Intercept)".to_string()];
        for t in &self.parametric {
            if t.variables.is_empty() {
                return Err(GammError::Spec("empty parametric term".into()));
            }
            labels.push(t.label());
        }
        for s in &self.smooths {
            s.validate()?;
            labels.push(s.label());
        }
        let mut sorted = labels.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(GammError::Spec(format!("term '{}' appears twice", w[0])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Intercept,
    Parametric,
    Smooth,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ParamVar {
    Numeric(String),
    Factor { name: String, levels: Vec<String>, coding: Coding },
}

#[derive(Debug, Clone)]
pub(crate) enum TermSource {
    Intercept,
    Parametric(Vec<ParamVar>),
    Smooth(Box<BasisBlock>),
}

/// One model term and the design columns it owns.
#[derive(Debug, Clone)]
pub struct TermBlock {
    pub label: String,
    pub kind: TermKind,
    pub range: Range<usize>,
    /// Names of the individual columns, used for parametric coefficient rows.
    pub column_names: Vec<String>,
    /// Indices into [`AssembledDesign::penalties`].
    pub penalties: Vec<usize>,
    /// Dimension left unpenalized within the term.
    pub null_dim: usize,
    pub(crate) source: TermSource,
}

/// A term penalty, stored at its term's size and embedded at `offset`.
#[derive(Debug, Clone)]
pub struct EmbeddedPenalty {
    pub term: usize,
    pub offset: usize,
    pub matrix: DMatrix<f64>,
    pub label: String,
    /// Factor applied to the basis penalty by penalty scaling.
    pub scale: f64,
}

impl EmbeddedPenalty {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// The penalty as a full `p × p` matrix.
    pub fn embedded(&self, p: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(p, p);
        m.view_mut((self.offset, self.offset), (self.size(), self.size())).copy_from(&self.matrix);
        m
    }
}

/// Series structure of the design rows.
#[derive(Debug, Clone)]
pub struct SeriesInfo {
    pub name: String,
    /// Series code of each design row.
    pub codes: Vec<u32>,
    pub levels: Vec<String>,
    /// Order-key value of each design row, when declared.
    pub order: Option<Vec<f64>>,
}

/// Reference value of a covariate held fixed in partial-effect grids.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Numeric { median: f64, min: f64, max: f64 },
    Factor { levels: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct AssembledDesign {
    pub response: String,
    /// Response in design row order, whitened when `rho > 0`.
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// Response in design row order before whitening.
    pub y_raw: DVector<f64>,
    pub terms: Vec<TermBlock>,
    pub penalties: Vec<EmbeddedPenalty>,
    /// `row_order[i]` is the table row placed at design row `i`.
    pub row_order: Vec<usize>,
    pub series: Option<SeriesInfo>,
    pub rho: f64,
    pub whitened: bool,
    pub references: IndexMap<String, Reference>,
}

impl AssembledDesign {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_penalties(&self) -> usize {
        self.penalties.len()
    }

    pub fn term_index(&self, label: &str) -> Result<usize> {
        self.terms
            .iter()
            .position(|t| t.label == label)
            .ok_or_else(|| GammError::Lookup(format!("term '{label}'")))
    }

    /// `Σ_j λ_j S_j` as a `p × p` matrix.
    pub fn total_penalty(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let p = self.p();
        let mut s = DMatrix::zeros(p, p);
        for (pen, &l) in self.penalties.iter().zip(lambdas) {
            let k = pen.size();
            let mut view = s.view_mut((pen.offset, pen.offset), (k, k));
            view += &pen.matrix * l;
        }
        s
    }

    /// Series code per design row, or a single series when none is declared.
    pub(crate) fn series_codes(&self) -> Vec<u32> {
        match &self.series {
            Some(s) => s.codes.clone(),
            None => vec![0; self.n()],
        }
    }

    pub fn n_series(&self) -> usize {
        let codes = self.series_codes();
        let mut runs = 0;
        for (i, c) in codes.iter().enumerate() {
            if i == 0 || codes[i - 1] != *c {
                runs += 1;
            }
        }
        runs
    }

    /// `log |W|` of the whitening map, `Σ_series ½ log(1 − ρ²)`.
    pub fn whitening_log_det(&self) -> f64 {
        if !self.whitened || self.rho == 0.0 {
            return 0.0;
        }
        0.5 * (1.0 - self.rho * self.rho).ln() * self.n_series() as f64
    }
}
