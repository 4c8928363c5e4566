use nalgebra::DMatrix;

use super::{joint_null_dim, natural_reparam, BasisBlock, Evaluator, Penalty};
use crate::data_io::FactorColumn;
use crate::error::{GammError, Result};

/// Places the columns of `x` into the block of `level`, zero elsewhere.
pub(crate) fn spread_by_level(x: &DMatrix<f64>, codes: &[usize], n_levels: usize) -> DMatrix<f64> {
    let p = x.ncols();
    let mut out = DMatrix::zeros(x.nrows(), p * n_levels);
    for (i, &c) in codes.iter().enumerate() {
        for j in 0..p {
            out[(i, c * p + j)] = x[(i, j)];
        }
    }
    out
}

/// Indicator matrix with one column per level, optionally scaled by a slope covariate.
pub(crate) fn indicator_design(codes: &[usize], n_levels: usize, slope: Option<&[f64]>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(codes.len(), n_levels);
    for (i, &c) in codes.iter().enumerate() {
        out[(i, c)] = slope.map_or(1.0, |s| s[i]);
    }
    out
}

fn block_diag_at(s: &DMatrix<f64>, level: usize, n_levels: usize) -> DMatrix<f64> {
    let p = s.nrows();
    let mut out = DMatrix::zeros(p * n_levels, p * n_levels);
    out.view_mut((level * p, level * p), (p, p)).copy_from(s);
    out
}

fn replicated(block: &BasisBlock, name: &str, factor: &FactorColumn) -> Result<(DMatrix<f64>, Evaluator)> {
    if factor.len() != block.n_rows() {
        return Err(GammError::Shape(format!(
            "factor '{name}' has {} rows, block '{}' has {}",
            factor.len(),
            block.label,
            block.n_rows()
        )));
    }
    for (level, &count) in factor.levels().iter().zip(factor.counts().iter()) {
        if count < block.null_dim.max(1) {
            return Err(GammError::InsufficientData(format!(
                "level '{level}' of '{name}' has {count} rows, '{}' needs at least {}",
                block.label,
                block.null_dim.max(1)
            )));
        }
    }
    let codes: Vec<usize> = factor.codes().iter().map(|&c| c as usize).collect();
    let x = spread_by_level(&block.x, &codes, factor.n_levels());
    let eval = Evaluator::Replicated {
        inner: Box::new(block.clone()),
        factor: name.to_string(),
        levels: factor.levels().to_vec(),
    };
    Ok((x, eval))
}

/// One copy of `block` per level of `factor`, each with its own penalties
/// (and so its own smoothing parameters).
pub fn apply_by_factor(block: &BasisBlock, name: &str, factor: &FactorColumn) -> Result<BasisBlock> {
    let (x, eval) = replicated(block, name, factor)?;
    let l = factor.n_levels();
    let mut penalties = Vec::with_capacity(l * block.penalties.len());
    for (lvl, level) in factor.levels().iter().enumerate() {
        for s in &block.penalties {
            penalties.push(Penalty::new(
                block_diag_at(&s.matrix, lvl, l),
                format!("{}:{name}{level}", s.label),
            ));
        }
    }
    Ok(BasisBlock {
        label: format!("{}:{name}", block.label),
        x,
        penalties,
        null_dim: block.null_dim * l,
        constraint: None,
        eval,
        transforms: Vec::new(),
    })
}

/// Factor smooth: per-level copies of a univariate smooth sharing one
/// wiggliness penalty and one ridge penalty on the null space, so every
/// direction is penalized.
pub fn factor_smooth(block: &BasisBlock, name: &str, factor: &FactorColumn) -> Result<BasisBlock> {
    let nb = natural_reparam(block)?;
    let (x, eval) = replicated(&nb, name, factor)?;
    let p = nb.p();
    let l = factor.n_levels();
    let s = &nb.penalties[0].matrix;
    let mut s1 = DMatrix::zeros(p * l, p * l);
    let mut s2 = DMatrix::zeros(p * l, p * l);
    for lvl in 0..l {
        for j in 0..p {
            let d = s[(j, j)];
            if d > 0.0 {
                s1[(lvl * p + j, lvl * p + j)] = d;
            } else {
                s2[(lvl * p + j, lvl * p + j)] = 1.0;
            }
        }
    }
    let penalties = vec![Penalty::new(s1, "wiggly"), Penalty::new(s2, "null space")];
    let null_dim = joint_null_dim(&penalties, p * l);
    let cov = nb.covariates().join(",");
    Ok(BasisBlock {
        label: format!("fs({cov},{name})"),
        x,
        penalties,
        null_dim,
        constraint: None,
        eval,
        transforms: Vec::new(),
    })
}

/// Ridge-penalized random intercepts, or random slopes of `slope` when given.
pub fn random_effect(name: &str, factor: &FactorColumn, slope: Option<(&str, &[f64])>) -> Result<BasisBlock> {
    let l = factor.n_levels();
    if l < 2 {
        return Err(GammError::Degenerate(format!(
            "random effect '{name}' needs at least 2 levels, found {l}"
        )));
    }
    if let Some((s, v)) = slope {
        if v.len() != factor.len() {
            return Err(GammError::Shape(format!(
                "slope '{s}' has {} rows, factor '{name}' has {}",
                v.len(),
                factor.len()
            )));
        }
    }
    let codes: Vec<usize> = factor.codes().iter().map(|&c| c as usize).collect();
    let x = indicator_design(&codes, l, slope.map(|(_, v)| v));
    let label = match slope {
        Some((s, _)) => format!("re({name},{s})"),
        None => format!("re({name})"),
    };
    Ok(BasisBlock {
        label,
        x,
        penalties: vec![Penalty::new(DMatrix::identity(l, l), "ridge")],
        null_dim: 0,
        constraint: None,
        eval: Evaluator::RandomEffect {
            factor: name.to_string(),
            levels: factor.levels().to_vec(),
            slope: slope.map(|(s, _)| s.to_string()),
        },
        transforms: Vec::new(),
    })
}
