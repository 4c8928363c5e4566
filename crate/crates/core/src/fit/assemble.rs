use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};

use super::{
    AssembledDesign, Coding, EmbeddedPenalty, ModelSpec, ParamVar, Reference, SeriesInfo, TermBlock, TermKind,
    TermSource,
};
use crate::basis::{
    absorb_constraints, apply_by_factor, cr_basis, factor_smooth, knots_even, knots_quantile, map_levels,
    natural_reparam, poly_basis, random_effect, tensor_product, tp_basis, BasisBlock, BasisKind, Extrapolation,
    KnotPlacement, SmoothTermSpec,
};
use crate::data_io::{Column, DataTable, FactorColumn};
use crate::error::{GammError, Result};
use crate::linalg::row_kron;

fn cr_margin(table: &DataTable, name: &str, k: usize, placement: KnotPlacement) -> Result<BasisBlock> {
    let x = table.numeric(name)?;
    let knots = match placement {
        KnotPlacement::Quantile => knots_quantile(x, k)?,
        KnotPlacement::Even => knots_even(x, k)?,
    };
    natural_reparam(&cr_basis(x, &knots)?.with_covariates(&[name])?)
}

fn build_smooth(s: &SmoothTermSpec, table: &DataTable, placement: KnotPlacement) -> Result<(BasisBlock, TermKind)> {
    let cov = &s.covariates;
    let mut block = match s.kind {
        BasisKind::Poly => poly_basis(table.numeric(&cov[0])?, s.k[0])?.with_covariates(&[&cov[0]])?,
        BasisKind::Cr => cr_margin(table, &cov[0], s.k[0], placement)?,
        BasisKind::Tp => {
            let cols: Vec<&[f64]> = cov.iter().map(|c| table.numeric(c)).collect::<Result<_>>()?;
            let m = DMatrix::from_fn(table.n_rows(), cols.len(), |i, j| cols[j][i]);
            let names: Vec<&str> = cov.iter().map(|c| c.as_str()).collect();
            tp_basis(&m, s.k[0], s.m)?.with_covariates(&names)?
        }
        BasisKind::Tensor | BasisKind::Ti if cov.len() == 2 => {
            let a = cr_margin(table, &cov[0], s.k[0], placement)?;
            let b = cr_margin(table, &cov[1], s.k[1], placement)?;
            tensor_product(&a, &b, s.kind == BasisKind::Ti)?
        }
        BasisKind::Tensor | BasisKind::Ti => cr_margin(table, &cov[0], s.k[0], placement)?,
        BasisKind::RandomEffect => {
            let f = table.factor(&cov[0])?;
            let slope = match cov.get(1) {
                Some(x) => Some((x.as_str(), table.numeric(x)?)),
                None => None,
            };
            let b = random_effect(&cov[0], f, slope)?;
            return Ok((b, TermKind::Random));
        }
    };
    let interaction = s.kind == BasisKind::Ti && cov.len() == 2;
    if let Some(g) = &s.fs_group {
        block = factor_smooth(&block, g, table.factor(g)?)?;
    } else {
        if s.kind != BasisKind::Poly && !interaction {
            block = absorb_constraints(&block)?;
        }
        if let Some(f) = &s.by {
            block = apply_by_factor(&block, f, table.factor(f)?)?;
        }
    }
    block.label = s.label();
    Ok((block, TermKind::Smooth))
}

fn param_var(table: &DataTable, name: &str, coding: Coding) -> Result<ParamVar> {
    match table.column(name)? {
        Column::Numeric(_) => Ok(ParamVar::Numeric(name.to_string())),
        Column::Factor(f) => {
            if f.n_levels() < 2 {
                return Err(GammError::Spec(format!("factor '{name}' has a single level")));
            }
            Ok(ParamVar::Factor { name: name.to_string(), levels: f.levels().to_vec(), coding })
        }
    }
}

/// Coded columns of one parametric variable on the rows of `table`.
fn coded_columns(var: &ParamVar, table: &DataTable) -> Result<(DMatrix<f64>, Vec<String>)> {
    match var {
        ParamVar::Numeric(name) => {
            let x = table.numeric(name)?;
            Ok((DMatrix::from_column_slice(x.len(), 1, x), vec![name.clone()]))
        }
        ParamVar::Factor { name, levels, coding } => {
            let codes = map_levels(table, name, levels)?;
            let l = levels.len();
            let m = DMatrix::from_fn(codes.len(), l - 1, |i, j| {
                let c = codes[i];
                match coding {
                    Coding::Sum if c == j + 1 => 0.5,
                    Coding::Sum if c == 0 => -0.5,
                    Coding::Treatment if c == j + 1 => 1.0,
                    _ => 0.0,
                }
            });
            let names = levels[1..].iter().map(|lv| format!("{name}{lv}")).collect();
            Ok((m, names))
        }
    }
}

fn parametric_block(vars: &[ParamVar], table: &DataTable) -> Result<(DMatrix<f64>, Vec<String>)> {
    let (mut x, mut names) = coded_columns(&vars[0], table)?;
    for v in &vars[1..] {
        let (xv, nv) = coded_columns(v, table)?;
        x = row_kron(&x, &xv);
        names = names
            .iter()
            .flat_map(|a| nv.iter().map(move |b| format!("{a}:{b}")))
            .collect();
    }
    Ok((x, names))
}

fn reference_for(table: &DataTable, name: &str) -> Result<Reference> {
    Ok(match table.column(name)? {
        Column::Numeric(v) => {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
            Reference::Numeric { median, min: s[0], max: s[n - 1] }
        }
        Column::Factor(f) => Reference::Factor { levels: f.levels().to_vec() },
    })
}

/// Builds the full design: intercept, coded parametric columns and
/// constrained smooth blocks. Rows are sorted by (series, order) when the
/// table declares a series structure. The design is not whitened.
pub fn assemble(spec: &ModelSpec, table: &DataTable) -> Result<AssembledDesign> {
    spec.validate()?;
    if table.n_rows() == 0 {
        return Err(GammError::EmptyData);
    }
    let row_order = table.series_order()?;
    let sorted = table.select_rows(&row_order);
    let y = DVector::from_column_slice(sorted.numeric(&spec.response)?);
    let n = sorted.n_rows();

    let mut blocks: Vec<(DMatrix<f64>, TermBlock, Vec<(DMatrix<f64>, String, f64)>)> = Vec::new();
    let mut references = IndexMap::new();
    let mut note = |name: &str| -> Result<()> {
        if !references.contains_key(name) {
            references.insert(name.to_string(), reference_for(&sorted, name)?);
        }
        Ok(())
    };

    blocks.push((
        DMatrix::from_element(n, 1, 1.0),
        TermBlock {
            label: "(Intercept)".into(),
            kind: TermKind::Intercept,
            range: 0..0,
            column_names: vec!["(Intercept)".into()],
            penalties: vec![],
            null_dim: 1,
            source: TermSource::Intercept,
        },
        vec![],
    ));

    for t in &spec.parametric {
        let vars: Vec<ParamVar> = t
            .variables
            .iter()
            .map(|v| param_var(&sorted, v, t.coding))
            .collect::<Result<_>>()?;
        for v in &t.variables {
            note(v)?;
        }
        let (x, names) = parametric_block(&vars, &sorted)?;
        let p = x.ncols();
        blocks.push((
            x,
            TermBlock {
                label: t.label(),
                kind: TermKind::Parametric,
                range: 0..0,
                column_names: names,
                penalties: vec![],
                null_dim: p,
                source: TermSource::Parametric(vars),
            },
            vec![],
        ));
    }

    for s in &spec.smooths {
        let (block, kind) = build_smooth(s, &sorted, spec.knots)?;
        for c in block.covariates() {
            note(&c)?;
        }
        let row_scale = block
            .x
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let pens: Vec<(DMatrix<f64>, String, f64)> = block
            .penalties
            .iter()
            .filter(|pen| pen.matrix.amax() > 0.0)
            .map(|pen| {
                let scale = if spec.scale_penalties && kind != TermKind::Random {
                    let norm_inf = pen
                        .matrix
                        .row_iter()
                        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                        .fold(0.0f64, f64::max);
                    row_scale * row_scale / norm_inf
                } else {
                    1.0
                };
                (&pen.matrix * scale, pen.label.clone(), scale)
            })
            .collect();
        let names = (1..=block.p()).map(|j| format!("{}.{j}", block.label)).collect();
        blocks.push((
            block.x.clone(),
            TermBlock {
                label: block.label.clone(),
                kind,
                range: 0..0,
                column_names: names,
                penalties: vec![],
                null_dim: block.null_dim,
                source: TermSource::Smooth(Box::new(block)),
            },
            pens,
        ));
    }

    let p: usize = blocks.iter().map(|b| b.0.ncols()).sum();
    if p > n {
        return Err(GammError::Rank(format!("{p} coefficients but only {n} rows")));
    }
    let mut x = DMatrix::zeros(n, p);
    let mut terms = Vec::with_capacity(blocks.len());
    let mut penalties = Vec::new();
    let mut offset = 0;
    for (ti, (xb, mut term, pens)) in blocks.into_iter().enumerate() {
        let w = xb.ncols();
        if w == 0 {
            return Err(GammError::Spec(format!("term '{}' has no columns", term.label)));
        }
        x.columns_mut(offset, w).copy_from(&xb);
        term.range = offset..offset + w;
        for (matrix, label, scale) in pens {
            term.penalties.push(penalties.len());
            penalties.push(EmbeddedPenalty { term: ti, offset, matrix, label, scale });
        }
        terms.push(term);
        offset += w;
    }

    let series = match sorted.series_key() {
        Some(s) => {
            let f = sorted.factor(s)?;
            Some(SeriesInfo {
                name: s.to_string(),
                codes: f.codes().to_vec(),
                levels: f.levels().to_vec(),
                order: match sorted.order_key() {
                    Some(o) => Some(sorted.numeric(o)?.to_vec()),
                    None => None,
                },
            })
        }
        None => None,
    };

    Ok(AssembledDesign {
        response: spec.response.clone(),
        y_raw: y.clone(),
        y,
        x,
        terms,
        penalties,
        row_order,
        series,
        rho: 0.0,
        whitened: false,
        references,
    })
}

/// Design columns of the selected terms evaluated on the rows of `table`
/// (in table order). Columns of excluded terms are zero.
pub(crate) fn design_rows(
    design: &AssembledDesign,
    table: &DataTable,
    mode: Extrapolation,
    include: &[bool],
) -> Result<(DMatrix<f64>, bool)> {
    let n = table.n_rows();
    let mut x = DMatrix::zeros(n, design.p());
    let mut extrapolated = false;
    for (term, &on) in design.terms.iter().zip(include) {
        if !on {
            continue;
        }
        let (xt, ext) = term_rows(term, table, mode)?;
        x.columns_mut(term.range.start, term.range.len()).copy_from(&xt);
        extrapolated |= ext;
    }
    Ok((x, extrapolated))
}

pub(crate) fn term_rows(term: &TermBlock, table: &DataTable, mode: Extrapolation) -> Result<(DMatrix<f64>, bool)> {
    match &term.source {
        TermSource::Intercept => Ok((DMatrix::from_element(table.n_rows(), 1, 1.0), false)),
        TermSource::Parametric(vars) => Ok((parametric_block(vars, table)?.0, false)),
        TermSource::Smooth(block) => {
            let e = block.evaluate(table, mode)?;
            Ok((e.x, e.extrapolated))
        }
    }
}

fn check_series_runs(design: &AssembledDesign, codes: &[u32]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for i in 0..codes.len() {
        let start = i == 0 || codes[i] != codes[i - 1];
        if start {
            if !seen.insert(codes[i]) {
                return Err(GammError::Ordering(format!(
                    "series code {} is not contiguous (row {i})",
                    codes[i]
                )));
            }
        } else if let Some(order) = design.series.as_ref().and_then(|s| s.order.as_ref()) {
            if !(order[i] > order[i - 1]) {
                return Err(GammError::Ordering(format!("order values not increasing at row {i}")));
            }
        }
    }
    Ok(())
}

/// Applies the inverse Cholesky factor of the AR(1) correlation matrix to
/// `y` and `X`, series by series: the first row of a series is scaled by
/// `√(1 − ρ²)` and every later row becomes `row_t − ρ·row_{t−1}`.
pub fn ar1_whiten(design: &AssembledDesign, rho: f64, series: &FactorColumn) -> Result<AssembledDesign> {
    if !(0.0..1.0).contains(&rho) {
        return Err(GammError::Domain { row: 0, msg: format!("rho = {rho} outside [0, 1)") });
    }
    if series.len() != design.n() {
        return Err(GammError::Shape(format!(
            "series factor has {} rows, design has {}",
            series.len(),
            design.n()
        )));
    }
    if design.whitened {
        return Err(GammError::Spec("design is already whitened".into()));
    }
    let codes = series.codes();
    check_series_runs(design, codes)?;
    if rho == 0.0 {
        return Ok(design.clone());
    }
    let mut out = design.clone();
    let first = (1.0 - rho * rho).sqrt();
    let whiten = |v: &mut [f64]| {
        for i in (1..v.len()).rev() {
            if codes[i] == codes[i - 1] {
                v[i] -= rho * v[i - 1];
            } else {
                v[i] *= first;
            }
        }
        v[0] *= first;
    };
    whiten(out.y.as_mut_slice());
    for mut c in out.x.column_iter_mut() {
        whiten(c.as_mut_slice());
    }
    out.rho = rho;
    out.whitened = true;
    out.series = Some(match &design.series {
        Some(s) if s.codes == codes => s.clone(),
        _ => SeriesInfo {
            name: "series".into(),
            codes: codes.to_vec(),
            levels: series.levels().to_vec(),
            order: None,
        },
    });
    Ok(out)
}

/// Inverse of the whitening map applied to a residual vector.
pub fn ar1_unwhiten(w: &[f64], rho: f64, codes: &[u32]) -> Vec<f64> {
    let first = (1.0 - rho * rho).sqrt();
    let mut e = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        if i == 0 || codes[i] != codes[i - 1] {
            e.push(w[i] / first);
        } else {
            e.push(w[i] + rho * e[i - 1]);
        }
    }
    e
}
