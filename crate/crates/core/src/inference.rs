//! Effective degrees of freedom, AIC and model-comparison tests.
//!
//! The term tests are Wald-type approximations that ignore smoothing
//! parameter uncertainty; every [`TermSummary`] carries an `approximate`
//! flag so reports can say so.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{GammError, Result};
use crate::fit::{FittedModel, TermKind};
use crate::linalg::truncated_pinv;

/// Sum of the per-coefficient edf over a term's columns.
pub fn term_edf(model: &FittedModel, term: &str) -> Result<f64> {
    let t = model.term(term)?;
    Ok(model.edf.rows(t.range.start, t.range.len()).sum())
}

/// `−2 log L + 2 (total edf + 1)`, the extra parameter being the scale.
pub fn aic(model: &FittedModel) -> f64 {
    -2.0 * model.loglik + 2.0 * (model.total_edf + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FTest {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
}

fn f_upper(f: f64, df1: f64, df2: f64) -> f64 {
    if !(f > 0.0) || !(df1 > 0.0) || !(df2 > 0.0) {
        return 1.0;
    }
    match FisherSnedecor::new(df1, df2) {
        Ok(d) => (1.0 - d.cdf(f)).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

fn chisq_upper(x: f64, df: f64) -> f64 {
    if !(x > 0.0) || !(df > 0.0) {
        return 1.0;
    }
    match ChiSquared::new(df) {
        Ok(d) => (1.0 - d.cdf(x)).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

/// F-test from its ingredients: `F = (Δdeviance / Δedf) / scale`.
pub fn nested_f_test_parts(delta_deviance: f64, delta_edf: f64, scale: f64, df2: f64) -> FTest {
    let f = (delta_deviance / delta_edf / scale).max(0.0);
    FTest { f, df1: delta_edf, df2, p: f_upper(f, delta_edf, df2) }
}

fn check_same_data(a: &FittedModel, b: &FittedModel) -> Result<()> {
    if a.spec.response != b.spec.response || a.n() != b.n() {
        return Err(GammError::Comparison(format!(
            "models fit different data ('{}' n={} vs '{}' n={})",
            a.spec.response,
            a.n(),
            b.spec.response,
            b.n()
        )));
    }
    if a.rho() != b.rho() {
        return Err(GammError::Comparison(format!(
            "models use different AR(1) whitening (rho {} vs {})",
            a.rho(),
            b.rho()
        )));
    }
    Ok(())
}

/// F-test of a smaller model against a larger one that contains it.
pub fn nested_f_test(small: &FittedModel, big: &FittedModel) -> Result<FTest> {
    check_same_data(small, big)?;
    for t in &small.design.terms {
        if big.design.term_index(&t.label).is_err() {
            return Err(GammError::Nesting(format!("term '{}' is missing from the larger model", t.label)));
        }
    }
    let delta_edf = big.total_edf - small.total_edf;
    let df2 = big.residual_df();
    if delta_edf.abs() < 1e-8 {
        return Ok(FTest { f: 0.0, df1: 0.0, df2, p: 1.0 });
    }
    if delta_edf < 0.0 {
        return Err(GammError::Nesting(format!(
            "the larger model has fewer effective degrees of freedom ({:.4} < {:.4})",
            big.total_edf, small.total_edf
        )));
    }
    Ok(nested_f_test_parts(small.rss - big.rss, delta_edf, big.sigma2, df2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Chi-squared test of the score difference.
    Tested,
    /// The model with fewer parameters also has the lower score; no test is done.
    SimplerAndBetter,
    /// Both models have the same parameter count; the difference is reported untested.
    EqualComplexity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemlComparison {
    pub score0: f64,
    pub score1: f64,
    pub df0: usize,
    pub df1: usize,
    /// Absolute score difference.
    pub stat: f64,
    pub df: usize,
    pub p: Option<f64>,
    pub verdict: Verdict,
    /// Index (0 or 1) of the preferred model.
    pub preferred: usize,
}

/// Comparison of two REML scores (lower is better) with `df0`, `df1`
/// counted parameters. The statistic is the raw score difference, referred
/// to a chi-squared distribution on the difference in parameter counts.
pub fn compare_scores(score0: f64, df0: usize, score1: f64, df1: usize) -> RemlComparison {
    let stat = (score0 - score1).abs();
    let df = df0.abs_diff(df1);
    let better = if score0 <= score1 { 0 } else { 1 };
    let (verdict, p, preferred) = if df0 == df1 {
        (Verdict::EqualComplexity, None, better)
    } else {
        let simpler = if df0 < df1 { 0 } else { 1 };
        if simpler == better {
            (Verdict::SimplerAndBetter, None, simpler)
        } else {
            let p = chisq_upper(stat, df as f64);
            (Verdict::Tested, Some(p), if p < 0.05 { better } else { simpler })
        }
    };
    RemlComparison { score0, score1, df0, df1, stat, df, p, verdict, preferred }
}

/// Parameters counted by [`compare_reml`]: unpenalized coefficients of
/// parametric and unpenalized smooth terms plus one per smoothing parameter.
pub fn reml_parameter_count(model: &FittedModel) -> usize {
    let fixed: usize = model
        .design
        .terms
        .iter()
        .filter(|t| t.penalties.is_empty() && t.kind != TermKind::Random)
        .map(|t| t.range.len())
        .sum();
    fixed + model.n_lambdas()
}

pub fn compare_reml(model0: &FittedModel, model1: &FittedModel) -> Result<RemlComparison> {
    check_same_data(model0, model1)?;
    if model0.spec == model1.spec {
        return Err(GammError::Comparison("the two models have identical specifications".into()));
    }
    let s0 = model0
        .reml
        .ok_or_else(|| GammError::Comparison("model 0 has no REML score (a smoothing parameter is zero)".into()))?;
    let s1 = model1
        .reml
        .ok_or_else(|| GammError::Comparison("model 1 has no REML score (a smoothing parameter is zero)".into()))?;
    Ok(compare_scores(s0, reml_parameter_count(model0), s1, reml_parameter_count(model1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryKind {
    Parametric,
    Smooth,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermSummary {
    pub term: String,
    pub kind: SummaryKind,
    pub edf: f64,
    pub ref_df: f64,
    pub statistic: f64,
    pub p: f64,
    pub approximate: bool,
}

/// Wald-type test of all coefficients of one term.
///
/// Parametric terms use the full inverse of their covariance block. Smooth
/// and random terms use `βᵀ V⁻ β / edf` with the pseudo-inverse truncated to
/// rank `round(edf)`, referred to `F(edf, n − total edf)`.
pub fn wald_term_test(model: &FittedModel, term: &str) -> Result<TermSummary> {
    let t = model.term(term)?;
    let r = t.range.clone();
    let beta = model.beta.rows(r.start, r.len()).into_owned();
    let v: DMatrix<f64> = model.vb.view((r.start, r.start), (r.len(), r.len())).into_owned();
    let edf = term_edf(model, term)?;
    let df2 = model.residual_df().max(1.0);
    match t.kind {
        TermKind::Intercept | TermKind::Parametric => {
            let q = r.len() as f64;
            let stat = match v.clone().cholesky() {
                Some(c) => (beta.transpose() * c.solve(&beta))[(0, 0)] / q,
                None => (beta.transpose() * truncated_pinv(&v, r.len()) * &beta)[(0, 0)] / q,
            };
            Ok(TermSummary {
                term: term.to_string(),
                kind: SummaryKind::Parametric,
                edf,
                ref_df: q,
                statistic: stat,
                p: f_upper(stat, q, df2),
                approximate: false,
            })
        }
        TermKind::Smooth | TermKind::Random => {
            let kind = if t.kind == TermKind::Random { SummaryKind::Random } else { SummaryKind::Smooth };
            if edf <= 1e-6 {
                return Ok(TermSummary {
                    term: term.to_string(),
                    kind,
                    edf: edf.max(0.0),
                    ref_df: 0.0,
                    statistic: 0.0,
                    p: 1.0,
                    approximate: true,
                });
            }
            let rank = (edf.round() as usize).clamp(1, r.len());
            let stat = (beta.transpose() * truncated_pinv(&v, rank) * &beta)[(0, 0)] / edf;
            Ok(TermSummary {
                term: term.to_string(),
                kind,
                edf,
                ref_df: edf,
                statistic: stat,
                p: f_upper(stat, edf, df2),
                approximate: true,
            })
        }
    }
}

/// One row of the parametric coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

/// Estimates, standard errors and two-sided t-tests for the intercept and
/// parametric columns.
pub fn parametric_table(model: &FittedModel) -> Vec<CoefRow> {
    let df = model.residual_df().max(1.0);
    let dist = StudentsT::new(0.0, 1.0, df).ok();
    let mut rows = Vec::new();
    for t in &model.design.terms {
        if !matches!(t.kind, TermKind::Intercept | TermKind::Parametric) {
            continue;
        }
        for (k, j) in t.range.clone().enumerate() {
            let estimate = model.beta[j];
            let se = model.vb[(j, j)].max(0.0).sqrt();
            let tv = estimate / se;
            let p = match &dist {
                Some(d) if tv.is_finite() => (2.0 * (1.0 - d.cdf(tv.abs()))).clamp(0.0, 1.0),
                _ => f64::NAN,
            };
            rows.push(CoefRow { name: t.column_names[k].clone(), estimate, se, t: tv, p });
        }
    }
    rows
}

/// Wald summaries of every smooth and random-effect term.
pub fn smooth_table(model: &FittedModel) -> Result<Vec<TermSummary>> {
    model
        .design
        .terms
        .iter()
        .filter(|t| matches!(t.kind, TermKind::Smooth | TermKind::Random))
        .map(|t| wald_term_test(model, &t.label))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_from_parts() {
        // Δdeviance 1.1664 over 15.4248 − 9.6448 edf; scale back-solved for F ≈ 6.01
        let delta_edf: f64 = 15.4248 - 9.6448;
        assert!((delta_edf - 5.78).abs() < 1e-12);
        let t = nested_f_test_parts(1.1664, delta_edf, 0.03357, 300.0);
        assert!((t.f - 6.01).abs() < 0.005, "{}", t.f);
        assert!(t.p < 1e-4);
    }

    #[test]
    fn score_comparisons() {
        let c = compare_scores(-12495.77, 27, -13422.25, 34);
        assert!((c.stat - 926.48).abs() < 1e-9);
        assert_eq!(c.df, 7);
        assert_eq!(c.verdict, Verdict::Tested);
        assert!(c.p.unwrap() < 1e-4);
        assert_eq!(c.preferred, 1);
        let c = compare_scores(-13027.88, 10, -14911.48, 14);
        assert!((c.stat - 1883.6).abs() < 1e-9);
        // symmetric in argument order
        let d = compare_scores(-14911.48, 14, -13027.88, 10);
        assert_eq!(c.stat, d.stat);
        // fewer parameters and a lower score
        let s = compare_scores(-100.0, 5, -90.0, 8);
        assert_eq!(s.verdict, Verdict::SimplerAndBetter);
        assert_eq!(s.p, None);
    }
}
