//! Residual autocorrelation, AR(1) coefficient suggestion, the permutation
//! check for factor smooths, per-group variability and residual summaries.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::SmoothTermSpec;
use crate::data_io::{Column, DataTable};
use crate::error::{GammError, Result};
use crate::fit::{fit, FittedModel, ModelSpec};
use crate::inference::wald_term_test;

pub const DEFAULT_MAX_LAG: usize = 30;
/// Basis size of the factor smooth in the default pilot and permutation models.
pub const DEFAULT_FS_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AcfResult {
    pub group: String,
    pub lags: Vec<usize>,
    pub acf: Vec<f64>,
    pub n: usize,
    /// Half-width of the ±1.96/√n band.
    pub band: f64,
}

/// Sample autocorrelations `r_k = Σ (x_t − x̄)(x_{t+k} − x̄) / Σ (x_t − x̄)²`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<AcfResult> {
    let n = series.len();
    if n < max_lag + 2 {
        return Err(GammError::Length(format!("series of length {n} is too short for lag {max_lag}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let denom: f64 = d.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(GammError::Degenerate("series has zero variance".into()));
    }
    let acf = (0..=max_lag)
        .map(|k| if k == 0 { 1.0 } else { d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / denom })
        .collect();
    Ok(AcfResult {
        group: "series".into(),
        lags: (0..=max_lag).collect(),
        acf,
        n,
        band: 1.96 / (n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualKind {
    Raw,
    Whitened,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAcf {
    /// One result per usable series.
    pub groups: Vec<AcfResult>,
    /// Lag-wise mean over the groups; `n` is the total row count.
    pub pooled: AcfResult,
    /// Series skipped because they were shorter than `max_lag + 2`.
    pub skipped: Vec<String>,
}

/// Residuals of a fitted model split by series, each in order-key order.
pub fn residuals_by_series(model: &FittedModel, which: ResidualKind) -> Result<Vec<(String, Vec<f64>)>> {
    let d = &model.design;
    let series = d
        .series
        .as_ref()
        .ok_or_else(|| GammError::Spec("model data has no series structure".into()))?;
    let r = match which {
        ResidualKind::Raw => &model.residuals_raw,
        ResidualKind::Whitened => &model.residuals_whitened,
    };
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, &row) in d.row_order.iter().enumerate() {
        let label = &series.levels[series.codes[i] as usize];
        match out.last_mut() {
            Some((l, v)) if l == label => v.push(r[row]),
            _ => out.push((label.clone(), vec![r[row]])),
        }
    }
    Ok(out)
}

pub fn residual_acf_by_group(model: &FittedModel, which: ResidualKind, max_lag: usize) -> Result<GroupAcf> {
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0;
    for (label, v) in residuals_by_series(model, which)? {
        total += v.len();
        match acf(&v, max_lag) {
            Ok(mut a) => {
                a.group = label;
                groups.push(a);
            }
            Err(_) => skipped.push(label),
        }
    }
    if groups.is_empty() {
        return Err(GammError::Length(format!("no series is longer than max_lag + 1 = {}", max_lag + 1)));
    }
    let pooled_acf = (0..=max_lag)
        .map(|k| groups.iter().map(|g| g.acf[k]).sum::<f64>() / groups.len() as f64)
        .collect();
    let pooled = AcfResult {
        group: "pooled".into(),
        lags: (0..=max_lag).collect(),
        acf: pooled_acf,
        n: total,
        band: 1.96 / (total as f64).sqrt(),
    };
    Ok(GroupAcf { groups, pooled, skipped })
}

/// Default pilot model: intercept plus a factor smooth of the order key by series.
pub fn pilot_spec(table: &DataTable, response: &str) -> Result<ModelSpec> {
    let (s, o) = series_keys(table)?;
    Ok(ModelSpec::new(response).smooth(SmoothTermSpec::fs(o, s, DEFAULT_FS_K)))
}

fn series_keys(table: &DataTable) -> Result<(&str, &str)> {
    match (table.series_key(), table.order_key()) {
        (Some(s), Some(o)) => Ok((s, o)),
        _ => Err(GammError::Spec("table has no series/order structure".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoSuggestion {
    /// Mean lag-1 autocorrelation clipped to [0, 0.95].
    pub rho: f64,
    /// The unclipped mean.
    pub mean_lag1: f64,
    pub per_group: Vec<(String, f64)>,
}

/// Suggests an AR(1) coefficient from the per-series lag-1 autocorrelation
/// of a pilot model's residuals.
pub fn suggest_rho(table: &DataTable, base_spec: &ModelSpec) -> Result<RhoSuggestion> {
    series_keys(table)?;
    let model = fit(base_spec, table)?;
    rho_from_model(&model)
}

/// As [`suggest_rho`] for an already fitted pilot model, using its whitened residuals.
pub fn rho_from_model(model: &FittedModel) -> Result<RhoSuggestion> {
    let res = residual_acf_by_group(model, ResidualKind::Whitened, 1)?;
    let per_group: Vec<(String, f64)> = res.groups.iter().map(|g| (g.group.clone(), g.acf[1])).collect();
    let mean = per_group.iter().map(|g| g.1).sum::<f64>() / per_group.len() as f64;
    Ok(RhoSuggestion { rho: mean.clamp(0.0, 0.95), mean_lag1: mean, per_group })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub alpha: f64,
    pub rejections: usize,
    /// p-value of the factor smooth per permutation; `None` where the fit failed.
    pub p_values: Vec<Option<f64>>,
    pub failures: usize,
}

impl PermutationResult {
    pub fn rejections_at(&self, alpha: f64) -> usize {
        self.p_values.iter().flatten().filter(|&&p| p < alpha).count()
    }
}

/// Subtracts each series' mean from `response`.
fn demean_by_series(table: &DataTable, response: &str) -> Result<DataTable> {
    let (s, _) = series_keys(table)?;
    let f = table.factor(s)?;
    let y = table.numeric(response)?;
    let mut sums = vec![0.0; f.n_levels()];
    for (&c, &v) in f.codes().iter().zip(y) {
        sums[c as usize] += v;
    }
    let counts = f.counts();
    let centred = f
        .codes()
        .iter()
        .zip(y)
        .map(|(&c, &v)| v - sums[c as usize] / counts[c as usize] as f64)
        .collect();
    table.clone().with_column(response, Column::Numeric(centred))
}

/// p-value of the factor-smooth term of the permutation model.
pub fn fs_p_value(table: &DataTable, response: &str) -> Result<f64> {
    let spec = pilot_spec(table, response)?;
    let label = spec.smooths[0].label();
    let model = fit(&spec, &demean_by_series(table, response)?)?;
    Ok(wald_term_test(&model, &label)?.p)
}

/// Shuffles the order key within each series `n_perm` times and tests the
/// factor smooth of the shuffled order in each. The response is centred
/// within series first, so the test targets within-series shape only.
pub fn permutation_fs_test(
    table: &DataTable,
    response: &str,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<PermutationResult> {
    if n_perm == 0 {
        return Err(GammError::InvalidValue("n_perm must be >= 1".into()));
    }
    let (s, o) = series_keys(table)?;
    let codes = table.factor(s)?.codes().to_vec();
    let order = table.numeric(o)?.to_vec();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (row, &c) in codes.iter().enumerate() {
        if members.len() <= c as usize {
            members.resize(c as usize + 1, Vec::new());
        }
        members[c as usize].push(row);
    }
    let p_values: Vec<Option<f64>> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut shuffled = order.clone();
            for rows in &members {
                let mut vals: Vec<f64> = rows.iter().map(|&r| order[r]).collect();
                vals.shuffle(&mut rng);
                for (&r, v) in rows.iter().zip(vals) {
                    shuffled[r] = v;
                }
            }
            let t = table.clone().with_column(o, Column::Numeric(shuffled)).ok()?;
            fs_p_value(&t, response).ok()
        })
        .collect();
    let failures = p_values.iter().filter(|p| p.is_none()).count();
    let rejections = p_values.iter().flatten().filter(|&&p| p < alpha).count();
    Ok(PermutationResult { alpha, rejections, p_values, failures })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    /// Groups with fewer than two rows.
    pub skipped: Vec<String>,
}

/// Coefficient of variation `sd / mean` of `value_column` within each group.
pub fn cv_by_group(table: &DataTable, value_column: &str, group: &str) -> Result<CvReport> {
    let v = table.numeric(value_column)?;
    let g = table.factor(group)?;
    if let Some(row) = v.iter().position(|&x| !(x > 0.0)) {
        return Err(GammError::Domain { row, msg: format!("'{value_column}' must be positive") });
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); g.n_levels()];
    for (&c, &x) in g.codes().iter().zip(v) {
        buckets[c as usize].push(x);
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (level, b) in g.levels().iter().zip(&buckets) {
        if b.len() < 2 {
            skipped.push(level.clone());
            continue;
        }
        let n = b.len() as f64;
        let mean = b.iter().sum::<f64>() / n;
        let sd = (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        rows.push(CvRow { group: level.clone(), n: b.len(), mean, sd, cv: sd / mean });
    }
    Ok(CvReport { rows, skipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `(normal quantile, sorted residual)` pairs.
    pub qq: Vec<(f64, f64)>,
    /// `(fitted, residual)` pairs in row order.
    pub resid_vs_fitted: Vec<(f64, f64)>,
    pub skewness: f64,
    /// Non-excess kurtosis; 3 for Gaussian data.
    pub kurtosis: f64,
}

/// Residual summaries from the whitened residuals of a fit.
pub fn residual_report(model: &FittedModel) -> ResidualReport {
    residual_report_from(&model.residuals_whitened, &model.fitted)
}

/// QQ pairs use plotting positions `(i + ½) / n`.
pub fn residual_report_from(residuals: &[f64], fitted: &[f64]) -> ResidualReport {
    let n = residuals.len();
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let qq = sorted
        .iter()
        .enumerate()
        .map(|(i, &r)| (std_normal.inverse_cdf((i as f64 + 0.5) / n as f64), r))
        .collect();
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let m2 = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let m3 = residuals.iter().map(|r| (r - mean).powi(3)).sum::<f64>() / n as f64;
    let m4 = residuals.iter().map(|r| (r - mean).powi(4)).sum::<f64>() / n as f64;
    ResidualReport {
        qq,
        resid_vs_fitted: fitted.iter().copied().zip(residuals.iter().copied()).collect(),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    }
}
