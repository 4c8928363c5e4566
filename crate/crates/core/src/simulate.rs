//! Synthetic grouped time-series experiments with known ground truth, and
//! brute-force oracles used to check the fitting code.
//!
//! Randomness comes from ChaCha8 with one stream per (component, subject)
//! pair, so adding subjects or changing one component never perturbs the
//! draws of another.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::data_io::{Column, DataTable, FactorColumn};
use crate::error::{GammError, Result};
use crate::fit::AssembledDesign;
use crate::linalg::sym_eigen_sorted;

const STREAM_ASSIGN: u64 = 0;
const STREAM_TREND: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_INTERCEPT: u64 = 3;

/// Random number generator for one component of one subject.
pub fn stream(seed: u64, component: u64, subject: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((component << 32) | subject);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrendKind {
    Flat,
    Linear,
    /// Linear plus up to three slow sinusoids.
    Undulating,
    /// Undulating plus a few sharp positive bursts.
    Spiky,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn trend_from(kind: TrendKind, n: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if kind == TrendKind::Flat || amplitude == 0.0 || n == 0 {
        return v;
    }
    let denom = (n.max(2) - 1) as f64;
    let slope = amplitude * normal(rng);
    for (t, x) in v.iter_mut().enumerate() {
        *x = slope * (t as f64 / denom - 0.5);
    }
    if matches!(kind, TrendKind::Undulating | TrendKind::Spiky) {
        let components = rng.random_range(1..=3);
        for _ in 0..components {
            let period = rng.random_range(n as f64 / 6.0..=n as f64);
            let phase = rng.random_range(0.0..2.0 * PI);
            let a = amplitude * normal(rng);
            for (t, x) in v.iter_mut().enumerate() {
                *x += a * (2.0 * PI * t as f64 / period + phase).sin();
            }
        }
    }
    if kind == TrendKind::Spiky {
        let bursts = rng.random_range(1..=3);
        let width = (n as f64 / 50.0).max(1.0);
        for _ in 0..bursts {
            let centre = rng.random_range(0.0..n as f64);
            let height = amplitude * rng.random_range(2.0..4.0);
            for (t, x) in v.iter_mut().enumerate() {
                let z = (t as f64 - centre) / width;
                *x += height * (-0.5 * z * z).exp();
            }
        }
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    v
}

/// Mean-centered per-subject trend over `n_trials` trials.
pub fn gen_trend(kind: TrendKind, n_trials: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    trend_from(kind, n_trials, amplitude, &mut stream(seed, STREAM_TREND, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FixedKind {
    /// Factor assigned at random to each trial, with one additive effect per level.
    Factor { levels: Vec<String>, effects: Vec<f64> },
    /// Uniform(0, 1) covariate with a linear effect.
    Linear { coef: f64 },
    /// Uniform(0, 1) covariate with effect `amplitude · sin(2πx)`.
    Sine { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedEffect {
    pub name: String,
    pub kind: FixedKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub n_subjects: usize,
    pub n_trials: usize,
    pub intercept: f64,
    pub fixed_effects: Vec<FixedEffect>,
    pub trend: TrendKind,
    pub trend_amplitude: f64,
    pub rho: f64,
    pub sigma: f64,
    pub subject_intercept_sd: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            n_trials: 100,
            intercept: 0.0,
            fixed_effects: Vec::new(),
            trend: TrendKind::Flat,
            trend_amplitude: 0.0,
            rho: 0.0,
            sigma: 1.0,
            subject_intercept_sd: 0.0,
            seed: 1,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.n_trials == 0 {
            return Err(GammError::InvalidValue("subject and trial counts must be >= 1".into()));
        }
        if self.sigma < 0.0 || self.subject_intercept_sd < 0.0 || self.trend_amplitude < 0.0 {
            return Err(GammError::InvalidValue("standard deviations must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(GammError::Domain { row: 0, msg: format!("rho = {} outside [0, 1)", self.rho) });
        }
        for f in &self.fixed_effects {
            if let FixedKind::Factor { levels, effects } = &f.kind {
                if levels.is_empty() || levels.len() != effects.len() {
                    return Err(GammError::InvalidValue(format!("factor '{}' needs one effect per level", f.name)));
                }
            }
        }
        Ok(())
    }
}

/// Every component of the generated response, in table row order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    pub intercept: f64,
    pub subject_intercepts: Vec<f64>,
    pub trend: Vec<f64>,
    /// Contribution of each fixed effect, one vector per effect.
    pub fixed: Vec<Vec<f64>>,
    pub noise: Vec<f64>,
    /// Noiseless mean: intercept + fixed + subject intercept + trend.
    pub mean: Vec<f64>,
}

/// Generates `n_subjects × n_trials` rows with columns `subject`, `trial`,
/// one column per fixed effect and `y`. Subjects are labelled `s01`, `s02`, …
/// and trials run from 1. The table declares `(subject, trial)` as its series structure.
pub fn gen_experiment(spec: &ScenarioSpec) -> Result<(DataTable, Truth)> {
    spec.validate()?;
    let (ns, nt) = (spec.n_subjects, spec.n_trials);
    let n = ns * nt;
    let width = format!("{ns}").len().max(2);
    let levels: Vec<String> = (1..=ns).map(|s| format!("s{s:0width$}")).collect();
    let mut subject = Vec::with_capacity(n);
    let mut trial = Vec::with_capacity(n);
    let mut truth = Truth {
        intercept: spec.intercept,
        subject_intercepts: Vec::with_capacity(ns),
        trend: Vec::with_capacity(n),
        fixed: vec![Vec::with_capacity(n); spec.fixed_effects.len()],
        noise: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
    };
    let mut fixed_cols: Vec<Column> = Vec::new();
    let mut fixed_codes: Vec<Vec<u32>> = vec![Vec::with_capacity(n); spec.fixed_effects.len()];
    let mut fixed_nums: Vec<Vec<f64>> = vec![Vec::with_capacity(n); spec.fixed_effects.len()];

    let stationary_sd = spec.sigma / (1.0 - spec.rho * spec.rho).sqrt();
    for s in 0..ns {
        let sid = s as u64;
        let b = spec.subject_intercept_sd * normal(&mut stream(spec.seed, STREAM_INTERCEPT, sid));
        truth.subject_intercepts.push(b);
        let trend = trend_from(spec.trend, nt, spec.trend_amplitude, &mut stream(spec.seed, STREAM_TREND, sid));
        let mut assign = stream(spec.seed, STREAM_ASSIGN, sid);
        let mut noise_rng = stream(spec.seed, STREAM_NOISE, sid);
        let mut e_prev = 0.0;
        for t in 0..nt {
            subject.push(s as u32);
            trial.push((t + 1) as f64);
            let mut mean = spec.intercept + b + trend[t];
            for (k, f) in spec.fixed_effects.iter().enumerate() {
                let contrib = match &f.kind {
                    FixedKind::Factor { levels, effects } => {
                        let c = assign.random_range(0..levels.len());
                        fixed_codes[k].push(c as u32);
                        effects[c]
                    }
                    FixedKind::Linear { coef } => {
                        let x: f64 = assign.random();
                        fixed_nums[k].push(x);
                        coef * x
                    }
                    FixedKind::Sine { amplitude } => {
                        let x: f64 = assign.random();
                        fixed_nums[k].push(x);
                        amplitude * (2.0 * PI * x).sin()
                    }
                };
                truth.fixed[k].push(contrib);
                mean += contrib;
            }
            let e = if t == 0 {
                stationary_sd * normal(&mut noise_rng)
            } else {
                spec.rho * e_prev + spec.sigma * normal(&mut noise_rng)
            };
            e_prev = e;
            truth.trend.push(trend[t]);
            truth.noise.push(e);
            truth.mean.push(mean);
        }
    }
    for (k, f) in spec.fixed_effects.iter().enumerate() {
        fixed_cols.push(match &f.kind {
            FixedKind::Factor { levels, .. } => {
                Column::Factor(FactorColumn::from_codes(std::mem::take(&mut fixed_codes[k]), levels.clone())?)
            }
            _ => Column::Numeric(std::mem::take(&mut fixed_nums[k])),
        });
    }
    let y: Vec<f64> = truth.mean.iter().zip(&truth.noise).map(|(m, e)| m + e).collect();
    let mut cols = vec![
        ("subject".to_string(), Column::Factor(FactorColumn::from_codes(subject, levels)?)),
        ("trial".to_string(), Column::Numeric(trial)),
    ];
    for (f, c) in spec.fixed_effects.iter().zip(fixed_cols) {
        cols.push((f.name.clone(), c));
    }
    cols.push(("y".to_string(), Column::Numeric(y)));
    let table = DataTable::from_columns(cols)?.with_series("subject", "trial")?;
    Ok((table, truth))
}

/// Closed-form balanced one-way random-intercept estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlupOracle {
    pub mu: f64,
    pub sigma2: f64,
    pub sigmab2: f64,
    /// `(level, BLUP)` in level order.
    pub blups: Vec<(String, f64)>,
    /// Shrinkage factor `n σ_b² / (n σ_b² + σ²)` shared by all groups.
    pub shrinkage: f64,
}

/// Balanced one-way ANOVA variance components and the resulting BLUPs.
pub fn blup_oracle(table: &DataTable, response: &str, group: &str) -> Result<BlupOracle> {
    let y = table.numeric(response)?;
    let g = table.factor(group)?;
    let counts = g.counts();
    let nj = counts[0];
    if counts.iter().any(|&c| c != nj) {
        return Err(GammError::Balance(format!("group sizes of '{group}' differ: {counts:?}")));
    }
    let j = counts.len();
    if j < 2 || nj < 2 {
        return Err(GammError::Balance("need at least 2 groups of at least 2 rows".into()));
    }
    let mut sums = vec![0.0; j];
    for (&c, &v) in g.codes().iter().zip(y) {
        sums[c as usize] += v;
    }
    let means: Vec<f64> = sums.iter().map(|s| s / nj as f64).collect();
    let mu = means.iter().sum::<f64>() / j as f64;
    let ssw: f64 = g.codes().iter().zip(y).map(|(&c, &v)| (v - means[c as usize]).powi(2)).sum();
    let msw = ssw / (j * (nj - 1)) as f64;
    let msb = nj as f64 * means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (j - 1) as f64;
    let sigmab2 = ((msb - msw) / nj as f64).max(0.0);
    let shrinkage = blup_shrinkage(nj, sigmab2, msw);
    let blups = g.levels().iter().zip(&means).map(|(l, m)| (l.clone(), shrinkage * (m - mu))).collect();
    Ok(BlupOracle { mu, sigma2: msw, sigmab2, blups, shrinkage })
}

/// `n σ_b² / (n σ_b² + σ²)`.
pub fn blup_shrinkage(n: usize, sigmab2: f64, sigma2: f64) -> f64 {
    let a = n as f64 * sigmab2;
    if a == 0.0 {
        0.0
    } else {
        a / (a + sigma2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOracle {
    pub scores: Vec<f64>,
    pub argmin: usize,
}

/// REML criterion evaluated from the marginal distribution of `y`.
///
/// The penalized coefficients are treated as Gaussian random effects with
/// precision `Σ λ_j S_j / σ²` and the penalty null space as fixed effects, so
/// `y ~ N(Fα, σ² V)` with `V = I + Z Zᵀ`. The restricted likelihood uses
/// dense `n × n` factorizations and shares no code with the penalized
/// least squares route.
pub fn grid_reml_oracle(design: &AssembledDesign, points: &[Vec<f64>]) -> Result<GridOracle> {
    let n = design.n();
    let p = design.p();
    let mut scores = Vec::with_capacity(points.len());
    for log_l in points {
        if log_l.len() != design.n_penalties() {
            return Err(GammError::Dimension(format!(
                "grid point has {} values for {} penalties",
                log_l.len(),
                design.n_penalties()
            )));
        }
        let weighted = |w: &dyn Fn(f64) -> f64| {
            let mut s = DMatrix::<f64>::zeros(p, p);
            for (pen, l) in design.penalties.iter().zip(log_l) {
                for i in 0..pen.size() {
                    for k in 0..pen.size() {
                        s[(pen.offset + i, pen.offset + k)] += w(*l) * pen.matrix[(i, k)];
                    }
                }
            }
            s
        };
        // null space from the unweighted sum, so extreme λ ratios do not shift it
        let (vals, vecs) = sym_eigen_sorted(&weighted(&|_| 1.0));
        let max = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let range: Vec<usize> = (0..p).filter(|&i| vals[i] > 1e-9 * max).collect();
        let null: Vec<usize> = (0..p).filter(|&i| vals[i] <= 1e-9 * max).collect();
        let u_r = DMatrix::from_fn(p, range.len(), |i, k| vecs[(i, range[k])]);
        let f = &design.x * DMatrix::from_fn(p, null.len(), |i, k| vecs[(i, null[k])]);
        let a = u_r.transpose() * weighted(&|l| l.exp()) * &u_r;
        let l = a
            .cholesky()
            .ok_or_else(|| GammError::Numeric("penalty is not positive definite on its range".into()))?
            .l();
        // Z = X U_r L⁻ᵀ
        let z = l
            .solve_lower_triangular(&(&design.x * &u_r).transpose())
            .ok_or_else(|| GammError::Numeric("singular penalty factor".into()))?
            .transpose();
        let v = DMatrix::identity(n, n) + &z * z.transpose();
        let chol = v
            .cholesky()
            .ok_or_else(|| GammError::Numeric("marginal covariance is not positive definite".into()))?;
        let log_det_v: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let vinv_f = chol.solve(&f);
        let vinv_y = chol.solve(&design.y);
        let ftvf = f.transpose() * &vinv_f;
        let (alpha, log_det_ftvf) = if null.is_empty() {
            (DVector::zeros(0), 0.0)
        } else {
            let c = ftvf
                .cholesky()
                .ok_or_else(|| GammError::Numeric("fixed-effect information is singular".into()))?;
            let ld: f64 = c.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            (c.solve(&(f.transpose() * &vinv_y)), ld)
        };
        let r = &design.y - &f * &alpha;
        let quad = r.dot(&chol.solve(&r));
        let nr = (n - null.len()) as f64;
        let sigma2 = quad / nr;
        scores.push(0.5 * (nr * (2.0 * PI * sigma2).ln() + nr + log_det_v + log_det_ftvf));
    }
    let argmin = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(GridOracle { scores, argmin })
}

/// Student-t(ν) draw, scaled to unit scale parameter.
pub fn student_t(rng: &mut ChaCha8Rng, nu: f64) -> f64 {
    let z: f64 = normal(rng);
    let chi = rand_distr::ChiSquared::new(nu).expect("positive degrees of freedom").sample(rng);
    z / (chi / nu).sqrt()
}

/// `n` draws from N(mean, sd²).
pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let d = Normal::new(mean, sd).expect("finite sd");
    (0..n).map(|_| d.sample(rng)).collect()
}
