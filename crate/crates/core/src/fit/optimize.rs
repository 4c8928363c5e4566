use std::f64::consts::LN_10;

use super::{AssembledDesign, PenalizedProblem};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    /// Initial simplex edge length.
    pub step: f64,
    /// Converged when the spread of simplex values is below `f_tol·(1 + |f|)` ...
    pub f_tol: f64,
    /// ... and the simplex diameter is below `x_tol`.
    pub x_tol: f64,
    pub max_evals: usize,
    /// Box constraints applied to every coordinate.
    pub lower: f64,
    pub upper: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { step: 2.0, f_tol: 1e-8, x_tol: 1e-6, max_evals: 4000, lower: -12.0 * LN_10, upper: 12.0 * LN_10 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Derivative-free simplex minimization within a box.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult {
    let n = x0.len();
    let clamp = |v: &mut Vec<f64>| {
        for c in v.iter_mut() {
            *c = c.clamp(opts.lower, opts.upper);
        }
    };
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut start = x0.to_vec();
    clamp(&mut start);
    if n == 0 {
        let v = eval(&start, &mut evals);
        return NelderMeadResult { x: start, f: v, evals, converged: true };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut v = start.clone();
        v[i] += if v[i] + opts.step <= opts.upper { opts.step } else { -opts.step };
        clamp(&mut v);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }
    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |t: f64| -> Vec<f64> {
            let mut v: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n].0[j] - centroid[j])).collect();
            clamp(&mut v);
            v
        };
        let xr = towards(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < best {
            let xe = towards(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst {
            let xc = towards(-0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = towards(0.5);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < worst.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = item.0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
            clamp(&mut v);
            let fv = eval(&v, &mut evals);
            *item = (v, fv);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult { x, f, evals, converged }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub lambdas: Vec<f64>,
    pub log_lambdas: Vec<f64>,
    pub score: f64,
    pub evals: usize,
    /// False when the evaluation budget ran out before convergence.
    pub converged: bool,
}

/// Minimizes the REML score over natural-log smoothing parameters, starting
/// from `init` (default all zero) and restarting from `init ± 5` decades.
pub fn optimize_lambdas(design: &AssembledDesign, init: Option<&[f64]>) -> Result<OptimizeResult> {
    let prob = PenalizedProblem::new(design);
    optimize_problem(&prob, init, &NelderMeadOptions::default())
}

pub(crate) fn optimize_problem(
    prob: &PenalizedProblem<'_>,
    init: Option<&[f64]>,
    opts: &NelderMeadOptions,
) -> Result<OptimizeResult> {
    let m = prob.design().n_penalties();
    let x0: Vec<f64> = match init {
        Some(v) => v.to_vec(),
        None => vec![0.0; m],
    };
    if m == 0 {
        let score = prob.reml(&[])?;
        return Ok(OptimizeResult { lambdas: vec![], log_lambdas: vec![], score, evals: 1, converged: true });
    }
    let f = |x: &[f64]| prob.reml(x).unwrap_or(f64::INFINITY);
    let mut evals = 0;
    let mut best: Option<NelderMeadResult> = None;
    for shift in [0.0, 5.0 * LN_10, -5.0 * LN_10] {
        let start: Vec<f64> = x0.iter().map(|v| v + shift).collect();
        let r = nelder_mead(f, &start, opts);
        evals += r.evals;
        if best.as_ref().map_or(true, |b| r.f < b.f) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    // restart from the best point until the restart no longer helps
    for _ in 0..5 {
        let r = nelder_mead(f, &best.x, opts);
        evals += r.evals;
        let improved = r.f < best.f - opts.f_tol * (1.0 + best.f.abs());
        if r.f <= best.f {
            best = r;
        }
        if !improved {
            break;
        }
    }
    // surface evaluation errors at the chosen point
    let score = prob.reml(&best.x)?;
    Ok(OptimizeResult {
        lambdas: best.x.iter().map(|v| v.exp()).collect(),
        log_lambdas: best.x,
        score,
        evals,
        converged: best.converged,
    })
}
