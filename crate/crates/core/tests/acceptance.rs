//! Acceptance checks. Each test prints one `PASS`/`FAIL` line and then
//! asserts the same condition.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use gammkit::basis::SmoothTermSpec;
use gammkit::data_io::{Column, DataTable};
use gammkit::diagnostics::{permutation_fs_test, pilot_spec, residual_acf_by_group, suggest_rho, ResidualKind};
use gammkit::fit::{
    assemble, effect_grid, fit, fit_with, objective_gradient, optimize_lambdas, penalized_objective, predict,
    reml_score, FitOptions, ModelSpec, ParametricTerm,
};
use gammkit::inference::{compare_scores, nested_f_test};
use gammkit::simulate::{blup_oracle, gen_experiment, grid_reml_oracle, normal_vec, stream, ScenarioSpec, TrendKind};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    // written to the stdout handle directly so the line shows without --nocapture
    let line = format!("{} [{id:02}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn uniform(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(seed, 9, 0);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn table(cols: Vec<(&str, Vec<f64>)>) -> DataTable {
    DataTable::from_columns(cols.into_iter().map(|(n, v)| (n, Column::Numeric(v))).collect()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ols_line(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    x.iter().map(|a| my + b * (a - mx)).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    sab / (saa * sbb).sqrt()
}

#[test]
fn c01_interpolation_at_zero_lambda() {
    let n = 20;
    let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mut rng = stream(11, 2, 0);
    let y: Vec<f64> = x.iter().map(|&v| (3.0 * v).sin() + rng.random::<f64>()).collect();
    let t = table(vec![("x", x), ("y", y.clone())]);
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 20));
    let m = fit_with(&spec, &t, &FitOptions::fixed(vec![0.0])).unwrap();
    let err = max_abs_diff(&m.fitted, &y);
    report(1, "cr k=n, lambda=0 interpolates", err < 1e-6, format!("max |fitted - y| = {err:.3e}"));
}

#[test]
fn c02_tp_heavy_penalty_is_ols_line() {
    let n = 100;
    let x = uniform(21, n);
    let mut rng = stream(21, 2, 0);
    let y: Vec<f64> = x.iter().map(|&v| (2.0 * PI * v).sin() + 0.3 * rng.random::<f64>()).collect();
    let t = table(vec![("x", x.clone()), ("y", y.clone())]);
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::tp("x", 10));
    let m = fit_with(&spec, &t, &FitOptions::fixed(vec![1e12])).unwrap();
    let err = max_abs_diff(&m.fitted, &ols_line(&x, &y));
    report(2, "tp m=2 at lambda=1e12 is the OLS line", err < 1e-6, format!("max deviation = {err:.3e}"));
}

#[test]
fn c03_edf_path() {
    let n = 200;
    let x = uniform(31, n);
    let mut rng = stream(31, 2, 0);
    let y: Vec<f64> = x.iter().map(|&v| (2.0 * PI * v).sin() + 0.2 * rng.random::<f64>()).collect();
    let t = table(vec![("x", x), ("y", y)]);
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 12));
    let d = assemble(&spec, &t).unwrap();
    let p = d.p() as f64;
    let null_dim = 2.0;

    let at_zero = fit_with(&spec, &t, &FitOptions::fixed(vec![0.0])).unwrap();
    let mut totals = vec![at_zero.total_edf];
    let mut per_coef_ok = at_zero.edf.iter().all(|&e| (-1e-9..=1.0 + 1e-9).contains(&e));
    for i in 0..20 {
        let log10 = -8.0 + 20.0 * i as f64 / 19.0;
        let m = fit_with(&spec, &t, &FitOptions::fixed(vec![10f64.powf(log10)])).unwrap();
        per_coef_ok &= m.edf.iter().all(|&e| (-1e-9..=1.0 + 1e-9).contains(&e));
        totals.push(m.total_edf);
    }
    let monotone = totals.windows(2).all(|w| w[1] <= w[0] + 1e-9);
    let top = *totals.last().unwrap();
    let pass = monotone && (totals[0] - p).abs() < 1e-6 && (top - null_dim).abs() <= 0.01 && per_coef_ok;
    report(
        3,
        "edf path",
        pass,
        format!(
            "edf(0) = {:.6} (p = {p}), edf(1e12) = {top:.4} (null dim {null_dim}), non-increasing = {monotone}, per-coefficient in [0,1] = {per_coef_ok}",
            totals[0]
        ),
    );
}

#[test]
fn c04_blup_equivalence() {
    let spec = ScenarioSpec {
        n_subjects: 20,
        n_trials: 10,
        intercept: 2.0,
        sigma: 1.0,
        subject_intercept_sd: 1.0,
        seed: 41,
        ..Default::default()
    };
    let (t, _) = gen_experiment(&spec).unwrap();
    let oracle = blup_oracle(&t, "y", "subject").unwrap();
    let lambda = oracle.sigma2 / oracle.sigmab2;
    let mspec = ModelSpec::new("y").smooth(SmoothTermSpec::re("subject"));
    let m = fit_with(&mspec, &t, &FitOptions::fixed(vec![lambda])).unwrap();
    let term = m.term("re(subject)").unwrap();
    let b: Vec<f64> = m.beta.rows(term.range.start, term.range.len()).iter().copied().collect();
    let expected: Vec<f64> = oracle.blups.iter().map(|(_, v)| *v).collect();
    let err = max_abs_diff(&b, &expected).max((m.beta[0] - oracle.mu).abs());
    report(4, "random intercept BLUPs", err < 1e-6, format!("lambda = {lambda:.4}, max deviation = {err:.3e}"));
}

#[test]
fn c05_reml_against_grid_oracle() {
    let n = 200;
    let x1 = uniform(51, n);
    let x2 = uniform(52, n);
    let mut rng = stream(51, 2, 0);
    let e = normal_vec(&mut rng, n, 0.0, 0.3);
    let y: Vec<f64> =
        (0..n).map(|i| (2.0 * PI * x1[i]).sin() + (x2[i] - 0.5).powi(2) * 4.0 + e[i]).collect();
    let t = table(vec![("x1", x1.clone()), ("x2", x2), ("y", y.clone())]);
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x1", 10)).smooth(SmoothTermSpec::cr("x2", 8));
    let d = assemble(&spec, &t).unwrap();
    let points: Vec<Vec<f64>> =
        vec![vec![0.0, 0.0], vec![-6.0, 3.0], vec![4.0, -2.0], vec![-10.0, 10.0], vec![8.0, 8.0]];
    let oracle = grid_reml_oracle(&d, &points).unwrap();
    let mut worst = 0.0f64;
    for (pt, o) in points.iter().zip(&oracle.scores) {
        let s = reml_score(&d, pt).unwrap();
        worst = worst.max((s - o).abs() / o.abs());
    }

    let t1 = table(vec![("x", x1), ("y", y)]);
    let spec1 = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10));
    let d1 = assemble(&spec1, &t1).unwrap();
    let lo = 1e-8f64.ln();
    let hi = 1e8f64.ln();
    let step = (hi - lo) / 199.0;
    let grid: Vec<Vec<f64>> = (0..200).map(|i| vec![lo + step * i as f64]).collect();
    let g = grid_reml_oracle(&d1, &grid).unwrap();
    let opt = optimize_lambdas(&d1, None).unwrap();
    let distance = (opt.log_lambdas[0] - grid[g.argmin][0]).abs();
    let pass = worst < 1e-6 && distance <= step;
    report(
        5,
        "REML score vs dense oracle",
        pass,
        format!(
            "max relative error = {worst:.3e}; optimizer log10 lambda = {:.4}, grid minimum at {:.4} (step {:.4})",
            opt.log_lambdas[0] / 10f64.ln(),
            grid[g.argmin][0] / 10f64.ln(),
            step / 10f64.ln()
        ),
    );
}

#[test]
fn c06_ar1_recovery() {
    let start = Instant::now();
    let spec = ScenarioSpec {
        n_subjects: 50,
        n_trials: 400,
        intercept: 1.0,
        rho: 0.3,
        sigma: 1.0,
        subject_intercept_sd: 0.5,
        seed: 61,
        ..Default::default()
    };
    let (t, _) = gen_experiment(&spec).unwrap();
    let pilot = pilot_spec(&t, "y").unwrap();
    let s = suggest_rho(&t, &pilot).unwrap();
    let m = fit(&pilot.clone().rho(s.rho), &t).unwrap();
    let acf = residual_acf_by_group(&m, ResidualKind::Whitened, 1).unwrap();
    let r1 = acf.pooled.acf[1];
    let bound = 2.0 / (acf.pooled.n as f64).sqrt();
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.25..=0.35).contains(&s.rho) && r1.abs() < bound && secs < 60.0;
    report(
        6,
        "AR(1) coefficient recovery",
        pass,
        format!("rho hat = {:.4}, pooled whitened r1 = {r1:.4} (bound {bound:.4}), {secs:.1} s", s.rho),
    );
}

#[test]
fn c07_permutation_calibration() {
    let spec = ScenarioSpec {
        n_subjects: 10,
        n_trials: 100,
        trend: TrendKind::Undulating,
        trend_amplitude: 1.0,
        subject_intercept_sd: 0.5,
        seed: 71,
        ..Default::default()
    };
    let (t, _) = gen_experiment(&spec).unwrap();
    let r = permutation_fs_test(&t, "y", 100, 0.05, 71).unwrap();
    let at05 = r.rejections;
    let at01 = r.rejections_at(0.01);
    let pass = r.failures == 0 && at05 <= 10 && at01 <= 4;
    report(
        7,
        "permutation null for the factor smooth",
        pass,
        format!("{at05} rejections at 0.05, {at01} at 0.01, {} failed fits", r.failures),
    );
}

#[test]
fn c08_penalization_beats_unpenalized() {
    let n = 200;
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 20));
    let mut wins = 0;
    for seed in 0..20u64 {
        let x = uniform(800 + seed, n);
        let f: Vec<f64> = x.iter().map(|&v| (2.0 * PI * v).sin()).collect();
        let mut rng = stream(800 + seed, 2, 0);
        let e = normal_vec(&mut rng, n, 0.0, 0.1);
        let y: Vec<f64> = f.iter().zip(&e).map(|(a, b)| a + b).collect();
        let t = table(vec![("x", x), ("y", y)]);
        let reml = fit(&spec, &t).unwrap();
        let raw = fit_with(&spec, &t, &FitOptions::fixed(vec![0.0])).unwrap();
        let mse = |fitted: &[f64]| fitted.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        if mse(&reml.fitted) < mse(&raw.fitted) {
            wins += 1;
        }
    }
    report(8, "REML beats the unpenalized fit", wins >= 16, format!("{wins} of 20 seeds"));
}

fn surface_data(seed: u64, n: usize, additive: bool) -> DataTable {
    let x = uniform(seed, n);
    let z = uniform(seed + 1, n);
    let mut rng = stream(seed, 2, 0);
    let e = normal_vec(&mut rng, n, 0.0, 0.1);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let f = if additive {
                (2.0 * PI * x[i]).sin() + (z[i] - 0.5).powi(2) * 3.0
            } else {
                (PI * x[i]).sin() * (1.5 * z[i]).exp() * 0.5
            };
            f + e[i]
        })
        .collect();
    table(vec![("x", x), ("z", z), ("y", y)])
}

#[test]
fn c09_tensor_vs_isotropic() {
    let t = surface_data(91, 400, false);
    let te = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::te("x", "z", 5, 5)), &t).unwrap();
    let tp = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::tp2("x", "z", 30)), &t).unwrap();
    let grid = effect_grid(&te, "te(x,z)", 40).unwrap();
    let a = predict(&te, &grid).unwrap().mean;
    let b = predict(&tp, &grid).unwrap().mean;
    let r = correlation(&a, &b);
    report(9, "te and bivariate tp agree", r > 0.98 && a.len() == 1600, format!("correlation = {r:.5} over {} grid points", a.len()));
}

#[test]
fn c10_ti_decomposition() {
    let t = surface_data(101, 400, true);
    let te_spec = ModelSpec::new("y").smooth(SmoothTermSpec::te("x", "z", 5, 5));
    let ti_spec = ModelSpec::new("y")
        .smooth(SmoothTermSpec::ti_main("x", 5))
        .smooth(SmoothTermSpec::ti_main("z", 5))
        .smooth(SmoothTermSpec::ti("x", "z", 5, 5));
    let n_te = assemble(&te_spec, &t).unwrap().n_penalties();
    let n_ti = assemble(&ti_spec, &t).unwrap().n_penalties();
    let a = fit_with(&te_spec, &t, &FitOptions::fixed(vec![0.0; n_te])).unwrap();
    let b = fit_with(&ti_spec, &t, &FitOptions::fixed(vec![0.0; n_ti])).unwrap();
    let err = max_abs_diff(&a.fitted, &b.fitted);
    let ra = fit(&te_spec, &t).unwrap();
    let rb = fit(&ti_spec, &t).unwrap();
    let reml_gap = max_abs_diff(&ra.fitted, &rb.fitted);
    report(
        10,
        "ti main effects plus interaction span te",
        err < 1e-6,
        format!("unpenalized max difference = {err:.3e} (under REML the fits differ by {reml_gap:.3e})"),
    );
}

#[test]
fn c11_reml_comparison_statistic() {
    let c = compare_scores(-12495.77, 20, -13422.25, 27);
    let rounded = (c.stat * 10.0).round() / 10.0;
    let pass = rounded == 926.5 && c.df == 7 && c.preferred == 1;
    report(11, "REML comparison statistic", pass, format!("stat = {:.2}, df = {}, p = {:.3e}", c.stat, c.df, c.p.unwrap_or(f64::NAN)));
}

fn null_rejection_rate(small: &ModelSpec, big: &ModelSpec, seed: u64) -> (usize, usize) {
    let n = 200;
    let outcomes: Vec<Option<bool>> = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let x1 = uniform(seed + 2 * rep, n);
            let x2 = uniform(seed + 1 + 2 * rep, n);
            let mut rng = stream(seed + rep, 2, 0);
            let e = normal_vec(&mut rng, n, 0.0, 0.5);
            let y: Vec<f64> = (0..n).map(|i| (2.0 * PI * x1[i]).sin() + e[i]).collect();
            let t = table(vec![("x1", x1), ("x2", x2), ("y", y)]);
            let m0 = fit(small, &t).ok()?;
            let m1 = fit(big, &t).ok()?;
            nested_f_test(&m0, &m1).ok().map(|f| f.p < 0.05)
        })
        .collect();
    let rejected = outcomes.iter().filter(|o| **o == Some(true)).count();
    (rejected, outcomes.iter().filter(|o| o.is_none()).count())
}

#[test]
fn c12_nested_f_null_rate() {
    let small = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x1", 10));
    let big = small.clone().parametric(ParametricTerm::new("x2"));
    let (rejected, errors) = null_rejection_rate(&small, &big, 12_000);
    let rate = rejected as f64 / 500.0;
    // a pure-noise smooth extra term is reported only; ignoring λ selection makes it liberal
    let (smooth_rejected, _) = null_rejection_rate(&small, &small.clone().smooth(SmoothTermSpec::cr("x2", 10)), 12_000);
    report(
        12,
        "nested F-test null rejection rate",
        errors == 0 && (0.02..=0.09).contains(&rate),
        format!(
            "{rejected}/500 = {rate:.3} rejected at 0.05 for a noise covariate ({errors} failures); noise smooth: {:.3}",
            smooth_rejected as f64 / 500.0
        ),
    );
}

#[test]
fn c13_gradient_matches_finite_differences() {
    let n = 150;
    let x = uniform(131, n);
    let mut rng = stream(131, 2, 0);
    let e = normal_vec(&mut rng, n, 0.0, 0.2);
    let y: Vec<f64> = x.iter().zip(&e).map(|(v, e)| (2.0 * PI * v).cos() + e).collect();
    let t = table(vec![("x", x), ("y", y)]);
    let m = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &t).unwrap();
    let d = &m.design;
    let p = d.p();
    let scale = (d.x.transpose() * &d.y).norm();
    let mut worst = 0.0f64;
    let mut worst_off = 0.0f64;
    let mut dir_rng = stream(131, 3, 0);
    let offset = DVector::from_vec(normal_vec(&mut dir_rng, p, 0.0, 0.1));
    for _ in 0..5 {
        let dir = DVector::from_vec(normal_vec(&mut dir_rng, p, 0.0, 1.0)).normalize();
        let h = 1e-5;
        for (beta, slot, floor) in [(&m.beta, &mut worst, 1e-6 * scale), (&(&m.beta + &offset), &mut worst_off, 0.0)] {
            let analytic = objective_gradient(d, &m.lambdas, beta).dot(&dir);
            let fd = (penalized_objective(d, &m.lambdas, &(beta + &dir * h))
                - penalized_objective(d, &m.lambdas, &(beta - &dir * h)))
                / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor);
            *slot = slot.max(rel);
        }
    }
    report(
        13,
        "gradient vs central differences",
        worst < 1e-4 && worst_off < 1e-4,
        format!("max relative error at beta hat = {worst:.3e}, at a perturbed point = {worst_off:.3e}"),
    );
}
