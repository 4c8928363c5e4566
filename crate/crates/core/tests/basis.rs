mod common;

use gammkit::basis::{
    absorb_constraints, apply_by_factor, cr_basis, factor_smooth, knots_quantile, natural_reparam, poly_basis,
    random_effect, tensor_product, tp_basis, Extrapolation,
};
use gammkit::data_io::{Column, DataTable, FactorColumn};
use gammkit::fit::{fit_with, FitOptions, ModelSpec};
use gammkit::basis::SmoothTermSpec;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{max_abs_diff, table, uniform};

fn labels(n_levels: usize, per_level: usize) -> FactorColumn {
    let l: Vec<String> = (0..n_levels * per_level).map(|i| format!("g{:02}", i / per_level)).collect();
    FactorColumn::from_labels(&l)
}

fn eval_matches(block: &gammkit::basis::BasisBlock, t: &DataTable) {
    let e = block.evaluate(t, Extrapolation::Error).unwrap();
    assert!(!e.extrapolated);
    let d = (&e.x - &block.x).amax();
    assert!(d < 1e-10, "re-evaluation differs by {d}");
}

#[test]
fn re_evaluation_reproduces_training_columns() {
    let x = uniform(1, 120);
    let z = uniform(2, 120);
    let t = DataTable::from_columns(vec![
        ("x", Column::Numeric(x.clone())),
        ("z", Column::Numeric(z.clone())),
        ("g", Column::Factor(labels(4, 30))),
    ])
    .unwrap();
    let cr = cr_basis(&x, &knots_quantile(&x, 8).unwrap()).unwrap();
    eval_matches(&cr, &t);
    eval_matches(&absorb_constraints(&natural_reparam(&cr).unwrap()).unwrap(), &t);
    eval_matches(&poly_basis(&x, 4).unwrap(), &t);
    let cov = DMatrix::from_fn(120, 2, |i, j| if j == 0 { x[i] } else { z[i] });
    let tp = tp_basis(&cov, 12, 2).unwrap().with_covariates(&["x", "z"]).unwrap();
    eval_matches(&tp, &t);
    let cz = cr_basis(&z, &knots_quantile(&z, 5).unwrap()).unwrap().with_covariates(&["z"]).unwrap();
    eval_matches(&tensor_product(&cr, &cz, false).unwrap(), &t);
    eval_matches(&tensor_product(&cr, &cz, true).unwrap(), &t);
    let g = t.factor("g").unwrap();
    eval_matches(&apply_by_factor(&cr, "g", g).unwrap(), &t);
    eval_matches(&factor_smooth(&cr, "g", g).unwrap(), &t);
    eval_matches(&random_effect("g", g, Some(("x", &x))).unwrap(), &t);
}

#[test]
fn factor_smooth_with_86_levels() {
    let f = labels(86, 6);
    let x: Vec<f64> = (0..86 * 6).map(|i| (i % 6) as f64).collect();
    let cr = cr_basis(&x, &knots_quantile(&x, 5).unwrap()).unwrap();
    let fs = factor_smooth(&cr, "subject", &f).unwrap();
    assert_eq!(fs.p(), 430);
    assert_eq!(fs.penalties.len(), 2);
    assert_eq!(fs.null_dim, 0);
}

#[test]
fn by_factor_with_four_levels() {
    let f = labels(4, 25);
    let x = uniform(3, 100);
    let cr = cr_basis(&x, &knots_quantile(&x, 10).unwrap()).unwrap();
    let b = apply_by_factor(&cr, "cond", &f).unwrap();
    assert_eq!(b.p(), 40);
    assert_eq!(b.penalties.len(), 4);
    // a row of level 0 has no weight on level 3 columns
    assert!(b.x.view((0, 30), (1, 10)).iter().all(|&v| v == 0.0));
}

#[test]
fn factor_smooth_recovers_group_shifts() {
    // level-specific constants only; heavy wiggliness penalty, tiny null-space ridge
    let per = 40;
    let shifts = [-1.0, 0.5, 2.0, -1.5];
    let x: Vec<f64> = (0..4 * per).map(|i| (i % per) as f64).collect();
    let y: Vec<f64> = (0..4 * per).map(|i| shifts[i / per]).collect();
    let t = DataTable::from_columns(vec![
        ("t", Column::Numeric(x)),
        ("g", Column::Factor(labels(4, per))),
        ("y", Column::Numeric(y)),
    ])
    .unwrap();
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::fs("t", "g", 5));
    let m = fit_with(&spec, &t, &FitOptions::fixed(vec![1e8, 1e-8])).unwrap();
    let grand = shifts.iter().sum::<f64>() / 4.0;
    let term = m.term("fs(t,g)").unwrap();
    let xt = m.design.x.columns(term.range.start, term.range.len()).into_owned();
    let contrib = &xt * m.beta.rows(term.range.start, term.range.len());
    for (i, c) in contrib.iter().enumerate() {
        let row = m.design.row_order[i];
        assert!((c - (shifts[row / per] - grand)).abs() < 1e-6, "row {row}: {c}");
    }
}

#[test]
fn constrained_and_unconstrained_fits_agree() {
    let x = uniform(7, 90);
    let y: Vec<f64> = x.iter().map(|v| (5.0 * v).cos() + v).collect();
    let raw = cr_basis(&x, &knots_quantile(&x, 7).unwrap()).unwrap();
    let con = absorb_constraints(&natural_reparam(&raw).unwrap()).unwrap();
    assert_eq!(con.p(), 6);
    for j in 0..con.p() {
        assert!(con.x.column(j).mean().abs() < 1e-10);
    }
    let yv = DVector::from_vec(y);
    let solve = |x: &DMatrix<f64>, s: &DMatrix<f64>| {
        let h = x.transpose() * x + s;
        let b = h.cholesky().unwrap().solve(&(x.transpose() * &yv));
        x * b
    };
    let lambda = 1e-3;
    // unconstrained smooth carries its own constant
    let f_raw = solve(&raw.x, &(&raw.penalties[0].matrix * lambda));
    // intercept column plus constrained smooth
    let p = con.p() + 1;
    let mut xc = DMatrix::from_element(90, p, 1.0);
    xc.columns_mut(1, con.p()).copy_from(&con.x);
    let mut sc = DMatrix::zeros(p, p);
    sc.view_mut((1, 1), (con.p(), con.p())).copy_from(&(&con.penalties[0].matrix * lambda));
    let f_con = solve(&xc, &sc);
    assert!(max_abs_diff(f_raw.as_slice(), f_con.as_slice()) < 1e-8);
}

#[test]
fn small_tensor_margins_decompose() {
    let x = uniform(8, 150);
    let z = uniform(9, 150);
    let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a * a + (3.0 * b).sin()).collect();
    let t = table(vec![("x", x), ("z", z), ("y", y)]);
    let te = ModelSpec::new("y").smooth(SmoothTermSpec::te("x", "z", 4, 3));
    let ti = ModelSpec::new("y")
        .smooth(SmoothTermSpec::ti_main("x", 4))
        .smooth(SmoothTermSpec::ti_main("z", 3))
        .smooth(SmoothTermSpec::ti("x", "z", 4, 3));
    let a = fit_with(&te, &t, &FitOptions::fixed(vec![0.0; 2])).unwrap();
    let b = fit_with(&ti, &t, &FitOptions::fixed(vec![0.0; 4])).unwrap();
    assert_eq!(a.p(), 12);
    assert_eq!(b.p(), 12);
    assert!(max_abs_diff(&a.fitted, &b.fitted) < 1e-8);
}

/// `∫ f''(x)² dx` of the natural cubic interpolant through `values` at `knots`,
/// by Simpson's rule on each interval (exact: f'' is linear per interval).
fn curvature_integral(knots: &[f64], values: &[f64]) -> f64 {
    let k = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    // second derivatives at the knots from the natural-spline tridiagonal system
    let mut a = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    a[(0, 0)] = 1.0;
    a[(k - 1, k - 1)] = 1.0;
    for i in 1..k - 1 {
        a[(i, i - 1)] = h[i - 1] / 6.0;
        a[(i, i)] = (h[i - 1] + h[i]) / 3.0;
        a[(i, i + 1)] = h[i] / 6.0;
        rhs[i] = (values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1];
    }
    let m = a.lu().solve(&rhs).unwrap();
    (0..k - 1)
        .map(|i| {
            let mid = 0.5 * (m[i] + m[i + 1]);
            h[i] / 6.0 * (m[i].powi(2) + 4.0 * mid * mid + m[i + 1].powi(2))
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cr_penalty_is_curvature_integral(beta in prop::collection::vec(-3.0f64..3.0, 7), seed in 0u64..1000) {
        let x = uniform(seed, 60);
        let knots = knots_quantile(&x, 7).unwrap();
        let b = cr_basis(&x, &knots).unwrap();
        let bv = DVector::from_vec(beta.clone());
        let quad = (bv.transpose() * &b.penalties[0].matrix * &bv)[(0, 0)];
        let direct = curvature_integral(&knots.locations, &beta);
        prop_assert!((quad - direct).abs() <= 1e-6 * direct.abs().max(1e-12), "{} vs {}", quad, direct);
    }

    #[test]
    fn tensor_penalties_annihilate_constants(ka in 3usize..7, kb in 3usize..7, seed in 0u64..1000) {
        let x = uniform(seed, 50);
        let z = uniform(seed + 1, 50);
        let a = cr_basis(&x, &knots_quantile(&x, ka).unwrap()).unwrap();
        let b = cr_basis(&z, &knots_quantile(&z, kb).unwrap()).unwrap().with_covariates(&["z"]).unwrap();
        let te = tensor_product(&a, &b, false).unwrap();
        // cardinal margins: the constant function has all-ones coefficients
        let ones = DVector::from_element(ka * kb, 1.0);
        for s in &te.penalties {
            prop_assert!((&s.matrix * &ones).amax() < 1e-8);
        }
    }

    #[test]
    fn factor_smooth_penalties_are_complementary(levels in 2usize..6, k in 3usize..7) {
        let per = 12;
        let f = labels(levels, per);
        let x: Vec<f64> = (0..levels * per).map(|i| (i % per) as f64).collect();
        let cr = cr_basis(&x, &knots_quantile(&x, k).unwrap()).unwrap();
        let fs = factor_smooth(&cr, "g", &f).unwrap();
        let sum = &fs.penalties[0].matrix + &fs.penalties[1].matrix;
        prop_assert!(sum.clone().cholesky().is_some());
        let s1 = &fs.penalties[0].matrix;
        for l in 1..levels {
            let d = (s1.view((0, 0), (k, k)) - s1.view((l * k, l * k), (k, k))).amax();
            prop_assert!(d == 0.0);
        }
    }
}
