mod common;

use gammkit::basis::SmoothTermSpec;
use gammkit::data_io::{Column, FactorColumn};
use gammkit::fit::{fit, fit_with, FitOptions, ModelSpec, ParametricTerm};
use gammkit::inference::{
    aic, compare_reml, nested_f_test, parametric_table, smooth_table, term_edf, wald_term_test, SummaryKind, Verdict,
};
use gammkit::GammError;
use rayon::prelude::*;

use common::{gaussian, sine_data, table, uniform};

#[test]
fn unpenalized_factor_term_has_integer_edf() {
    let (t, _) = sine_data(1, 90, 0.2);
    let labels: Vec<String> = (0..90).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let t = t.with_column("f", Column::Factor(FactorColumn::from_labels(&labels))).unwrap();
    let m = fit(&ModelSpec::new("y").parametric(ParametricTerm::new("f")).smooth(SmoothTermSpec::cr("x", 8)), &t).unwrap();
    assert!((term_edf(&m, "f").unwrap() - 2.0).abs() < 1e-10);
    assert!((term_edf(&m, "(Intercept)").unwrap() - 1.0).abs() < 1e-10);
    assert!(matches!(term_edf(&m, "s(z)"), Err(GammError::Lookup(_))));
}

#[test]
fn tp_edf_tends_to_one() {
    let (t, _) = sine_data(2, 100, 0.2);
    let m = fit_with(&ModelSpec::new("y").smooth(SmoothTermSpec::tp("x", 10)), &t, &FitOptions::fixed(vec![1e12])).unwrap();
    assert!((term_edf(&m, "s(x)").unwrap() - 1.0).abs() < 1e-4);
}

#[test]
fn intercept_only_aic_by_hand() {
    let n = 100;
    let mut y = gaussian(3, n, 1.0);
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    y.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    let m = fit(&ModelSpec::new("y"), &table(vec![("y", y)])).unwrap();
    let expected = n as f64 * (2.0 * std::f64::consts::PI).ln() + n as f64 + 4.0;
    assert!((aic(&m) - expected).abs() < 1e-9, "{} vs {expected}", aic(&m));
}

#[test]
fn aic_differences_are_location_invariant() {
    let (t, _) = sine_data(4, 120, 0.3);
    let shifted = t.clone().with_column("y", Column::Numeric(t.numeric("y").unwrap().iter().map(|v| v + 50.0).collect())).unwrap();
    let a = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 8));
    let b = ModelSpec::new("y").smooth(SmoothTermSpec::poly("x", 3));
    let d0 = aic(&fit(&a, &t).unwrap()) - aic(&fit(&b, &t).unwrap());
    let d1 = aic(&fit(&a, &shifted).unwrap()) - aic(&fit(&b, &shifted).unwrap());
    assert!((d0 - d1).abs() < 1e-6, "{d0} vs {d1}");
}

#[test]
fn nested_f_test_contract() {
    let (t, _) = sine_data(5, 200, 0.3);
    let small = fit(&ModelSpec::new("y"), &t).unwrap();
    let big = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &t).unwrap();
    let f = nested_f_test(&small, &big).unwrap();
    assert!(f.f > 0.0 && f.p < 1e-4);
    assert!((f.df1 - (big.total_edf - small.total_edf)).abs() < 1e-12);
    assert!((f.df2 - (200.0 - big.total_edf)).abs() < 1e-12);
    // swapped arguments
    assert!(matches!(nested_f_test(&big, &small), Err(GammError::Nesting(_))));
    // identical models
    let same = nested_f_test(&big, &big).unwrap();
    assert_eq!((same.f, same.p), (0.0, 1.0));
    // different whitening
    let whitened = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)).rho(0.2), &t).unwrap();
    assert!(matches!(nested_f_test(&small, &whitened), Err(GammError::Comparison(_))));
}

#[test]
fn compare_reml_contract() {
    let (t, _) = sine_data(6, 200, 0.3);
    let lin = fit(&ModelSpec::new("y").parametric(ParametricTerm::new("x")), &t).unwrap();
    let smooth = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &t).unwrap();
    let smooth2 = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::tp("x", 10)), &t).unwrap();
    // a purely parametric model still has a restricted likelihood
    let l = compare_reml(&lin, &smooth).unwrap();
    assert_eq!((l.df0, l.df1), (2, 2));
    let zero = fit_with(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &t, &FitOptions::fixed(vec![0.0])).unwrap();
    assert!(zero.reml.is_none());
    assert!(matches!(compare_reml(&zero, &smooth2), Err(GammError::Comparison(_))));
    assert!(matches!(compare_reml(&smooth, &smooth), Err(GammError::Comparison(_))));
    let c = compare_reml(&smooth, &smooth2).unwrap();
    let d = compare_reml(&smooth2, &smooth).unwrap();
    assert_eq!(c.stat, d.stat);
    assert_eq!(c.verdict, Verdict::EqualComplexity);
    let re = {
        let g: Vec<String> = (0..200).map(|i| format!("g{}", i % 10)).collect();
        let tg = t.clone().with_column("g", Column::Factor(FactorColumn::from_labels(&g))).unwrap();
        let a = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &tg).unwrap();
        let b = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)).smooth(SmoothTermSpec::re("g")), &tg).unwrap();
        compare_reml(&a, &b).unwrap()
    };
    assert_eq!(re.df, 1);
    assert_eq!((re.df0, re.df1), (2, 3));
}

#[test]
fn wald_detects_a_strong_effect() {
    let x = uniform(7, 200);
    let e = gaussian(7, 200, 0.1);
    let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| (2.0 * std::f64::consts::PI * a).sin() + b).collect();
    let t = table(vec![("x", x), ("y", y)]);
    let m = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &t).unwrap();
    let s = wald_term_test(&m, "s(x)").unwrap();
    assert_eq!(s.kind, SummaryKind::Smooth);
    assert!(s.approximate);
    assert!(s.p < 0.001);
    assert!(s.edf <= 9.0 && s.edf > 0.0);
}

#[test]
fn one_column_parametric_f_is_t_squared() {
    let (t, _) = sine_data(8, 150, 0.3);
    let m = fit(&ModelSpec::new("y").parametric(ParametricTerm::new("x")), &t).unwrap();
    let w = wald_term_test(&m, "x").unwrap();
    let row = parametric_table(&m).into_iter().find(|r| r.name == "x").unwrap();
    assert!((w.statistic - row.t * row.t).abs() < 1e-9 * w.statistic);
    assert!((w.p - row.p).abs() < 1e-9);
    assert!(smooth_table(&m).unwrap().is_empty());
}

#[test]
fn wald_null_rate_for_a_noise_smooth() {
    let n = 200;
    let rejected: usize = (0..500u64)
        .into_par_iter()
        .map(|rep| {
            let x = uniform(20_000 + rep, n);
            let y = gaussian(20_000 + rep, n, 1.0);
            let t = table(vec![("x", x), ("y", y)]);
            let m = fit(&ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 10)), &t).unwrap();
            usize::from(wald_term_test(&m, "s(x)").unwrap().p < 0.05)
        })
        .sum();
    let rate = rejected as f64 / 500.0;
    assert!((0.02..=0.10).contains(&rate), "rate {rate}");
}
