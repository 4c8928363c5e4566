mod common;

use std::io::Write;

use gammkit::basis::SmoothTermSpec;
use gammkit::data_io::{
    boxcox_profile, load_csv, rescale_unit, transform_response, ResponseTransform, Schema,
};
use gammkit::fit::{fit, ModelSpec};
use gammkit::simulate::{normal_vec, stream};

use common::{table, uniform};

const GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

#[test]
fn boxcox_picks_log_for_lognormal_data() {
    let z = normal_vec(&mut stream(3, 0, 0), 10_000, 0.0, 1.0);
    let y: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let p = boxcox_profile(&y, &GRID).unwrap();
    assert_eq!(p.lambda_best, 0.0, "{:?}", p.scores);
}

#[test]
fn boxcox_picks_reciprocal_for_reciprocal_normal_data() {
    let z = normal_vec(&mut stream(4, 0, 0), 10_000, 5.0, 0.5);
    let y: Vec<f64> = z.iter().map(|v| 1.0 / v.abs()).collect();
    let p = boxcox_profile(&y, &GRID).unwrap();
    assert_eq!(p.lambda_best, -1.0, "{:?}", p.scores);
}

#[test]
fn csv_to_fit_round_trip() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "rt,subj,trial").unwrap();
    let x = uniform(5, 60);
    for (i, v) in x.iter().enumerate() {
        let rt = if i == 7 { "NA".to_string() } else { format!("{}", 400.0 + 100.0 * v) };
        writeln!(f, "{rt},s{},{}", i % 3, i / 3 + 1).unwrap();
    }
    f.flush().unwrap();
    let schema = Schema::new().numeric("rt").factor("subj").numeric("trial").series("subj", "trial");
    let t = load_csv(f.path(), &schema).unwrap();
    assert_eq!(t.n_rows(), 59);
    assert_eq!(t.meta.dropped_rows, 1);
    let t = transform_response(&t, "rt", ResponseTransform::Neg1000Over).unwrap();
    assert!(t.numeric("rt").unwrap().iter().all(|v| (-2.5..=-2.0).contains(v)));
    let t = rescale_unit(&t, "trial").unwrap();
    let map = t.meta.affine_maps["trial"];
    assert_eq!(map.inverse(1.0), 20.0);
    let m = fit(&ModelSpec::new("rt").smooth(SmoothTermSpec::cr("trial", 5)), &t).unwrap();
    assert_eq!(m.n(), 59);
}

#[test]
fn rescaled_covariate_gives_same_fit() {
    let x: Vec<f64> = uniform(6, 80).iter().map(|v| 10.0 + 90.0 * v).collect();
    let y: Vec<f64> = x.iter().map(|v| (v / 15.0).sin()).collect();
    let t = table(vec![("x", x), ("y", y)]);
    let spec = ModelSpec::new("y").smooth(SmoothTermSpec::cr("x", 8));
    let a = fit(&spec, &t).unwrap();
    let b = fit(&spec, &rescale_unit(&t, "x").unwrap()).unwrap();
    // quantile knots and the penalty scaling both follow the affine map
    assert!(common::max_abs_diff(&a.fitted, &b.fitted) < 1e-6);
}
