#![allow(dead_code)]

use gammkit::data_io::{Column, DataTable};
use gammkit::simulate::{normal_vec, stream};
use rand::Rng;

pub fn uniform(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(seed, 9, 0);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

pub fn gaussian(seed: u64, n: usize, sd: f64) -> Vec<f64> {
    normal_vec(&mut stream(seed, 8, 0), n, 0.0, sd)
}

pub fn table(cols: Vec<(&str, Vec<f64>)>) -> DataTable {
    DataTable::from_columns(cols.into_iter().map(|(n, v)| (n, Column::Numeric(v))).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `sin(2πx)` plus noise on `n` uniform points.
pub fn sine_data(seed: u64, n: usize, sd: f64) -> (DataTable, Vec<f64>) {
    let x = uniform(seed, n);
    let f: Vec<f64> = x.iter().map(|v| (2.0 * std::f64::consts::PI * v).sin()).collect();
    let e = gaussian(seed, n, sd);
    let y = f.iter().zip(&e).map(|(a, b)| a + b).collect();
    (table(vec![("x", x), ("y", y)]), f)
}
