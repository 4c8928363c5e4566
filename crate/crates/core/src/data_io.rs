//! Observation tables: CSV loading, validation, covariate rescaling and
//! response transforms.
//!
//! A [`DataTable`] is column oriented. Numeric columns hold finite `f64`
//! values and factor columns hold level codes into a sorted level list. When a
//! table carries time-series structure, `series_key` names the grouping factor
//! (e.g. subject) and `order_key` the numeric within-series position (e.g.
//! trial).

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{GammError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorColumn {
    codes: Vec<u32>,
    levels: Vec<String>,
}

impl FactorColumn {
    /// Builds a factor from string labels. Levels are sorted lexically.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut levels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let codes = labels
            .iter()
            .map(|s| levels.binary_search_by(|l| l.as_str().cmp(s.as_ref())).unwrap() as u32)
            .collect();
        Self { codes, levels }
    }

    pub fn from_codes(codes: Vec<u32>, levels: Vec<String>) -> Result<Self> {
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= levels.len()) {
            return Err(GammError::Schema(format!(
                "factor code {bad} out of range for {} levels",
                levels.len()
            )));
        }
        Ok(Self { codes, levels })
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.codes[row] as usize]
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    /// Row counts per level.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.levels.len()];
        for &c in &self.codes {
            counts[c as usize] += 1;
        }
        counts
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            codes: rows.iter().map(|&r| self.codes[r]).collect(),
            levels: self.levels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Factor(FactorColumn),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Factor(f) => Column::Factor(f.select(rows)),
        }
    }
}

/// Affine covariate map `x -> (x - offset) / scale`, kept so prediction grids
/// can be reported on the original scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub offset: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn forward(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn inverse(&self, u: f64) -> f64 {
        u * self.scale + self.offset
    }

    /// The map equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        AffineMap {
            offset: self.offset + next.offset * self.scale,
            scale: self.scale * next.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseTransform {
    Identity,
    Log,
    /// `-1000 / x`, for reaction times recorded in milliseconds.
    Neg1000Over,
    /// Single-parameter Box–Cox power transform `(x^λ - 1) / λ` (log at λ = 0).
    Power(f64),
}

impl ResponseTransform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            ResponseTransform::Identity => x,
            ResponseTransform::Log => x.ln(),
            ResponseTransform::Neg1000Over => -1000.0 / x,
            ResponseTransform::Power(l) => boxcox(x, l),
        }
    }

    fn needs_positive(&self) -> bool {
        !matches!(self, ResponseTransform::Identity)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableMeta {
    pub dropped_rows: usize,
    pub transforms: Vec<(String, ResponseTransform)>,
    pub affine_maps: IndexMap<String, AffineMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    columns: IndexMap<String, Column>,
    n_rows: usize,
    series_key: Option<String>,
    order_key: Option<String>,
    pub meta: TableMeta,
}

impl DataTable {
    pub fn from_columns<S: Into<String>>(columns: Vec<(S, Column)>) -> Result<Self> {
        let mut map = IndexMap::new();
        let mut n_rows = None;
        for (name, col) in columns {
            let name = name.into();
            match n_rows {
                None => n_rows = Some(col.len()),
                Some(n) if n != col.len() => {
                    return Err(GammError::Schema(format!(
                        "column '{name}' has {} rows, expected {n}",
                        col.len()
                    )))
                }
                _ => {}
            }
            if let Column::Numeric(v) = &col {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(GammError::Domain {
                        row,
                        msg: format!("non-finite value in column '{name}'"),
                    });
                }
            }
            if map.insert(name.clone(), col).is_some() {
                return Err(GammError::Schema(format!("duplicate column '{name}'")));
            }
        }
        Ok(Self {
            columns: map,
            n_rows: n_rows.unwrap_or(0),
            series_key: None,
            order_key: None,
            meta: TableMeta::default(),
        })
    }

    /// Declares the time-series structure. `(series, order)` pairs must be unique.
    pub fn with_series(mut self, series: &str, order: &str) -> Result<Self> {
        let f = self.factor(series)?;
        let o = self.numeric(order)?;
        let mut seen = HashSet::with_capacity(self.n_rows);
        for (row, (&c, &t)) in f.codes().iter().zip(o).enumerate() {
            if !seen.insert((c, t.to_bits())) {
                return Err(GammError::Schema(format!(
                    "duplicate ({series}, {order}) pair at row {row}"
                )));
            }
        }
        self.series_key = Some(series.to_string());
        self.order_key = Some(order.to_string());
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn series_key(&self) -> Option<&str> {
        self.series_key.as_deref()
    }

    pub fn order_key(&self) -> Option<&str> {
        self.order_key.as_deref()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .get(name)
            .ok_or_else(|| GammError::Lookup(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Factor(_) => Err(GammError::Schema(format!("column '{name}' is a factor"))),
        }
    }

    pub fn factor(&self, name: &str) -> Result<&FactorColumn> {
        match self.column(name)? {
            Column::Factor(f) => Ok(f),
            Column::Numeric(_) => Err(GammError::Schema(format!("column '{name}' is numeric"))),
        }
    }

    /// Adds or replaces a column.
    pub fn with_column(mut self, name: &str, col: Column) -> Result<Self> {
        if col.len() != self.n_rows && !self.columns.is_empty() {
            return Err(GammError::Schema(format!(
                "column '{name}' has {} rows, expected {}",
                col.len(),
                self.n_rows
            )));
        }
        if self.columns.is_empty() {
            self.n_rows = col.len();
        }
        self.columns.insert(name.to_string(), col);
        Ok(self)
    }

    /// Subset of rows, in the given order. Factor level lists are kept.
    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            columns: self
                .columns
                .iter()
                .map(|(k, c)| (k.clone(), c.select(rows)))
                .collect(),
            n_rows: rows.len(),
            series_key: self.series_key.clone(),
            order_key: self.order_key.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Row permutation sorting by (series, order); identity without series structure.
    pub fn series_order(&self) -> Result<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.n_rows).collect();
        if let (Some(s), Some(o)) = (self.series_key(), self.order_key()) {
            let codes = self.factor(s)?.codes();
            let order = self.numeric(o)?;
            idx.sort_by(|&a, &b| {
                codes[a]
                    .cmp(&codes[b])
                    .then(order[a].total_cmp(&order[b]))
            });
        }
        Ok(idx)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.keys())?;
        for row in 0..self.n_rows {
            let rec: Vec<String> = self
                .columns
                .values()
                .map(|c| match c {
                    Column::Numeric(v) => format!("{}", v[row]),
                    Column::Factor(f) => f.label(row).to_string(),
                })
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Factor,
}

#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub columns: Vec<(String, ColumnKind)>,
    pub series_key: Option<String>,
    pub order_key: Option<String>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn numeric(mut self, name: &str) -> Self {
        self.columns.push((name.to_string(), ColumnKind::Numeric));
        self
    }

    pub fn factor(mut self, name: &str) -> Self {
        self.columns.push((name.to_string(), ColumnKind::Factor));
        self
    }

    pub fn series(mut self, series: &str, order: &str) -> Self {
        self.series_key = Some(series.to_string());
        self.order_key = Some(order.to_string());
        self
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Loads the schema columns of a CSV file. Rows with a missing value
/// (`NA` or empty) in any schema column are dropped and counted in
/// `meta.dropped_rows`.
pub fn load_csv<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<DataTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for (name, kind) in &schema.columns {
        let pos = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| GammError::Schema(format!("column '{name}' not found in header")))?;
        positions.push((name.clone(), *kind, pos));
    }

    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); positions.len()];
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); positions.len()];
    let mut dropped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if positions
            .iter()
            .any(|(_, _, p)| rec.get(*p).map_or(true, is_missing))
        {
            dropped += 1;
            continue;
        }
        for (j, (name, kind, p)) in positions.iter().enumerate() {
            let cell = rec[*p].trim();
            match kind {
                ColumnKind::Numeric => {
                    let v: f64 = cell.parse().map_err(|_| GammError::Parse {
                        row,
                        msg: format!("column '{name}': cannot parse '{cell}' as a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(GammError::Parse {
                            row,
                            msg: format!("column '{name}': non-finite value '{cell}'"),
                        });
                    }
                    numeric[j].push(v);
                }
                ColumnKind::Factor => labels[j].push(cell.to_string()),
            }
        }
    }

    let mut cols = Vec::with_capacity(positions.len());
    for (j, (name, kind, _)) in positions.into_iter().enumerate() {
        let col = match kind {
            ColumnKind::Numeric => Column::Numeric(std::mem::take(&mut numeric[j])),
            ColumnKind::Factor => Column::Factor(FactorColumn::from_labels(&labels[j])),
        };
        cols.push((name, col));
    }
    let mut table = DataTable::from_columns(cols)?;
    if table.n_rows() == 0 {
        return Err(GammError::EmptyData);
    }
    table.meta.dropped_rows = dropped;
    if let (Some(s), Some(o)) = (&schema.series_key, &schema.order_key) {
        table = table.with_series(s, o)?;
    }
    Ok(table)
}

/// Guesses column kinds: a column is numeric when every non-missing cell
/// parses as a number.
pub fn infer_kinds<P: AsRef<Path>>(path: P, names: &[String]) -> Result<Vec<ColumnKind>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut pos = Vec::with_capacity(names.len());
    for name in names {
        pos.push(
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| GammError::Schema(format!("column '{name}' not found in header")))?,
        );
    }
    let mut numeric = vec![true; names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, &p) in pos.iter().enumerate() {
            if numeric[j] {
                if let Some(cell) = rec.get(p) {
                    if !is_missing(cell) && cell.trim().parse::<f64>().is_err() {
                        numeric[j] = false;
                    }
                }
            }
        }
    }
    Ok(numeric
        .into_iter()
        .map(|b| if b { ColumnKind::Numeric } else { ColumnKind::Factor })
        .collect())
}

/// Maps a numeric column onto [0, 1] and records the map.
pub fn rescale_unit(table: &DataTable, column: &str) -> Result<DataTable> {
    let x = table.numeric(column)?;
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(GammError::DegenerateScale(column.to_string()));
    }
    let map = AffineMap { offset: lo, scale: hi - lo };
    let scaled = x.iter().map(|&v| map.forward(v)).collect();
    let mut out = table.clone().with_column(column, Column::Numeric(scaled))?;
    let composed = match out.meta.affine_maps.get(column) {
        Some(prev) => prev.then(&map),
        None => map,
    };
    out.meta.affine_maps.insert(column.to_string(), composed);
    Ok(out)
}

pub fn transform_response(
    table: &DataTable,
    column: &str,
    kind: ResponseTransform,
) -> Result<DataTable> {
    if kind == ResponseTransform::Identity {
        return Ok(table.clone());
    }
    let x = table.numeric(column)?;
    if kind.needs_positive() {
        if let Some(row) = x.iter().position(|&v| v <= 0.0) {
            return Err(GammError::Domain {
                row,
                msg: format!("{kind:?} requires positive values, found {}", x[row]),
            });
        }
    }
    let y = x.iter().map(|&v| kind.apply(v)).collect();
    let mut out = table.clone().with_column(column, Column::Numeric(y))?;
    out.meta.transforms.push((column.to_string(), kind));
    Ok(out)
}

fn boxcox(x: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-12 {
        x.ln()
    } else {
        (x.powf(lambda) - 1.0) / lambda
    }
}

#[derive(Debug, Clone)]
pub struct BoxCoxProfile {
    pub lambda_best: f64,
    pub grid: Vec<f64>,
    /// Profile log-likelihood per grid point, including the Jacobian term.
    pub scores: Vec<f64>,
}

/// 41 points on [-2, 2].
pub fn boxcox_default_grid() -> Vec<f64> {
    (0..41).map(|i| -2.0 + 0.1 * i as f64).collect()
}

/// Box–Cox profile log-likelihood of a Gaussian intercept-only model:
/// `-n/2 (log(2π σ̂²_λ) + 1) + (λ - 1) Σ log y`.
pub fn boxcox_profile(y: &[f64], grid: &[f64]) -> Result<BoxCoxProfile> {
    if grid.is_empty() {
        return Err(GammError::InvalidValue("empty Box–Cox grid".into()));
    }
    if y.is_empty() {
        return Err(GammError::EmptyData);
    }
    if let Some(row) = y.iter().position(|&v| !(v > 0.0)) {
        return Err(GammError::Domain {
            row,
            msg: format!("Box–Cox requires positive values, found {}", y[row]),
        });
    }
    let n = y.len() as f64;
    let sum_log: f64 = y.iter().map(|v| v.ln()).sum();
    let scores: Vec<f64> = grid
        .iter()
        .map(|&l| {
            let z: Vec<f64> = y.iter().map(|&v| boxcox(v, l)).collect();
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0) + (l - 1.0) * sum_log
        })
        .collect();
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    Ok(BoxCoxProfile {
        lambda_best: grid[best],
        grid: grid.to_vec(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn schema() -> Schema {
        Schema::new().numeric("rt").factor("subj").numeric("trial")
    }

    #[test]
    fn load_three_rows() {
        let f = write_tmp("rt,subj,trial\n500,a,1\n610,a,2\n480,b,1\n");
        let t = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.meta.dropped_rows, 0);
        assert_eq!(t.numeric("rt").unwrap(), &[500.0, 610.0, 480.0]);
        assert_eq!(t.factor("subj").unwrap().levels(), &["a", "b"]);
    }

    #[test]
    fn missing_values_are_dropped() {
        let f = write_tmp("rt,subj,trial\n500,a,1\nNA,a,2\n480,b,1\n");
        let t = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.meta.dropped_rows, 1);
    }

    #[test]
    fn missing_schema_column() {
        let f = write_tmp("rt,subj\n500,a\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(GammError::Schema(_))));
    }

    #[test]
    fn parse_error_reports_row() {
        let f = write_tmp("rt,subj,trial\n500,a,1\nfast,a,2\n");
        match load_csv(f.path(), &schema()) {
            Err(GammError::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_missing_is_empty() {
        let f = write_tmp("rt,subj,trial\nNA,a,1\n,b,2\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(GammError::EmptyData)));
    }

    #[test]
    fn duplicate_series_order_rejected() {
        let f = write_tmp("rt,subj,trial\n500,a,1\n510,a,1\n");
        let s = schema().series("subj", "trial");
        assert!(matches!(load_csv(f.path(), &s), Err(GammError::Schema(_))));
    }

    fn numeric_table(x: Vec<f64>) -> DataTable {
        DataTable::from_columns(vec![("x", Column::Numeric(x))]).unwrap()
    }

    #[test]
    fn rescale_examples() {
        let t = rescale_unit(&numeric_table(vec![1.0, 2.0, 3.0]), "x").unwrap();
        assert_eq!(t.numeric("x").unwrap(), &[0.0, 0.5, 1.0]);
        let m = t.meta.affine_maps["x"];
        assert_eq!(m.inverse(0.5), 2.0);
        let t = rescale_unit(&numeric_table(vec![0.0, 1.0]), "x").unwrap();
        assert_eq!(t.numeric("x").unwrap(), &[0.0, 1.0]);
        assert!(matches!(
            rescale_unit(&numeric_table(vec![5.0; 3]), "x"),
            Err(GammError::DegenerateScale(_))
        ));
    }

    #[test]
    fn rescale_is_idempotent() {
        let once = rescale_unit(&numeric_table(vec![3.0, -1.0, 7.5, 2.0]), "x").unwrap();
        let twice = rescale_unit(&once, "x").unwrap();
        assert_eq!(once.numeric("x").unwrap(), twice.numeric("x").unwrap());
        let m = twice.meta.affine_maps["x"];
        assert!((m.inverse(1.0) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn transform_examples() {
        let t = transform_response(&numeric_table(vec![500.0]), "x", ResponseTransform::Neg1000Over)
            .unwrap();
        assert_eq!(t.numeric("x").unwrap(), &[-2.0]);
        let t = transform_response(
            &numeric_table(vec![std::f64::consts::E]),
            "x",
            ResponseTransform::Log,
        )
        .unwrap();
        assert!((t.numeric("x").unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(matches!(
            transform_response(&numeric_table(vec![1.0, 0.0]), "x", ResponseTransform::Log),
            Err(GammError::Domain { row: 1, .. })
        ));
    }

    #[test]
    fn identity_transform_is_bit_identical() {
        let t = numeric_table(vec![0.1, -3.0, 2.5]);
        let u = transform_response(&t, "x", ResponseTransform::Identity).unwrap();
        assert_eq!(t, u);
    }

    #[test]
    fn boxcox_rejects_zero() {
        assert!(matches!(
            boxcox_profile(&[1.0, 0.0, 2.0], &[0.0]),
            Err(GammError::Domain { row: 1, .. })
        ));
    }

    #[test]
    fn boxcox_at_one_is_gaussian_loglik_of_shifted_values() {
        let y = [1.5, 2.0, 3.5, 0.7, 1.1];
        let prof = boxcox_profile(&y, &[1.0]).unwrap();
        let n = y.len() as f64;
        let z: Vec<f64> = y.iter().map(|v| v - 1.0).collect();
        let m = z.iter().sum::<f64>() / n;
        let s2 = z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let ll: f64 = z
            .iter()
            .map(|v| -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - (v - m).powi(2) / (2.0 * s2))
            .sum();
        assert!((prof.scores[0] - ll).abs() < 1e-10);
    }

    #[test]
    fn default_grid_shape() {
        let g = boxcox_default_grid();
        assert_eq!(g.len(), 41);
        assert!((g[0] + 2.0).abs() < 1e-12 && (g[40] - 2.0).abs() < 1e-12);
        assert!(g.iter().any(|v| v.abs() < 1e-12));
    }
}
