//! The batch commands. Each one reads its inputs, computes everything, and
//! only then hands its files to [`Outputs`].

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use gammkit::data_io::{infer_kinds, load_csv, rescale_unit, transform_response, Column, ColumnKind, DataTable, Schema};
use gammkit::diagnostics::{
    permutation_fs_test, pilot_spec, residual_acf_by_group, suggest_rho, GroupAcf, ResidualKind, DEFAULT_MAX_LAG,
};
use gammkit::fit::{effect_grid, fit, partial_effect, predict_with, FittedModel, ModelSpec, PredictOptions, TermKind};
use gammkit::inference::{aic, compare_reml, reml_parameter_count, term_edf};
use gammkit::simulate::gen_experiment;
use serde_json::json;

use crate::model_file::{self, ModelFile};
use crate::output::{cell, csv_bytes, file_stem, table_csv, Outputs};
use crate::report::{self, full, Format, ModelRow};
use crate::scenario;

/// Grid points per axis for univariate and bivariate partial effects.
const GRID_1D: usize = 100;
const GRID_2D: usize = 40;
const DEFAULT_N_PERM: usize = 100;
const DEFAULT_PERM_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Fit,
    Predict,
    Compare,
    Acf,
    SuggestRho,
    Simulate,
    Permtest,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<PathBuf>,
    pub specs: Vec<PathBuf>,
    pub rho: Option<f64>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub format: Format,
    pub max_lag: Option<usize>,
    pub n_perm: Option<usize>,
    pub newdata: Option<PathBuf>,
    pub exclude: Vec<String>,
}

/// A failed command: the stage that failed and why.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub msg: String,
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // keep the diagnostic on one line
        write!(f, "{}: {}", self.stage, self.msg.replace('\n', " "))
    }
}

type Run<T> = Result<T, Failure>;

trait At<T> {
    fn at(self, stage: &'static str) -> Run<T>;
}

impl<T, E: Display> At<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Run<T> {
        self.map_err(|e| Failure { stage, msg: e.to_string() })
    }
}

fn fail<T>(stage: &'static str, msg: impl Into<String>) -> Run<T> {
    Err(Failure { stage, msg: msg.into() })
}

pub fn run(cfg: &RunConfig) -> Run<Vec<PathBuf>> {
    let mut out = Outputs::new(&cfg.out);
    match cfg.command {
        Command::Fit => cmd_fit(cfg, &mut out)?,
        Command::Predict => cmd_predict(cfg, &mut out)?,
        Command::Compare => cmd_compare(cfg, &mut out)?,
        Command::Acf => cmd_acf(cfg, &mut out)?,
        Command::SuggestRho => cmd_suggest_rho(cfg, &mut out)?,
        Command::Simulate => cmd_simulate(cfg, &mut out)?,
        Command::Permtest => cmd_permtest(cfg, &mut out)?,
    }
    out.commit().at("output")
}

fn read(path: &Path) -> Run<String> {
    std::fs::read_to_string(path).map_err(|e| Failure { stage: "spec", msg: format!("{}: {e}", path.display()) })
}

fn one_spec(cfg: &RunConfig) -> Run<(PathBuf, ModelFile)> {
    match cfg.specs.as_slice() {
        [p] => Ok((p.clone(), model_file::parse(&read(p)?).map_err(|m| Failure { stage: "spec", msg: format!("{}: {m}", p.display()) })?)),
        [] => fail("arguments", "--spec is required"),
        _ => fail("arguments", "this command takes a single --spec"),
    }
}

fn data_path(cfg: &RunConfig) -> Run<&Path> {
    match &cfg.data {
        Some(p) => Ok(p),
        None => fail("arguments", "--data is required"),
    }
}

/// Loads the columns the model files need, then applies their response
/// transform and rescaling. All files must agree on both.
fn load(path: &Path, files: &[&ModelFile]) -> Run<DataTable> {
    let mut factors = BTreeSet::new();
    let mut numeric = BTreeSet::new();
    let mut open = BTreeSet::new();
    for f in files {
        factors.extend(f.factor_columns());
        numeric.extend(f.numeric_columns());
        open.extend(f.open_columns());
    }
    if let Some(c) = factors.intersection(&numeric).next() {
        return fail("spec", format!("column '{c}' is used both as a factor and as a numeric covariate"));
    }
    let open: Vec<String> = open.into_iter().filter(|c| !factors.contains(c) && !numeric.contains(c)).collect();
    let open_kinds = if open.is_empty() { Vec::new() } else { infer_kinds(path, &open).at("data")? };
    let mut schema = Schema::new();
    for c in &numeric {
        schema = schema.numeric(c);
    }
    for c in &factors {
        schema = schema.factor(c);
    }
    for (c, k) in open.iter().zip(open_kinds) {
        schema = match k {
            ColumnKind::Numeric => schema.numeric(c),
            ColumnKind::Factor => schema.factor(c),
        };
    }
    let first = files[0];
    for f in &files[1..] {
        if f.series != first.series || f.transform != first.transform || f.rescale != first.rescale {
            return fail("spec", "model files disagree on series, transform or rescale lines");
        }
    }
    if let Some((s, o)) = &first.series {
        schema = schema.series(s, o);
    }
    let mut table = load_csv(path, &schema).at("data")?;
    table = transform_response(&table, &first.spec.response, first.transform).at("data")?;
    for c in &first.rescale {
        table = rescale_unit(&table, c).at("data")?;
    }
    Ok(table)
}

fn model_spec(file: &ModelFile, cfg: &RunConfig) -> Run<ModelSpec> {
    let mut spec = file.spec.clone();
    if let Some(r) = cfg.rho {
        spec.rho = r;
    }
    spec.validate().at("spec")?;
    if spec.rho > 0.0 && file.series.is_none() {
        return fail("spec", "rho > 0 needs a 'series:' line");
    }
    Ok(spec)
}

fn need_series(file: &ModelFile) -> Run<()> {
    match file.series {
        Some(_) => Ok(()),
        None => fail("spec", "this command needs a 'series: <factor> order: <column>' line"),
    }
}

/// Grid columns back on the original scale of rescaled covariates.
fn grid_cells(grid: &DataTable, table: &DataTable, name: &str, row: usize) -> String {
    match (grid.column(name), table.meta.affine_maps.get(name)) {
        (Ok(Column::Numeric(v)), Some(map)) => full(map.inverse(v[row])),
        (Ok(c), _) => cell(c, row),
        (Err(_), _) => String::new(),
    }
}

fn effect_files(model: &FittedModel, table: &DataTable, out: &mut Outputs) -> Run<()> {
    let mut used = BTreeSet::new();
    for t in &model.design.terms {
        if !matches!(t.kind, TermKind::Smooth | TermKind::Random) {
            continue;
        }
        let numeric_axes = effect_grid(model, &t.label, 2)
            .at("effects")?
            .column_names()
            .filter(|c| matches!(table.column(c), Ok(Column::Numeric(_))))
            .count();
        let n = if numeric_axes >= 2 { GRID_2D } else { GRID_1D };
        let grid = effect_grid(model, &t.label, n).at("effects")?;
        let pe = partial_effect(model, &t.label, &grid).at("effects")?;
        let names: Vec<&str> = grid.column_names().collect();
        let mut header = names.clone();
        header.extend(["effect", "se"]);
        let rows = (0..grid.n_rows()).map(|r| {
            let mut row: Vec<String> = names.iter().map(|c| grid_cells(&grid, table, c, r)).collect();
            row.push(full(pe.effect[r]));
            row.push(full(pe.se[r]));
            row
        });
        let mut stem = format!("effect_{}", file_stem(&t.label));
        while !used.insert(stem.clone()) {
            stem.push('_');
        }
        out.add(format!("{stem}.csv"), csv_bytes(&header, rows));
    }
    Ok(())
}

fn fit_json(cfg: &RunConfig, model: &FittedModel, table: &DataTable, file: &ModelFile) -> Run<Vec<u8>> {
    let penalties: Vec<_> = model
        .design
        .penalties
        .iter()
        .zip(&model.lambdas)
        .map(|(p, &l)| json!({ "penalty": p.label, "lambda": l, "log_lambda": l.ln() }))
        .collect();
    let terms = model
        .design
        .terms
        .iter()
        .map(|t| Ok(json!({ "label": t.label, "kind": format!("{:?}", t.kind), "columns": t.range.len(), "edf": term_edf(model, &t.label)? })))
        .collect::<gammkit::Result<Vec<_>>>()
        .at("inference")?;
    let rescaled: serde_json::Map<String, serde_json::Value> = table
        .meta
        .affine_maps
        .iter()
        .map(|(k, m)| (k.clone(), json!({ "offset": m.offset, "scale": m.scale })))
        .collect();
    let v = json!({
        "response": model.spec.response,
        "transform": format!("{:?}", file.transform),
        "n": model.n(),
        "dropped_rows": table.meta.dropped_rows,
        "coefficients": model.p(),
        "rho": model.rho(),
        "reml": model.reml,
        "aic": aic(model),
        "loglik": model.loglik,
        "scale": model.sigma2,
        "total_edf": model.total_edf,
        "converged": model.converged,
        "ridge_added": model.ridge_added,
        "smoothing_parameters": penalties,
        "terms": terms,
        "rescaled": rescaled,
        "seed": cfg.seed,
    });
    let mut s = serde_json::to_string_pretty(&v).at("output")?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn cmd_fit(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    let (_, file) = one_spec(cfg)?;
    let table = load(data_path(cfg)?, &[&file])?;
    let spec = model_spec(&file, cfg)?;
    let model = fit(&spec, &table).at("fit")?;

    let summary = report::summary(&model, &file, table.meta.dropped_rows, cfg.format).at("inference")?;
    out.add("summary.txt", summary);

    let coefs = model.design.terms.iter().flat_map(|t| {
        t.range.clone().enumerate().map(move |(k, j)| (t, k, j))
    });
    let rows = coefs.map(|(t, k, j)| {
        vec![t.label.clone(), t.column_names[k].clone(), full(model.beta[j]), full(model.vb[(j, j)].max(0.0).sqrt())]
    });
    out.add("coefficients.csv", csv_bytes(&["term", "name", "estimate", "se"], rows.collect::<Vec<_>>()));

    let y = table.numeric(&spec.response).at("fit")?;
    let keys = file.series.as_ref().map(|(s, o)| (table.column(s), table.column(o)));
    let mut header = vec!["row"];
    if let Some((s, o)) = &file.series {
        header.extend([s.as_str(), o.as_str()]);
    }
    header.extend(["observed", "fitted", "raw", "whitened"]);
    let rows = (0..table.n_rows()).map(|r| {
        let mut row = vec![(r + 1).to_string()];
        if let Some((Ok(s), Ok(o))) = &keys {
            row.push(cell(s, r));
            row.push(cell(o, r));
        }
        row.extend([full(y[r]), full(model.fitted[r]), full(model.residuals_raw[r]), full(model.residuals_whitened[r])]);
        row
    });
    out.add("residuals.csv", csv_bytes(&header, rows.collect::<Vec<_>>()));

    effect_files(&model, &table, out)?;
    out.add("fit.json", fit_json(cfg, &model, &table, &file)?);
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    let (_, file) = one_spec(cfg)?;
    let table = load(data_path(cfg)?, &[&file])?;
    let spec = model_spec(&file, cfg)?;
    let newdata = match &cfg.newdata {
        Some(p) => p,
        None => return fail("arguments", "--newdata is required"),
    };
    let model = fit(&spec, &table).at("fit")?;

    for e in &cfg.exclude {
        model.term(e).at("predict")?;
    }
    // excluded terms need no columns in the new data
    let kept = |label: String| !cfg.exclude.contains(&label);
    let mut needed: BTreeSet<String> = spec
        .parametric
        .iter()
        .filter(|t| kept(t.label()))
        .flat_map(|t| t.variables.iter().cloned())
        .collect();
    for s in spec.smooths.iter().filter(|s| kept(s.label())) {
        needed.extend(s.covariates.iter().cloned());
        needed.extend(s.by.iter().cloned());
        needed.extend(s.fs_group.iter().cloned());
    }
    let mut schema = Schema::new();
    for c in &needed {
        schema = match table.column(c).at("data")? {
            Column::Numeric(_) => schema.numeric(c),
            Column::Factor(_) => schema.factor(c),
        };
    }
    let original = if needed.is_empty() {
        // intercept-only model: one prediction per data row
        let n = csv::Reader::from_path(newdata).at("newdata")?.records().count();
        DataTable::from_columns(vec![("row", Column::Numeric((1..=n).map(|i| i as f64).collect()))]).at("newdata")?
    } else {
        load_csv(newdata, &schema).at("newdata")?
    };
    // training-data rescaling, not the new data's own range
    let mut scaled = original.clone();
    for (name, map) in &table.meta.affine_maps {
        if let Ok(v) = original.numeric(name) {
            scaled = scaled.with_column(name, Column::Numeric(v.iter().map(|&x| map.forward(x)).collect())).at("newdata")?;
        }
    }
    let opts = PredictOptions { exclude: cfg.exclude.clone(), ..Default::default() };
    let p = predict_with(&model, &scaled, &opts).at("predict")?;
    let names: Vec<&str> = original.column_names().collect();
    let cols: Vec<&Column> = names.iter().map(|n| original.column(n).expect("listed column")).collect();
    let mut header = names.clone();
    header.extend(["fit", "se"]);
    let rows = (0..original.n_rows()).map(|r| {
        let mut row: Vec<String> = cols.iter().map(|c| cell(c, r)).collect();
        row.push(full(p.mean[r]));
        row.push(full(p.se[r]));
        row
    });
    out.add("predictions.csv", csv_bytes(&header, rows.collect::<Vec<_>>()));
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    if cfg.specs.len() < 2 {
        return fail("arguments", "compare needs at least two --spec files");
    }
    let mut files = Vec::new();
    for p in &cfg.specs {
        let f = model_file::parse(&read(p)?).map_err(|m| Failure { stage: "spec", msg: format!("{}: {m}", p.display()) })?;
        files.push(f);
    }
    let response = &files[0].spec.response;
    if files.iter().any(|f| &f.spec.response != response) {
        return fail("spec", "models have different responses");
    }
    for i in 0..files.len() {
        for j in i + 1..files.len() {
            if files[i].spec == files[j].spec {
                return fail("spec", format!("{} and {} specify the same model", cfg.specs[i].display(), cfg.specs[j].display()));
            }
        }
    }
    let refs: Vec<&ModelFile> = files.iter().collect();
    let table = load(data_path(cfg)?, &refs)?;
    let mut models = Vec::new();
    for f in &files {
        models.push(fit(&model_spec(f, cfg)?, &table).at("fit")?);
    }
    let rows: Vec<ModelRow> = models
        .iter()
        .zip(&cfg.specs)
        .map(|(m, p)| ModelRow {
            name: p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
            aic: aic(m),
            reml: m.reml,
            df: reml_parameter_count(m),
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            pairs.push((i, j, compare_reml(&models[i], &models[j]).at("inference")?));
        }
    }
    out.add("comparison.txt", report::comparison(&rows, &pairs, cfg.format));
    Ok(())
}

fn acf_rows(raw: &GroupAcf, white: &GroupAcf, group: Option<usize>) -> Vec<Vec<String>> {
    let (r, w) = match group {
        Some(g) => (&raw.groups[g], &white.groups[g]),
        None => (&raw.pooled, &white.pooled),
    };
    r.lags
        .iter()
        .map(|&k| vec![k.to_string(), full(r.acf[k]), full(w.acf[k]), full(r.band)])
        .collect()
}

fn cmd_acf(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    let (_, file) = one_spec(cfg)?;
    need_series(&file)?;
    let table = load(data_path(cfg)?, &[&file])?;
    let model = fit(&model_spec(&file, cfg)?, &table).at("fit")?;
    let max_lag = cfg.max_lag.unwrap_or(DEFAULT_MAX_LAG);
    let raw = residual_acf_by_group(&model, ResidualKind::Raw, max_lag).at("diagnostics")?;
    let white = residual_acf_by_group(&model, ResidualKind::Whitened, max_lag).at("diagnostics")?;
    for s in &raw.skipped {
        eprintln!("warning: series '{s}' is shorter than max_lag + 2 and was skipped");
    }
    let header = ["lag", "raw", "whitened", "band"];
    out.add("acf_pooled.csv", csv_bytes(&header, acf_rows(&raw, &white, None)));
    for (g, a) in raw.groups.iter().enumerate() {
        out.add(format!("acf_group_{}.csv", file_stem(&a.group)), csv_bytes(&header, acf_rows(&raw, &white, Some(g))));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = out.names().find(|n| !seen.insert(n.to_string())) {
        return fail("output", format!("two series map to the same file name {dup}"));
    }
    Ok(())
}

fn cmd_suggest_rho(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    let (_, file) = one_spec(cfg)?;
    need_series(&file)?;
    let table = load(data_path(cfg)?, &[&file])?;
    // the pilot model is fitted without whitening
    let pilot = if file.has_terms() {
        file.spec.clone().rho(0.0)
    } else {
        pilot_spec(&table, &file.spec.response).at("spec")?
    };
    let s = suggest_rho(&table, &pilot).at("diagnostics")?;
    out.add("rho.txt", format!("{:.4}\n", s.rho));
    let rows = s.per_group.iter().map(|(g, r)| vec![g.clone(), full(*r)]);
    out.add("rho_by_group.csv", csv_bytes(&["group", "lag1"], rows.collect::<Vec<_>>()));
    Ok(())
}

fn cmd_permtest(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    let (_, file) = one_spec(cfg)?;
    need_series(&file)?;
    let table = load(data_path(cfg)?, &[&file])?;
    let n_perm = cfg.n_perm.unwrap_or(DEFAULT_N_PERM);
    let seed = cfg.seed.unwrap_or(DEFAULT_PERM_SEED);
    let r = permutation_fs_test(&table, &file.spec.response, n_perm, 0.05, seed).at("diagnostics")?;
    if r.failures > 0 {
        eprintln!("warning: {} of {n_perm} permutation fits failed", r.failures);
    }
    let rows = r
        .p_values
        .iter()
        .enumerate()
        .map(|(i, p)| vec![(i + 1).to_string(), p.map_or("NA".into(), full)]);
    out.add("permtest_pvalues.csv", csv_bytes(&["permutation", "p_value"], rows.collect::<Vec<_>>()));
    let fitted = n_perm - r.failures;
    let counts: String = [0.05, 0.01]
        .iter()
        .map(|&a| format!("alpha={a} rejections={} fits={fitted} failures={}\n", r.rejections_at(a), r.failures))
        .collect();
    out.add("permtest_counts.txt", counts);
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Run<()> {
    let path = match cfg.specs.as_slice() {
        [p] => p,
        [] => return fail("arguments", "--spec (a scenario file) is required"),
        _ => return fail("arguments", "simulate takes a single --spec"),
    };
    let mut spec = scenario::parse(&read(path)?).map_err(|m| Failure { stage: "spec", msg: format!("{}: {m}", path.display()) })?;
    if let Some(s) = cfg.seed {
        spec.seed = s;
    }
    let (table, truth) = gen_experiment(&spec).at("simulation")?;
    out.add("data.csv", table_csv(&table));
    let v = json!({ "scenario": spec, "truth": truth });
    let mut s = serde_json::to_string_pretty(&v).at("output")?;
    s.push('\n');
    out.add("truth.json", s);
    Ok(())
}
