//! Summary and comparison tables, and number formatting.

use gammkit::fit::FittedModel;
use gammkit::inference::{aic, parametric_table, smooth_table, RemlComparison, Verdict};
use gammkit::Result;

use crate::model_file::ModelFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    /// Aligned columns.
    Text,
    /// Tab-separated columns.
    Delimited,
}

/// Four decimals, as in the printed tables.
pub fn dec4(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "NA".into()
    }
}

pub fn p_value(p: f64) -> String {
    if p.is_finite() && p < 1e-4 {
        "< 0.0001".into()
    } else {
        dec4(p)
    }
}

/// Full precision for CSV cells.
pub fn full(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// First column left-aligned, the rest right-aligned.
    pub fn render(&self, format: Format) -> String {
        let mut out = String::new();
        match format {
            Format::Delimited => {
                for r in std::iter::once(&self.header).chain(&self.rows) {
                    out.push_str(&r.join("\t"));
                    out.push('\n');
                }
            }
            Format::Text => {
                let ncol = self.header.len();
                let width: Vec<usize> = (0..ncol)
                    .map(|j| {
                        std::iter::once(&self.header)
                            .chain(&self.rows)
                            .map(|r| r.get(j).map_or(0, |c| c.chars().count()))
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                for r in std::iter::once(&self.header).chain(&self.rows) {
                    let cells: Vec<String> = (0..ncol)
                        .map(|j| {
                            let c = r.get(j).map_or("", |s| s.as_str());
                            if j == 0 {
                                format!("{c:<w$}", w = width[j])
                            } else {
                                format!("{c:>w$}", w = width[j])
                            }
                        })
                        .collect();
                    out.push_str(cells.join("  ").trim_end());
                    out.push('\n');
                }
            }
        }
        out
    }
}

pub fn summary(model: &FittedModel, file: &ModelFile, dropped: usize, format: Format) -> Result<String> {
    let mut params = Table::new(&["", "Estimate", "Std. Error", "t value", "Pr(>|t|)"]);
    for r in parametric_table(model) {
        params.push(vec![r.name, dec4(r.estimate), dec4(r.se), dec4(r.t), p_value(r.p)]);
    }
    let mut smooths = Table::new(&["", "edf", "Ref.df", "F", "p-value", ""]);
    let rows = smooth_table(model)?;
    for s in &rows {
        let flag = if s.approximate { "approximate" } else { "" };
        smooths.push(vec![s.term.clone(), dec4(s.edf), dec4(s.ref_df), dec4(s.statistic), p_value(s.p), flag.into()]);
    }

    let mut out = String::new();
    let reml = model.reml.map_or("NA".to_string(), dec4);
    let lambdas: Vec<String> = model.lambdas.iter().map(|l| format!("{l:.4e}")).collect();
    if format == Format::Text {
        out.push_str(&format!("Response: {} (transform: {:?})\n", model.spec.response, file.transform));
        out.push_str(&format!("Observations: {} (dropped rows: {dropped})\n", model.n()));
        out.push_str(&format!("AR(1) rho: {}\n\n", dec4(model.rho())));
        out.push_str("A. parametric coefficients\n");
        out.push_str(&params.render(format));
        out.push_str("\nB. smooth terms\n");
        if rows.is_empty() {
            out.push_str("(none)\n");
        } else {
            out.push_str(&smooths.render(format));
        }
        out.push('\n');
        out.push_str(&format!(
            "REML: {reml}  AIC: {}  total edf: {}  scale: {}\n",
            dec4(aic(model)),
            dec4(model.total_edf),
            dec4(model.sigma2)
        ));
        out.push_str(&format!("smoothing parameters: {}\n", if lambdas.is_empty() { "none".into() } else { lambdas.join(" ") }));
        if !model.converged {
            out.push_str("warning: smoothing parameter search hit its evaluation budget\n");
        }
    } else {
        out.push_str(&params.render(format));
        out.push('\n');
        out.push_str(&smooths.render(format));
    }
    Ok(out)
}

pub struct ModelRow {
    pub name: String,
    pub aic: f64,
    pub reml: Option<f64>,
    pub df: usize,
}

pub fn comparison(models: &[ModelRow], pairs: &[(usize, usize, RemlComparison)], format: Format) -> String {
    let mut t = Table::new(&["model", "AIC", "fREML", "Df"]);
    for m in models {
        t.push(vec![m.name.clone(), dec4(m.aic), m.reml.map_or("NA".into(), dec4), m.df.to_string()]);
    }
    let mut c = Table::new(&["comparison", "Chisq", "Df", "p-value", ""]);
    for (i, j, r) in pairs {
        let (p, note) = match r.verdict {
            Verdict::Tested => (r.p.map_or("NA".into(), p_value), String::new()),
            Verdict::SimplerAndBetter => ("-".into(), format!("{} simpler and better", models[[*i, *j][r.preferred]].name)),
            Verdict::EqualComplexity => ("-".into(), "equal Df".into()),
        };
        c.push(vec![format!("{} vs {}", models[*i].name, models[*j].name), dec4(r.stat), r.df.to_string(), p, note]);
    }
    let mut out = t.render(format);
    out.push('\n');
    out.push_str(&c.render(format));
    out
}
