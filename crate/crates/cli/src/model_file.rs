//! Line-oriented model specification files.
//!
//! ```text
//! # comments and blank lines are ignored
//! response: rt
//! transform: neg1000_over
//! factors: subject, word
//! rescale: trial
//! parametric: size*orientation coding=sum
//! smooth: tp(soa) k=10
//! smooth: fs(trial, subject) k=5
//! smooth: te(freq, trial) k=5,5
//! random: intercept(word)
//! rho: 0.2
//! series: subject order: trial
//! ```

use std::collections::BTreeSet;

use gammkit::basis::{BasisKind, KnotPlacement, SmoothTermSpec};
use gammkit::data_io::ResponseTransform;
use gammkit::diagnostics::DEFAULT_FS_K;
use gammkit::fit::{Coding, ModelSpec, ParametricTerm};

const DEFAULT_K: usize = 10;
const DEFAULT_TENSOR_K: usize = 5;
const DEFAULT_POLY_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub spec: ModelSpec,
    pub transform: ResponseTransform,
    pub factors: Vec<String>,
    pub rescale: Vec<String>,
    pub series: Option<(String, String)>,
}

impl ModelFile {
    pub fn has_terms(&self) -> bool {
        !self.spec.parametric.is_empty() || !self.spec.smooths.is_empty()
    }

    /// Columns that must be read as factors.
    pub fn factor_columns(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.factors.iter().cloned().collect();
        if let Some((s, _)) = &self.series {
            out.insert(s.clone());
        }
        for s in &self.spec.smooths {
            out.extend(s.fs_group.iter().cloned());
            out.extend(s.by.iter().cloned());
            if s.kind == BasisKind::RandomEffect {
                out.insert(s.covariates[0].clone());
            }
        }
        out
    }

    /// Columns that must be read as numbers.
    pub fn numeric_columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        out.insert(self.spec.response.clone());
        if let Some((_, o)) = &self.series {
            out.insert(o.clone());
        }
        for s in &self.spec.smooths {
            let skip = usize::from(s.kind == BasisKind::RandomEffect);
            out.extend(s.covariates.iter().skip(skip).cloned());
        }
        out.extend(self.rescale.iter().cloned());
        out
    }

    /// Parametric variables whose kind is taken from the data unless declared.
    pub fn open_columns(&self) -> BTreeSet<String> {
        self.spec.parametric.iter().flat_map(|t| t.variables.iter().cloned()).collect()
    }
}

fn err(line: usize, msg: impl std::fmt::Display) -> String {
    format!("line {line}: {msg}")
}

fn list(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
}

/// `name(a, b) key=value key=value` → (name, args, options).
fn call(value: &str, line: usize) -> Result<(String, Vec<String>, Vec<(String, String)>), String> {
    let open = value.find('(').ok_or_else(|| err(line, format!("expected a term like name(x), got '{value}'")))?;
    let close = value.find(')').filter(|&c| c > open).ok_or_else(|| err(line, "unbalanced parentheses"))?;
    let name = value[..open].trim().to_string();
    let args = list(&value[open + 1..close]);
    if args.is_empty() || !args.iter().all(|a| is_name(a)) {
        return Err(err(line, format!("bad argument list in '{value}'")));
    }
    let opts = options(&value[close + 1..], line)?;
    Ok((name, args, opts))
}

fn options(rest: &str, line: usize) -> Result<Vec<(String, String)>, String> {
    rest.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .filter(|(k, v)| !k.is_empty() && !v.is_empty())
                .ok_or_else(|| err(line, format!("expected key=value, got '{tok}'")))
        })
        .collect()
}

fn parse_usize(v: &str, line: usize, what: &str) -> Result<usize, String> {
    v.parse().map_err(|_| err(line, format!("{what} must be a whole number, got '{v}'")))
}

fn parse_k(v: &str, line: usize) -> Result<Vec<usize>, String> {
    v.split(',').map(|s| parse_usize(s.trim(), line, "k")).collect()
}

fn smooth(value: &str, line: usize) -> Result<SmoothTermSpec, String> {
    let (name, args, opts) = call(value, line)?;
    let mut k: Option<Vec<usize>> = None;
    let mut by = None;
    let mut m = None;
    let mut bs = None;
    for (key, v) in &opts {
        match key.as_str() {
            "k" => k = Some(parse_k(v, line)?),
            "by" => by = Some(v.clone()),
            "m" => m = Some(parse_usize(v, line, "m")?),
            "bs" => bs = Some(v.clone()),
            _ => return Err(err(line, format!("unknown smooth option '{key}'"))),
        }
    }
    let one_k = |default: usize| -> Result<usize, String> {
        match &k {
            None => Ok(default),
            Some(v) if v.len() == 1 => Ok(v[0]),
            Some(_) => Err(err(line, format!("{name}() takes a single k"))),
        }
    };
    let two_k = |n: usize| -> Result<Vec<usize>, String> {
        match &k {
            None => Ok(vec![DEFAULT_TENSOR_K; n]),
            Some(v) if v.len() == n => Ok(v.clone()),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; n]),
            Some(_) => Err(err(line, format!("{name}() needs one k per covariate"))),
        }
    };
    let arity = |n: &[usize]| -> Result<(), String> {
        if n.contains(&args.len()) {
            Ok(())
        } else {
            Err(err(line, format!("{name}() takes {n:?} covariates, got {}", args.len())))
        }
    };
    let mut term = match name.as_str() {
        "s" | "tp" | "cr" if args.len() == 1 => {
            let basis = if name == "s" { bs.as_deref().unwrap_or("tp") } else { name.as_str() };
            match basis {
                "tp" => SmoothTermSpec::tp(&args[0], one_k(DEFAULT_K)?),
                "cr" => SmoothTermSpec::cr(&args[0], one_k(DEFAULT_K)?),
                other => return Err(err(line, format!("unknown basis '{other}'"))),
            }
        }
        "s" | "tp" => {
            arity(&[2])?;
            SmoothTermSpec::tp2(&args[0], &args[1], one_k(DEFAULT_K)?)
        }
        "poly" => {
            arity(&[1])?;
            SmoothTermSpec::poly(&args[0], one_k(DEFAULT_POLY_DEGREE)?)
        }
        "te" => {
            arity(&[2])?;
            let k = two_k(2)?;
            SmoothTermSpec::te(&args[0], &args[1], k[0], k[1])
        }
        "ti" if args.len() == 1 => SmoothTermSpec::ti_main(&args[0], one_k(DEFAULT_TENSOR_K)?),
        "ti" => {
            arity(&[2])?;
            let k = two_k(2)?;
            SmoothTermSpec::ti(&args[0], &args[1], k[0], k[1])
        }
        "fs" => {
            arity(&[2])?;
            let k = one_k(DEFAULT_FS_K)?;
            let mut t = SmoothTermSpec::fs(&args[0], &args[1], k);
            if bs.as_deref() == Some("tp") {
                t.kind = BasisKind::Tp;
            } else if let Some(b) = bs.as_deref().filter(|b| *b != "cr") {
                return Err(err(line, format!("unknown basis '{b}'")));
            }
            t
        }
        "re" => {
            arity(&[1, 2])?;
            if args.len() == 1 {
                SmoothTermSpec::re(&args[0])
            } else {
                SmoothTermSpec::re_slope(&args[0], &args[1])
            }
        }
        "cr" => return Err(err(line, "cr() takes one covariate")),
        _ => return Err(err(line, format!("unknown smooth '{name}'"))),
    };
    if let Some(f) = by {
        term = term.by(&f);
    }
    if let Some(m) = m {
        term = term.with_m(m);
    }
    term.validate().map_err(|e| err(line, e))?;
    Ok(term)
}

fn random(value: &str, line: usize) -> Result<SmoothTermSpec, String> {
    let (name, args, opts) = call(value, line)?;
    if !opts.is_empty() {
        return Err(err(line, "random terms take no options"));
    }
    match (name.as_str(), args.len()) {
        ("intercept", 1) => Ok(SmoothTermSpec::re(&args[0])),
        ("slope", 2) => Ok(SmoothTermSpec::re_slope(&args[0], &args[1])),
        _ => Err(err(line, format!("expected intercept(group) or slope(group, x), got '{value}'"))),
    }
}

/// Expands `a*b + c` into `a`, `b`, `a:b`, `c`.
fn parametric(value: &str, line: usize) -> Result<Vec<ParametricTerm>, String> {
    let mut coding = Coding::Sum;
    let mut formula = Vec::new();
    for tok in value.split_whitespace() {
        match tok.split_once('=') {
            Some(("coding", "sum")) => coding = Coding::Sum,
            Some(("coding", "treatment")) => coding = Coding::Treatment,
            Some((k, v)) => return Err(err(line, format!("unknown parametric option '{k}={v}'"))),
            None => formula.push(tok),
        }
    }
    let formula = formula.join("");
    let mut out: Vec<Vec<String>> = Vec::new();
    for part in formula.split('+') {
        if part.contains('*') {
            let vars: Vec<&str> = part.split('*').collect();
            if !vars.iter().all(|v| is_name(v)) {
                return Err(err(line, format!("bad term '{part}'")));
            }
            // all non-empty subsets, lower orders first
            let n = vars.len();
            let mut subsets: Vec<Vec<String>> = (1u32..(1 << n))
                .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| vars[i].to_string()).collect())
                .collect();
            subsets.sort_by_key(|s: &Vec<String>| s.len());
            out.extend(subsets);
        } else {
            let vars: Vec<String> = part.split(':').map(|s| s.to_string()).collect();
            if !vars.iter().all(|v| is_name(v)) {
                return Err(err(line, format!("bad term '{part}'")));
            }
            out.push(vars);
        }
    }
    let mut seen = BTreeSet::new();
    Ok(out
        .into_iter()
        .filter(|v| seen.insert(v.join(":")))
        .map(|v| {
            let refs: Vec<&str> = v.iter().map(|s| s.as_str()).collect();
            ParametricTerm::interaction(&refs).with_coding(coding)
        })
        .collect())
}

fn transform(value: &str, line: usize) -> Result<ResponseTransform, String> {
    let v = value.trim();
    match v {
        "identity" | "none" => Ok(ResponseTransform::Identity),
        "log" => Ok(ResponseTransform::Log),
        "neg1000_over" | "-1000/x" => Ok(ResponseTransform::Neg1000Over),
        _ => {
            let inner = v
                .strip_prefix("power(")
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| err(line, format!("unknown transform '{v}'")))?;
            let l: f64 = inner.trim().parse().map_err(|_| err(line, format!("bad power '{inner}'")))?;
            Ok(ResponseTransform::Power(l))
        }
    }
}

pub fn parse(text: &str) -> Result<ModelFile, String> {
    let mut response: Option<String> = None;
    let mut params: Vec<ParametricTerm> = Vec::new();
    let mut smooths = Vec::new();
    let mut rho = 0.0;
    let mut knots = KnotPlacement::Quantile;
    let mut file = ModelFile {
        spec: ModelSpec::new(""),
        transform: ResponseTransform::Identity,
        factors: Vec::new(),
        rescale: Vec::new(),
        series: None,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once(':')
            .ok_or_else(|| err(line, format!("expected 'key: value', got '{content}'")))?;
        let value = value.trim();
        match key.trim() {
            "response" => {
                if !is_name(value) {
                    return Err(err(line, format!("bad response name '{value}'")));
                }
                response = Some(value.to_string());
            }
            "parametric" => params.extend(parametric(value, line)?),
            "smooth" => smooths.push(smooth(value, line)?),
            "random" => smooths.push(random(value, line)?),
            "rho" => {
                rho = value.parse().map_err(|_| err(line, format!("bad rho '{value}'")))?;
            }
            "series" => {
                let (s, o) = value
                    .split_once("order:")
                    .map(|(s, o)| (s.trim(), o.trim()))
                    .filter(|(s, o)| is_name(s) && is_name(o))
                    .ok_or_else(|| err(line, "expected 'series: <factor> order: <column>'"))?;
                file.series = Some((s.to_string(), o.to_string()));
            }
            "factors" => file.factors.extend(list(value)),
            "rescale" => file.rescale.extend(list(value)),
            "transform" => file.transform = transform(value, line)?,
            "knots" => {
                knots = match value {
                    "quantile" => KnotPlacement::Quantile,
                    "even" => KnotPlacement::Even,
                    _ => return Err(err(line, format!("unknown knot placement '{value}'"))),
                }
            }
            other => return Err(err(line, format!("unknown key '{other}'"))),
        }
    }
    let response = response.ok_or("no 'response:' line")?;
    let mut spec = ModelSpec::new(&response).rho(rho).knots(knots);
    spec.parametric = params;
    spec.smooths = smooths;
    spec.validate().map_err(|e| e.to_string())?;
    if rho > 0.0 && file.series.is_none() {
        return Err("rho > 0 needs a 'series:' line".into());
    }
    file.spec = spec;
    Ok(file)
}
