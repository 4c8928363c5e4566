//! Scenario files for `simulate`, in the same `key: value` style as model files.
//!
//! ```text
//! subjects: 50
//! trials: 400
//! intercept: 6.0
//! sigma: 1.0
//! rho: 0.3
//! subject_sd: 0.5
//! trend: undulating amplitude=0.5
//! factor: size levels=small,large effects=-0.1,0.1
//! linear: freq coef=0.5
//! sine: soa amplitude=1
//! seed: 7
//! ```

use gammkit::simulate::{FixedEffect, FixedKind, ScenarioSpec, TrendKind};

fn err(line: usize, msg: impl std::fmt::Display) -> String {
    format!("line {line}: {msg}")
}

fn num<T: std::str::FromStr>(v: &str, line: usize, what: &str) -> Result<T, String> {
    v.trim().parse().map_err(|_| err(line, format!("bad {what} '{}'", v.trim())))
}

/// `name key=value ...` → (name, options).
fn named(value: &str, line: usize) -> Result<(String, Vec<(String, String)>), String> {
    let mut toks = value.split_whitespace();
    let name = toks.next().ok_or_else(|| err(line, "missing name"))?.to_string();
    let opts = toks
        .map(|t| {
            t.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| err(line, format!("expected key=value, got '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    Ok((name, opts))
}

fn only<'a>(opts: &'a [(String, String)], key: &str, line: usize) -> Result<&'a str, String> {
    match opts {
        [(k, v)] if k == key => Ok(v),
        _ => Err(err(line, format!("expected exactly '{key}=...'"))),
    }
}

pub fn parse(text: &str) -> Result<ScenarioSpec, String> {
    let mut s = ScenarioSpec::default();
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
            "subjects" => s.n_subjects = num(value, line, "subject count")?,
            "trials" => s.n_trials = num(value, line, "trial count")?,
            "intercept" => s.intercept = num(value, line, "intercept")?,
            "sigma" => s.sigma = num(value, line, "sigma")?,
            "rho" => s.rho = num(value, line, "rho")?,
            "subject_sd" => s.subject_intercept_sd = num(value, line, "subject_sd")?,
            "seed" => s.seed = num(value, line, "seed")?,
            "trend" => {
                let (kind, opts) = named(value, line)?;
                s.trend = match kind.as_str() {
                    "flat" => TrendKind::Flat,
                    "linear" => TrendKind::Linear,
                    "undulating" => TrendKind::Undulating,
                    "spiky" => TrendKind::Spiky,
                    _ => return Err(err(line, format!("unknown trend '{kind}'"))),
                };
                s.trend_amplitude = if opts.is_empty() { 0.0 } else { num(only(&opts, "amplitude", line)?, line, "amplitude")? };
            }
            "factor" => {
                let (name, opts) = named(value, line)?;
                let mut levels = Vec::new();
                let mut effects = Vec::new();
                for (k, v) in &opts {
                    match k.as_str() {
                        "levels" => levels = v.split(',').map(|l| l.to_string()).collect(),
                        "effects" => {
                            effects = v.split(',').map(|e| num(e, line, "effect")).collect::<Result<_, _>>()?
                        }
                        _ => return Err(err(line, format!("unknown factor option '{k}'"))),
                    }
                }
                s.fixed_effects.push(FixedEffect { name, kind: FixedKind::Factor { levels, effects } });
            }
            "linear" => {
                let (name, opts) = named(value, line)?;
                let coef = num(only(&opts, "coef", line)?, line, "coef")?;
                s.fixed_effects.push(FixedEffect { name, kind: FixedKind::Linear { coef } });
            }
            "sine" => {
                let (name, opts) = named(value, line)?;
                let amplitude = num(only(&opts, "amplitude", line)?, line, "amplitude")?;
                s.fixed_effects.push(FixedEffect { name, kind: FixedKind::Sine { amplitude } });
            }
            other => return Err(err(line, format!("unknown key '{other}'"))),
        }
    }
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}
