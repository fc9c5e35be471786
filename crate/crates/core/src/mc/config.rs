//! Plain-text study files: one `key = value` per line, `#` starts a comment.
//!
//! ```text
//! design = S1          # or custom, with blocks = 3,2,1
//! p = 1
//! T = 500, 1000, 2000
//! H = 5
//! kind = gfevd, fevd
//! replications = 200
//! seed = 42
//! alpha = 0.9
//! grid = 2,3,4,5,6,7   # constants c in c log T / m; omit for the defaults
//! # lambda = logT      # fixed penalty instead: logT, logT/m or a number
//! ```

use crate::decomposition::DecompositionKind;
use crate::error::{Error, Result};
use crate::sparsify::LambdaRule;
use crate::tuner::LambdaGrid;

use super::dgp::{DgpName, DgpSpec, ErrorDist};
use super::study::{FixedPenalty, PenaltyChoice, StudyConfig};

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("study config line {line}: {msg}"))
}

fn list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| bad(line, format!("cannot parse {v:?} in {key}"))))
        .collect()
}

fn scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| bad(line, format!("cannot parse {value:?} for {key}")))
}

/// Parses a fixed penalty: `logT`, `logT/m`, or a number.
pub fn parse_fixed_penalty(value: &str) -> Result<FixedPenalty> {
    let v = value.trim();
    match v.to_ascii_lowercase().replace(' ', "").as_str() {
        "logt" => Ok(FixedPenalty::Rule(LambdaRule::LogT)),
        "logt/m" => Ok(FixedPenalty::Rule(LambdaRule::LogTOverM)),
        _ => v
            .parse::<f64>()
            .map(FixedPenalty::Value)
            .map_err(|_| Error::InvalidArgument(format!("penalty {v:?} is not logT, logT/m or a number"))),
    }
}

pub fn parse_study_config(text: &str) -> Result<StudyConfig> {
    let mut design = None;
    let mut p = 1usize;
    let mut blocks: Option<Vec<usize>> = None;
    let mut error_dist: Option<ErrorDist> = None;
    let mut weak_fill: Option<f64> = None;
    let mut t_lens = None;
    let mut horizons = None;
    let mut kinds = None;
    let mut replications = None;
    let mut seed = None;
    let mut alpha = None;
    let mut grid = None;
    let mut lambda = None;
    let mut hold = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| bad(line, format!("expected key = value, got {content:?}")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match key.as_str() {
            "design" | "spec" => design = Some(scalar::<DgpName>(line, &key, value)?),
            "p" => p = scalar(line, &key, value)?,
            "blocks" => blocks = Some(list(line, &key, value)?),
            "error" | "errors" => error_dist = Some(value.parse().map_err(|e| bad(line, e))?),
            "weak_fill" => weak_fill = Some(scalar(line, &key, value)?),
            "t" => t_lens = Some(list(line, &key, value)?),
            "h" => horizons = Some(list(line, &key, value)?),
            "kind" | "kinds" => kinds = Some(list::<DecompositionKind>(line, &key, value)?),
            "replications" | "reps" => replications = Some(scalar(line, &key, value)?),
            "seed" => seed = Some(scalar(line, &key, value)?),
            "alpha" => alpha = Some(scalar(line, &key, value)?),
            "grid" => grid = Some(list::<f64>(line, &key, value)?),
            "lambda" => lambda = Some(parse_fixed_penalty(value).map_err(|e| bad(line, e))?),
            "hold_fixed" => hold = scalar(line, &key, value)?,
            other => return Err(bad(line, format!("unknown key {other:?}"))),
        }
    }

    let name = design.ok_or_else(|| Error::InvalidArgument("study config needs a design".into()))?;
    let mut spec = match (name, blocks) {
        (DgpName::Custom, Some(b)) => DgpSpec::custom(b, p, error_dist.unwrap_or(ErrorDist::Gaussian), weak_fill)?,
        (DgpName::Custom, None) => return Err(Error::InvalidArgument("custom design needs blocks".into())),
        (_, Some(_)) => return Err(Error::InvalidArgument("blocks are only allowed with design = custom".into())),
        (named, None) => {
            let mut s = DgpSpec::preset(named, p)?;
            if let Some(e) = error_dist {
                s.error_dist = e;
            }
            if weak_fill.is_some() {
                s.weak_fill = weak_fill;
            }
            s
        }
    };
    spec.validate()?;
    let mut cfg = StudyConfig::new(spec.clone());
    if let Some(v) = t_lens {
        cfg.t_lens = v;
    }
    if let Some(v) = horizons {
        cfg.horizons = v;
    }
    if let Some(v) = kinds {
        cfg.kinds = v;
    }
    if let Some(v) = replications {
        cfg.replications = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
        spec.seed = v;
        cfg.spec = spec;
    }
    if let Some(v) = alpha {
        cfg.train_frac = v;
    }
    cfg.hold_model_fixed = hold;
    cfg.penalty = match (grid, lambda) {
        (Some(_), Some(_)) => return Err(Error::InvalidArgument("give either grid or lambda, not both".into())),
        (Some(g), None) => PenaltyChoice::Tuned(Some(LambdaGrid::Constants(g))),
        (None, Some(l)) => PenaltyChoice::Fixed(l),
        (None, None) => PenaltyChoice::Tuned(None),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl std::str::FromStr for StudyConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_study_config(s)
    }
}
