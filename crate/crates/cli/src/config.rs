//! Flat `key = value` run configuration files.
//!
//! Keys mirror the fields of [`RunConfig`]. Blank lines and lines starting
//! with `#` are ignored.

use std::path::Path;

use bayesqp::driver::{HyperSetting, IterateRule, RunConfig};

use crate::Failure;

/// Default lengthscale when hyperparameters are frozen without one given.
pub const DEFAULT_FROZEN_LENGTHSCALE: f64 = 0.1;

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value.parse().map_err(|_| Failure::Usage(format!("config key `{key}`: cannot parse `{value}`")))
}

fn parse_hyper(value: &str, current: &HyperSetting) -> Result<HyperSetting, Failure> {
    match value {
        "learn" => Ok(HyperSetting::Learn),
        "frozen" => Ok(match current {
            HyperSetting::Frozen { .. } => current.clone(),
            HyperSetting::Learn => HyperSetting::Frozen { lengthscale: DEFAULT_FROZEN_LENGTHSCALE, output_scale: 1.0 },
        }),
        other => Err(Failure::Usage(format!("hyper must be `learn` or `frozen`, got `{other}`"))),
    }
}

fn frozen_parts(config: &RunConfig) -> (f64, f64) {
    match config.hyper {
        HyperSetting::Frozen { lengthscale, output_scale } => (lengthscale, output_scale),
        HyperSetting::Learn => (DEFAULT_FROZEN_LENGTHSCALE, 1.0),
    }
}

/// Applies one `key = value` setting.
pub fn apply(config: &mut RunConfig, key: &str, value: &str) -> Result<(), Failure> {
    match key {
        "budget" => config.budget = parse(key, value)?,
        "subsamples" => {
            config.subsamples = if value == "auto" { None } else { Some(parse(key, value)?) };
        }
        "ls_budget" => config.ls_budget = parse(key, value)?,
        "ls_candidates" => config.ls_candidates = parse(key, value)?,
        "ball_radius" => config.ball_radius = parse(key, value)?,
        "delta_f" => config.delta_f = parse(key, value)?,
        "delta_c" => config.delta_c = parse(key, value)?,
        "delta_f_infeasible" => config.delta_f_infeasible = parse(key, value)?,
        "slack_penalty" => config.slack_penalty = parse(key, value)?,
        "clip_eps" => config.clip_eps = parse(key, value)?,
        "trust_bound" => {
            config.trust_bound = if value == "none" { None } else { Some(parse(key, value)?) };
        }
        "box_constrained_steps" => config.box_constrained_steps = parse(key, value)?,
        "adaptive_trust" => config.adaptive_trust = parse(key, value)?,
        "hyper" => config.hyper = parse_hyper(value, &config.hyper)?,
        "lengthscale" => {
            let (_, output_scale) = frozen_parts(config);
            config.hyper = HyperSetting::Frozen { lengthscale: parse(key, value)?, output_scale };
        }
        "output_scale" => {
            let (lengthscale, _) = frozen_parts(config);
            config.hyper = HyperSetting::Frozen { lengthscale, output_scale: parse(key, value)? };
        }
        "noise_variance" => config.noise_variance = parse(key, value)?,
        "iterate_rule" => {
            config.iterate_rule = match value {
                "keep-best" => IterateRule::KeepBest,
                "line-search-only" => IterateRule::LineSearchOnly,
                other => {
                    return Err(Failure::Usage(format!(
                        "iterate_rule must be `keep-best` or `line-search-only`, got `{other}`"
                    )))
                }
            }
        }
        "seed" => config.seed = parse(key, value)?,
        other => return Err(Failure::Usage(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

pub fn apply_text(config: &mut RunConfig, text: &str) -> Result<(), Failure> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("config line {}: expected `key = value`", lineno + 1)))?;
        apply(config, key.trim(), value.trim())?;
    }
    Ok(())
}

pub fn apply_file(config: &mut RunConfig, path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    apply_text(config, &text)
}
