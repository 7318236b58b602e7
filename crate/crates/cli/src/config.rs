//! Flat `key=value` configuration files.
//!
//! Every key is optional and overrides the baseline defaults; unknown keys
//! are rejected so typos cannot silently fall back to defaults. `#` starts
//! a comment; blank lines are ignored. List-valued keys take
//! comma-separated entries.

use anyhow::{anyhow, bail, Context, Result};
use interbank_core::MarketParams;
use std::path::Path;

/// A parsed configuration: model parameters plus sweep lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub params: MarketParams,
    /// G values for `sweep-g` (defaults to 0.1..=0.9).
    pub g_values: Vec<f64>,
    /// a values for `sweep-a` (defaults to 1..=10).
    pub a_values: Vec<f64>,
    /// Population sizes for `converge` (defaults to [10, 100]).
    pub n_list: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            params: MarketParams::default(),
            g_values: (1..=9).map(|k| k as f64 / 10.0).collect(),
            a_values: (1..=10).map(|k| k as f64).collect(),
            n_list: vec![10, 100],
        }
    }
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse(&text).with_context(|| format!("in config file {}", path.display()))
}

pub fn parse(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let p = &mut cfg.params;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got {raw:?}", lineno + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| anyhow!("line {}: {key} expects a number, got {value:?}", lineno + 1))
        };
        let float_list = || -> Result<Vec<f64>> {
            value
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| anyhow!("line {}: {key} expects comma-separated numbers", lineno + 1))
        };
        match key {
            "a" => p.a = num()?,
            "a0" => p.a0 = num()?,
            "F" => p.f = num()?,
            "G" => p.g = num()?,
            "q" => p.q = num()?,
            "q0" => p.q0 = num()?,
            "eps" => p.eps = num()?,
            "eps0" => p.eps0 = num()?,
            "c" => p.c = num()?,
            "c0" => p.c0 = num()?,
            "sigma" => p.sigma = num()?,
            "sigma0" => p.sigma0 = num()?,
            "T" => p.horizon = num()?,
            "D" => p.threshold = num()?,
            "x0_init" => p.x0_init = num()?,
            "xi_init" => p.xi_init = num()?,
            "g_values" => cfg.g_values = float_list()?,
            "a_values" => cfg.a_values = float_list()?,
            "n_list" => {
                cfg.n_list = value
                    .split(',')
                    .map(|v| v.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        anyhow!("line {}: n_list expects comma-separated integers", lineno + 1)
                    })?
            }
            other => bail!("line {}: unknown configuration key {other:?}", lineno + 1),
        }
    }
    Ok(cfg)
}
