//! Output files: CSV tables for plots and analysis, JSON for manifests
//! and validation reports. Numbers are written with Rust's shortest
//! round-trip float formatting, so outputs are byte-stable across runs
//! and platforms.

use anyhow::{Context, Result};
use interbank_core::experiments::{ConvergenceRow, ScenarioSweep};
use interbank_core::risk::{Estimate, LossHistogram, RiskReport};
use interbank_core::sim::PathTrajectory;
use interbank_core::MarketParams;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Model parameters as they appear in manifests.
#[derive(Debug, Serialize)]
pub struct ParamsJson {
    pub a: f64,
    pub a0: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub q: f64,
    pub q0: f64,
    pub eps: f64,
    pub eps0: f64,
    pub c: f64,
    pub c0: f64,
    pub sigma: f64,
    pub sigma0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "D")]
    pub threshold: f64,
    pub x0_init: f64,
    pub xi_init: f64,
}

impl From<&MarketParams> for ParamsJson {
    fn from(p: &MarketParams) -> Self {
        ParamsJson {
            a: p.a,
            a0: p.a0,
            f: p.f,
            g: p.g,
            q: p.q,
            q0: p.q0,
            eps: p.eps,
            eps0: p.eps0,
            c: p.c,
            c0: p.c0,
            sigma: p.sigma,
            sigma0: p.sigma0,
            horizon: p.horizon,
            threshold: p.threshold,
            x0_init: p.x0_init,
            xi_init: p.xi_init,
        }
    }
}

/// Everything needed to reproduce a run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact_version: &'static str,
    pub subcommand: String,
    pub params: ParamsJson,
    pub seed: Option<u64>,
    pub mode: String,
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_minors: usize,
    pub riccati_steps: usize,
    pub workers: usize,
    pub scenario_crn: bool,
    pub outputs: Vec<String>,
    pub duration_ms: u128,
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_file(&path, &text)?;
    Ok(path)
}

fn push_opt(line: &mut String, e: Option<Estimate>) {
    match e {
        Some(e) => {
            let _ = write!(line, ",{},{}", e.value, e.se);
        }
        None => line.push_str(",,"),
    }
}

pub const RISK_HEADER: &str = "param,value,p_0,se_p_0,p_i,se_p_i,p_i_MS,se_p_i_MS,\
p_i_MD,se_p_i_MD,p_SE,se_p_SE,p_SE_MS,se_p_SE_MS,p_SE_MD,se_p_SE_MD,\
p_i_nomajor,se_p_i_nomajor,p_SE_nomajor,se_p_SE_nomajor";

/// One risk CSV row. `with_conditionals` is false for scenarios without a
/// major bank (G = 0), where conditioning on the major is meaningless.
pub fn risk_row(
    param: &str,
    value: f64,
    r: &RiskReport,
    no_major: Option<&RiskReport>,
    with_conditionals: bool,
) -> String {
    let mut line = format!("{param},{value}");
    let _ = write!(line, ",{},{}", r.p0.value, r.p0.se);
    let _ = write!(line, ",{},{}", r.pi.value, r.pi.se);
    let cond = |e: Option<Estimate>| if with_conditionals { e } else { None };
    push_opt(&mut line, cond(r.pi_given_ms));
    push_opt(&mut line, cond(r.pi_given_md));
    let _ = write!(line, ",{},{}", r.p_se.value, r.p_se.se);
    push_opt(&mut line, cond(r.p_se_given_ms));
    push_opt(&mut line, cond(r.p_se_given_md));
    match no_major {
        Some(b) => {
            let _ = write!(line, ",{},{}", b.pi.value, b.pi.se);
            let _ = write!(line, ",{},{}", b.p_se.value, b.p_se.se);
        }
        None => line.push_str(",,,,"),
    }
    line
}

pub fn sweep_csv(sweep: &ScenarioSweep) -> String {
    let mut out = String::from(RISK_HEADER);
    out.push('\n');
    for row in &sweep.rows {
        let with_cond = row.params.g > 0.0;
        out.push_str(&risk_row(
            sweep.parameter,
            row.value,
            &row.report,
            row.no_major_report.as_ref(),
            with_cond,
        ));
        out.push('\n');
    }
    out
}

/// Long-format loss histogram: variant,k,mass. Variants without any path
/// in their conditioning set are omitted.
pub fn loss_csv(h: &LossHistogram) -> String {
    let mut out = String::from("variant,k,mass\n");
    let mut emit = |name: &str, masses: &[f64]| {
        for (k, m) in masses.iter().enumerate() {
            let _ = writeln!(out, "{name},{k},{m}");
        }
    };
    emit("total", &h.total);
    if let Some(v) = &h.given_major_default {
        emit("major_default", v);
    }
    if let Some(v) = &h.given_major_survival {
        emit("major_survival", v);
    }
    out
}

/// Gain paths: t, minor gain, major gain, and the matrix-oracle check
/// column when supplied.
pub fn riccati_csv(grid: &[f64], phi: &[f64], phi0: &[f64], oracle: Option<&[f64]>) -> String {
    let mut out = String::from("t,phi,phi0,phi0_oracle\n");
    for (k, &t) in grid.iter().enumerate() {
        match oracle {
            Some(o) => {
                let _ = writeln!(out, "{t},{},{},{}", phi[k], phi0[k], o[k]);
            }
            None => {
                let _ = writeln!(out, "{t},{},{},", phi[k], phi0[k]);
            }
        }
    }
    out
}

/// Long-format state trajectories: path,series,t,x.
pub fn trajectories_csv(trajs: &[&PathTrajectory], dt: f64) -> String {
    let mut out = String::from("path,series,t,x\n");
    for t in trajs {
        let mut emit = |name: &str, series: &[f64]| {
            for (k, &x) in series.iter().enumerate() {
                let _ = writeln!(out, "{},{name},{},{x}", t.path, k as f64 * dt);
            }
        };
        emit("major", &t.major);
        for (i, m) in t.minors.iter().enumerate() {
            emit(&format!("minor{i}"), m);
        }
        emit("market", &t.market);
        if let Some(mf) = &t.mean_field {
            emit("mean_field", mf);
        }
    }
    out
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("n_minors,median_sup_avg,median_sup_market\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n_minors, r.median_sup_avg, r.median_sup_market);
    }
    out
}

/// Paired average/mean-field trajectories per population size:
/// n_minors,series,t,x.
pub fn paired_csv(rows: &[ConvergenceRow], dt: f64) -> String {
    let mut out = String::from("n_minors,series,t,x\n");
    for r in rows {
        if let Some(t) = &r.designated {
            let mut emit = |name: &str, series: &[f64]| {
                for (k, &x) in series.iter().enumerate() {
                    let _ = writeln!(out, "{},{name},{},{x}", r.n_minors, k as f64 * dt);
                }
            };
            emit("avg_finite", &t.avg_finite);
            emit("mean_field", &t.mean_field);
            emit("market_finite", &t.market_finite);
            emit("market_limiting", &t.market_limiting);
        }
    }
    out
}
