//! Default-probability and systemic-risk estimators over path ensembles.
//!
//! All quantities are first-passage frequencies: a bank defaults on a path
//! when its running minimum reaches the threshold `D`, and a systemic event
//! occurs when the market state does. Conditional variants split the
//! ensemble on whether the major bank defaulted.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::sim::{EnsembleKind, PathEnsemble};

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Half-width of the 95% normal-approximation confidence interval.
    pub fn ci95_halfwidth(&self) -> f64 {
        1.959_963_984_540_054 * self.se
    }
}

/// True iff the path's running minimum reached the default threshold.
/// Boundary equality counts as a default.
#[inline]
pub fn path_default_indicator(min_over_time: f64, threshold: f64) -> bool {
    min_over_time <= threshold
}

fn binomial_estimate(successes: usize, n: usize) -> Estimate {
    let p = successes as f64 / n as f64;
    Estimate {
        value: p,
        se: math::sqrt(p * (1.0 - p) / n as f64),
    }
}

/// Mean and standard error of a sample of per-path statistics.
pub fn sample_estimate(sample: &[f64]) -> Estimate {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    if sample.len() < 2 {
        return Estimate { value: mean, se: 0.0 };
    }
    let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Estimate {
        value: mean,
        se: math::sqrt(var / n),
    }
}

/// Estimated default and systemic-risk probabilities for one scenario.
///
/// Conditional fields are `None` when their conditioning set is empty;
/// they are never reported as 0/0.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub threshold: f64,
    pub n_paths: usize,
    pub n_minors: usize,
    /// Number of paths on which the major bank defaulted.
    pub n_major_default: usize,
    /// Per-path fraction of defaulted minor banks.
    pub minor_fractions: Vec<f64>,
    /// Major-bank default probability.
    pub p0: Estimate,
    /// Representative-minor default probability (ensemble mean of
    /// per-path default fractions).
    pub pi: Estimate,
    /// Systemic-event probability (market state reaches the threshold).
    pub p_se: Estimate,
    /// Minor default probability given the major defaulted / survived.
    pub pi_given_md: Option<Estimate>,
    pub pi_given_ms: Option<Estimate>,
    /// Systemic-event probability given the major defaulted / survived.
    pub p_se_given_md: Option<Estimate>,
    pub p_se_given_ms: Option<Estimate>,
}

/// Computes the full risk report from per-path minima.
pub fn estimate_risk_report(e: &PathEnsemble, threshold: f64) -> Result<RiskReport> {
    if e.n_paths == 0 {
        return Err(Error::UnsupportedInput(String::from("empty ensemble")));
    }
    let n = e.n_paths;
    let major_def: Vec<bool> = e
        .major_min
        .iter()
        .map(|&m| path_default_indicator(m, threshold))
        .collect();
    let se_def: Vec<bool> = e
        .market_min
        .iter()
        .map(|&m| path_default_indicator(m, threshold))
        .collect();
    let fractions: Vec<f64> = (0..n)
        .map(|p| {
            let mins = e.minor_min_of(p);
            let d = mins
                .iter()
                .filter(|&&m| path_default_indicator(m, threshold))
                .count();
            d as f64 / mins.len() as f64
        })
        .collect();

    let n_md = major_def.iter().filter(|&&d| d).count();
    let p0 = binomial_estimate(n_md, n);
    let pi = sample_estimate(&fractions);
    let p_se = binomial_estimate(se_def.iter().filter(|&&d| d).count(), n);

    let subset = |want: bool| -> Vec<usize> {
        (0..n).filter(|&p| major_def[p] == want).collect()
    };
    let md_paths = subset(true);
    let ms_paths = subset(false);

    let cond_mean = |paths: &[usize]| -> Option<Estimate> {
        if paths.is_empty() {
            None
        } else {
            let sub: Vec<f64> = paths.iter().map(|&p| fractions[p]).collect();
            Some(sample_estimate(&sub))
        }
    };
    let cond_binom = |paths: &[usize]| -> Option<Estimate> {
        if paths.is_empty() {
            None
        } else {
            let k = paths.iter().filter(|&&p| se_def[p]).count();
            Some(binomial_estimate(k, paths.len()))
        }
    };

    let pi_given_md = cond_mean(&md_paths);
    let pi_given_ms = cond_mean(&ms_paths);
    let p_se_given_md = cond_binom(&md_paths);
    let p_se_given_ms = cond_binom(&ms_paths);
    Ok(RiskReport {
        threshold,
        n_paths: n,
        n_minors: e.n_minors,
        n_major_default: n_md,
        minor_fractions: fractions,
        p0,
        pi,
        p_se,
        pi_given_md,
        pi_given_ms,
        p_se_given_md,
        p_se_given_ms,
    })
}

/// Law-of-total-probability residuals for the minor-default and
/// systemic-event probabilities:
/// `p - [(p|MD - p|MS) * p0 + p|MS]`. Both vanish to rounding because all
/// terms are computed from the same counts. `None` when a conditional is
/// undefined.
pub fn total_probability_residual(r: &RiskReport) -> (Option<f64>, Option<f64>) {
    let combine = |total: f64, md: Option<Estimate>, ms: Option<Estimate>| -> Option<f64> {
        match (md, ms) {
            (Some(md), Some(ms)) => {
                Some(total - ((md.value - ms.value) * r.p0.value + ms.value))
            }
            _ => None,
        }
    };
    (
        combine(r.pi.value, r.pi_given_md, r.pi_given_ms),
        combine(r.p_se.value, r.p_se_given_md, r.p_se_given_ms),
    )
}

/// Distribution of the number of defaulted minor banks per path.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistogram {
    pub n_minors: usize,
    /// Mass at exactly k defaults, k = 0..=n_minors, over all paths.
    pub total: Vec<f64>,
    /// Same, restricted to paths where the major bank defaulted.
    /// `None` when no such path exists.
    pub given_major_default: Option<Vec<f64>>,
    /// Restricted to paths where the major bank survived.
    pub given_major_survival: Option<Vec<f64>>,
    /// Empirical major default probability used for recombination.
    pub p0: f64,
}

/// Tallies the per-path number of defaulted minors into histograms.
/// Requires a finite-population ensemble: the limiting simulator's
/// representative minors do not constitute the population of size N.
pub fn loss_distribution(e: &PathEnsemble, threshold: f64) -> Result<LossHistogram> {
    if e.kind != EnsembleKind::Finite {
        return Err(Error::UnsupportedInput(String::from(
            "loss distribution requires a finite-population ensemble",
        )));
    }
    if e.n_paths == 0 {
        return Err(Error::UnsupportedInput(String::from("empty ensemble")));
    }
    let n_bins = e.n_minors + 1;
    let mut counts_md = vec![0u64; n_bins];
    let mut counts_ms = vec![0u64; n_bins];
    let mut n_md = 0usize;
    for p in 0..e.n_paths {
        let k = e
            .minor_min_of(p)
            .iter()
            .filter(|&&m| path_default_indicator(m, threshold))
            .count();
        if path_default_indicator(e.major_min[p], threshold) {
            counts_md[k] += 1;
            n_md += 1;
        } else {
            counts_ms[k] += 1;
        }
    }
    let n_ms = e.n_paths - n_md;
    let normalize = |counts: &[u64], n: usize| -> Option<Vec<f64>> {
        (n > 0).then(|| counts.iter().map(|&c| c as f64 / n as f64).collect())
    };
    let total: Vec<f64> = (0..n_bins)
        .map(|k| (counts_md[k] + counts_ms[k]) as f64 / e.n_paths as f64)
        .collect();
    Ok(LossHistogram {
        n_minors: e.n_minors,
        total,
        given_major_default: normalize(&counts_md, n_md),
        given_major_survival: normalize(&counts_ms, n_ms),
        p0: n_md as f64 / e.n_paths as f64,
    })
}

impl LossHistogram {
    /// Bin-wise residual of the recombination identity
    /// `total = p0 * (MD variant) + (1 - p0) * (MS variant)`.
    /// Missing variants contribute zero mass.
    pub fn recombination_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.total.len() {
            let md = self.given_major_default.as_ref().map_or(0.0, |h| h[k]);
            let ms = self.given_major_survival.as_ref().map_or(0.0, |h| h[k]);
            let rebuilt = self.p0 * md + (1.0 - self.p0) * ms;
            worst = math::max(worst, math::abs(self.total[k] - rebuilt));
        }
        worst
    }
}
