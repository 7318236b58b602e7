//! Experiment designs: parameter sweeps under common random numbers, the
//! finite-vs-limiting convergence study, and trajectory selection for
//! figure exports.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::model::MarketParams;
use crate::riccati::{self, RiccatiSolution, StrategyMode};
use crate::risk::{self, LossHistogram, RiskReport};
use crate::sim::{
    self, PairedDistance, PairedTrajectory, PathEnsemble, PathTrajectory, RngPolicy, SimGrid,
    SimOptions,
};

/// Execution backend for path ensembles. The core crate ships a serial
/// implementation; companion crates may provide parallel runners, which
/// must produce identical ensembles (simulation is defined per path).
#[allow(clippy::too_many_arguments)]
pub trait SimRunner {
    fn finite(
        &self,
        p: &MarketParams,
        rs: &RiccatiSolution,
        n_minors: usize,
        grid: &SimGrid,
        n_paths: usize,
        policy: &RngPolicy,
        mode: StrategyMode,
        opts: &SimOptions,
    ) -> Result<PathEnsemble>;

    fn limiting(
        &self,
        p: &MarketParams,
        rs: &RiccatiSolution,
        n_reps: usize,
        grid: &SimGrid,
        n_paths: usize,
        policy: &RngPolicy,
        mode: StrategyMode,
        opts: &SimOptions,
    ) -> Result<PathEnsemble>;

    fn paired(
        &self,
        p: &MarketParams,
        rs: &RiccatiSolution,
        n_minors: usize,
        grid: &SimGrid,
        paths: Range<u64>,
        policy: &RngPolicy,
        mode: StrategyMode,
        retain_trajectories: usize,
    ) -> Result<(Vec<PairedDistance>, Vec<PairedTrajectory>)>;
}

/// Single-threaded reference runner.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialRunner;

impl SimRunner for SerialRunner {
    fn finite(
        &self,
        p: &MarketParams,
        rs: &RiccatiSolution,
        n_minors: usize,
        grid: &SimGrid,
        n_paths: usize,
        policy: &RngPolicy,
        mode: StrategyMode,
        opts: &SimOptions,
    ) -> Result<PathEnsemble> {
        sim::simulate_finite(p, rs, n_minors, grid, n_paths, policy, mode, opts)
    }

    fn limiting(
        &self,
        p: &MarketParams,
        rs: &RiccatiSolution,
        n_reps: usize,
        grid: &SimGrid,
        n_paths: usize,
        policy: &RngPolicy,
        mode: StrategyMode,
        opts: &SimOptions,
    ) -> Result<PathEnsemble> {
        sim::simulate_limiting(p, rs, n_reps, grid, n_paths, policy, mode, opts)
    }

    fn paired(
        &self,
        p: &MarketParams,
        rs: &RiccatiSolution,
        n_minors: usize,
        grid: &SimGrid,
        paths: Range<u64>,
        policy: &RngPolicy,
        mode: StrategyMode,
        retain_trajectories: usize,
    ) -> Result<(Vec<PairedDistance>, Vec<PairedTrajectory>)> {
        sim::simulate_paired(p, rs, n_minors, grid, paths, policy, mode, retain_trajectories)
    }
}

/// Shared Monte Carlo settings for a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_minors: usize,
    /// Steps for the backward Riccati grid.
    pub riccati_steps: usize,
    pub mode: StrategyMode,
    /// Attach a loss histogram to every row.
    pub with_loss: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n_paths: 50_000,
            n_steps: 100,
            n_minors: 10,
            riccati_steps: 1000,
            mode: StrategyMode::DerivationConsistent,
            with_loss: false,
        }
    }
}

/// One scenario of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Swept parameter value (G or a).
    pub value: f64,
    pub params: MarketParams,
    pub report: RiskReport,
    /// For the friction sweep: the same scenario without a major bank
    /// (G = 0, F = 1, same a).
    pub no_major_report: Option<RiskReport>,
    pub loss: Option<LossHistogram>,
}

/// A completed sweep over one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSweep {
    /// Name of the swept parameter: "G" or "a".
    pub parameter: &'static str,
    pub rows: Vec<SweepRow>,
    pub policy: RngPolicy,
    pub settings: SweepSettings,
}

fn simulate_row(
    runner: &dyn SimRunner,
    p: &MarketParams,
    settings: &SweepSettings,
    policy: &RngPolicy,
    with_loss: bool,
) -> Result<(RiskReport, Option<LossHistogram>)> {
    let rs = riccati::solve(p, settings.mode, settings.riccati_steps)?;
    let grid = SimGrid::new(p.horizon, settings.n_steps);
    let e = runner.finite(
        p,
        &rs,
        settings.n_minors,
        &grid,
        settings.n_paths,
        policy,
        settings.mode,
        &SimOptions::default(),
    )?;
    let report = risk::estimate_risk_report(&e, p.threshold)?;
    let loss = if with_loss {
        Some(risk::loss_distribution(&e, p.threshold)?)
    } else {
        None
    };
    Ok((report, loss))
}

/// Sweeps the major-bank size G, holding `a` fixed and re-deriving
/// `(a0, F)` per row. A no-major baseline row (G = 0, F = 1) is prepended
/// when absent. Under common random numbers every row reuses the same
/// noise realizations, so differences between rows are purely parametric.
pub fn sweep_size_g(
    runner: &dyn SimRunner,
    base: &MarketParams,
    values: &[f64],
    settings: &SweepSettings,
    policy: &RngPolicy,
) -> Result<ScenarioSweep> {
    let mut gs: Vec<f64> = Vec::with_capacity(values.len() + 1);
    if !values.contains(&0.0) {
        gs.push(0.0);
    }
    gs.extend_from_slice(values);

    let mut rows = Vec::with_capacity(gs.len());
    for (i, &g) in gs.iter().enumerate() {
        let p = base.with_size(base.a, g)?.validated()?;
        let row_policy = policy.for_scenario(i as u64);
        let (report, loss) = simulate_row(runner, &p, settings, &row_policy, settings.with_loss)?;
        rows.push(SweepRow {
            value: g,
            params: p,
            report,
            no_major_report: None,
            loss,
        });
    }
    Ok(ScenarioSweep {
        parameter: "G",
        rows,
        policy: *policy,
        settings: *settings,
    })
}

/// Sweeps the mean-reversion rate `a` at F = G = 1/2 (so a0 = a/2), and
/// simulates each scenario a second time without the major bank
/// (G = 0, F = 1, same a) for the side-by-side comparison.
pub fn sweep_friction_a(
    runner: &dyn SimRunner,
    base: &MarketParams,
    values: &[f64],
    settings: &SweepSettings,
    policy: &RngPolicy,
) -> Result<ScenarioSweep> {
    let mut rows = Vec::with_capacity(values.len());
    for (i, &a) in values.iter().enumerate() {
        let with_major = base.with_size(a, 0.5)?.validated()?;
        let no_major = base.with_size(a, 0.0)?.validated()?;
        let row_policy = policy.for_scenario(i as u64);
        let (report, loss) =
            simulate_row(runner, &with_major, settings, &row_policy, settings.with_loss)?;
        let (baseline, _) = simulate_row(runner, &no_major, settings, &row_policy, false)?;
        rows.push(SweepRow {
            value: a,
            params: with_major,
            report,
            no_major_report: Some(baseline),
            loss,
        });
    }
    Ok(ScenarioSweep {
        parameter: "a",
        rows,
        policy: *policy,
        settings: *settings,
    })
}

/// Median of a sample (average of the central pair for even sizes).
pub fn median(sample: &[f64]) -> f64 {
    assert!(!sample.is_empty());
    let mut v: Vec<f64> = sample.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Distances between the finite and limiting systems for one population
/// size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_minors: usize,
    /// Ensemble median of `sup_t |x^(N) - xbar|`.
    pub median_sup_avg: f64,
    /// Ensemble median of the sup market-state difference.
    pub median_sup_market: f64,
    /// Paired trajectories of the designated path (path 0).
    pub designated: Option<PairedTrajectory>,
}

/// Runs the paired finite/limiting simulation for each population size in
/// `n_list` with a shared major-bank noise stream, reporting median
/// sup-distances and the paired trajectory of path 0.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    runner: &dyn SimRunner,
    p: &MarketParams,
    n_list: &[usize],
    n_paths: usize,
    n_steps: usize,
    riccati_steps: usize,
    mode: StrategyMode,
    policy: &RngPolicy,
) -> Result<Vec<ConvergenceRow>> {
    p.validate()?;
    let rs = riccati::solve(p, mode, riccati_steps)?;
    let grid = SimGrid::new(p.horizon, n_steps);
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (dists, mut trajs) =
            runner.paired(p, &rs, n, &grid, 0..n_paths as u64, policy, mode, 1)?;
        let sup_avg: Vec<f64> = dists.iter().map(|d| d.sup_avg_diff).collect();
        let sup_market: Vec<f64> = dists.iter().map(|d| d.sup_market_diff).collect();
        rows.push(ConvergenceRow {
            n_minors: n,
            median_sup_avg: median(&sup_avg),
            median_sup_market: median(&sup_market),
            designated: if trajs.is_empty() {
                None
            } else {
                Some(trajs.remove(0))
            },
        });
    }
    Ok(rows)
}

/// Conditioning applied when picking a figure trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MajorOutcome {
    Any,
    Defaulted,
    Survived,
}

/// Picks the first retained trajectory whose major-bank path matches the
/// requested default outcome. Panels conditioned on opposite outcomes are
/// produced by filtering one common-seed ensemble, so shared banks keep
/// identical noise across panels.
pub fn select_trajectory(
    e: &PathEnsemble,
    threshold: f64,
    outcome: MajorOutcome,
) -> Result<&PathTrajectory> {
    if e.trajectories.is_empty() {
        return Err(Error::NoMatchingPath(
            "no trajectories were retained; rerun with retain_trajectories > 0".into(),
        ));
    }
    for t in &e.trajectories {
        let defaulted = risk::path_default_indicator(
            e.major_min[(t.path - e.path_offset) as usize],
            threshold,
        );
        let keep = match outcome {
            MajorOutcome::Any => true,
            MajorOutcome::Defaulted => defaulted,
            MajorOutcome::Survived => !defaulted,
        };
        if keep {
            return Ok(t);
        }
    }
    Err(Error::NoMatchingPath(format!(
        "none of the {} retained paths has the requested major-bank outcome; \
         retain more trajectories or change the seed",
        e.trajectories.len()
    )))
}
