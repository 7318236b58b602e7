//! Path-parallel execution of the core simulators.
//!
//! Paths are split into fixed-size chunks regardless of the worker count;
//! chunks run on a rayon pool and are merged back in path order, so the
//! resulting ensemble is byte-identical to a serial run and independent of
//! scheduling and `--workers`.

use std::ops::Range;

use interbank_core::experiments::SimRunner;
use interbank_core::riccati::{RiccatiSolution, StrategyMode};
use interbank_core::sim::{
    self, PairedDistance, PairedTrajectory, PathEnsemble, RngPolicy, SimGrid, SimOptions,
};
use interbank_core::{MarketParams, Result};
use rayon::prelude::*;

/// Paths per work unit. Fixed so output does not depend on worker count.
const CHUNK: u64 = 512;

#[derive(Debug, Clone, Copy, Default)]
pub struct ParallelRunner;

fn chunks(range: Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        out.push(start..end);
        start = end;
    }
    out
}

fn merge_in_order(parts: Vec<Result<PathEnsemble>>) -> Result<PathEnsemble> {
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("at least one chunk")?;
    for part in iter {
        acc = acc.merge(part?)?;
    }
    Ok(acc)
}

impl SimRunner for ParallelRunner {
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
        if n_paths == 0 {
            return sim::simulate_finite(p, rs, n_minors, grid, 0, policy, mode, opts);
        }
        let parts: Vec<Result<PathEnsemble>> = chunks(0..n_paths as u64)
            .into_par_iter()
            .map(|r| sim::simulate_finite_range(p, rs, n_minors, grid, r, policy, mode, opts))
            .collect();
        merge_in_order(parts)
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
        if n_paths == 0 {
            return sim::simulate_limiting(p, rs, n_reps, grid, 0, policy, mode, opts);
        }
        let parts: Vec<Result<PathEnsemble>> = chunks(0..n_paths as u64)
            .into_par_iter()
            .map(|r| sim::simulate_limiting_range(p, rs, n_reps, grid, r, policy, mode, opts))
            .collect();
        merge_in_order(parts)
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
        let parts: Vec<Result<(Vec<PairedDistance>, Vec<PairedTrajectory>)>> = chunks(paths)
            .into_par_iter()
            .map(|r| {
                sim::simulate_paired(p, rs, n_minors, grid, r, policy, mode, retain_trajectories)
            })
            .collect();
        let mut dists = Vec::new();
        let mut trajs = Vec::new();
        for part in parts {
            let (mut d, mut t) = part?;
            dists.append(&mut d);
            trajs.append(&mut t);
        }
        Ok((dists, trajs))
    }
}
