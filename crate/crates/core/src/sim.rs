//! Euler-Maruyama simulation of the finite-population and limiting
//! interbank markets under the equilibrium feedback strategies.
//!
//! Randomness is fully deterministic: every (path, bank) pair owns an
//! independent cipher substream derived from the master seed, so ensembles
//! are bit-identical across runs, execution orders, and worker counts, and
//! common random numbers across scenarios come for free.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::MarketParams;
use crate::riccati::{major_control, meanfield_drift, minor_control, RiccatiSolution, StrategyMode};

/// Uniform time grid for simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub n_steps: usize,
    pub horizon: f64,
}

impl SimGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Self {
        assert!(n_steps >= 1, "n_steps must be at least 1");
        assert!(horizon > 0.0, "horizon must be positive");
        SimGrid { n_steps, horizon }
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        crate::riccati::uniform_grid(self.horizon, self.n_steps)
    }
}

/// Deterministic stream-derivation policy for parallel-safe Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngPolicy {
    pub master_seed: u64,
    /// Reuse identical noise realizations across scenario rows.
    pub scenario_crn: bool,
}

/// Bank slot 0 is the major bank; minor bank `i` uses slot `i + 1`.
const BANK_BITS: u32 = 24;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        RngPolicy {
            master_seed,
            scenario_crn: true,
        }
    }

    /// The generator owned by one (path, bank) pair. Identical inputs give
    /// bit-identical increments regardless of scheduling.
    pub fn bank_rng(&self, path: u64, bank: u32) -> ChaCha12Rng {
        debug_assert!(path < 1 << (64 - BANK_BITS));
        debug_assert!((bank as u64) < 1 << BANK_BITS);
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream((path << BANK_BITS) | bank as u64);
        rng
    }

    /// Policy for one scenario row. Under common random numbers every row
    /// shares the master seed; otherwise each row gets its own.
    pub fn for_scenario(&self, row: u64) -> RngPolicy {
        if self.scenario_crn {
            *self
        } else {
            RngPolicy {
                master_seed: splitmix64(self.master_seed ^ row.wrapping_add(1).wrapping_mul(0xa076_1d64_78bd_642f)),
                scenario_crn: false,
            }
        }
    }
}

/// Which bank's strategy a perturbation applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbTarget {
    Major,
    /// Index into the minor population (0-based).
    Minor(usize),
}

/// Shape of the perturbation direction.
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    /// A deterministic bounded function of time, sampled on the grid
    /// (`n_steps + 1` values).
    Deterministic(Vec<f64>),
    /// The deviation `omega = -u*`: the target plays `(1 - delta) u*`.
    NegatedEquilibrium,
}

/// A unilateral strategy deviation `u* + delta * omega` for one bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub target: PerturbTarget,
    pub delta: f64,
    pub direction: Direction,
}

impl Perturbation {
    fn applies(&self, major: bool, minor_idx: usize) -> bool {
        match self.target {
            PerturbTarget::Major => major,
            PerturbTarget::Minor(j) => !major && minor_idx == j,
        }
    }

    #[inline]
    fn shift(&self, step: usize, equilibrium: f64) -> f64 {
        match &self.direction {
            Direction::Deterministic(omega) => self.delta * omega[step],
            Direction::NegatedEquilibrium => -self.delta * equilibrium,
        }
    }
}

/// Knobs for what a simulation retains besides per-path summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimOptions {
    /// Paths with global index below this retain full trajectories.
    pub retain_trajectories: usize,
    /// Accumulate per-path per-bank cost functionals.
    pub retain_costs: bool,
    /// Optional unilateral strategy deviation.
    pub perturbation: Option<Perturbation>,
    /// Force every control to zero (diagnostics).
    pub zero_controls: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    Finite,
    Limiting,
}

/// Full state history of one retained path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory {
    pub path: u64,
    pub major: Vec<f64>,
    /// One series per minor bank.
    pub minors: Vec<Vec<f64>>,
    pub market: Vec<f64>,
    /// Limiting simulations also carry the mean-field path.
    pub mean_field: Option<Vec<f64>>,
}

/// Realized cost functionals per path (trapezoidal running cost plus
/// terminal cost), for the major bank and each minor bank.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRecord {
    pub major: Vec<f64>,
    /// Flattened `n_paths x n_minors`.
    pub minors: Vec<f64>,
    pub n_minors: usize,
}

/// Per-path per-bank summaries for one simulated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub kind: EnsembleKind,
    pub n_paths: usize,
    pub n_minors: usize,
    pub n_steps: usize,
    pub dt: f64,
    /// Global index of the first path in this ensemble.
    pub path_offset: u64,
    /// Running minimum of the major reserve per path.
    pub major_min: Vec<f64>,
    /// Running minimum of the market state per path.
    pub market_min: Vec<f64>,
    /// Running minima of the minor reserves, flattened `n_paths x n_minors`.
    pub minor_min: Vec<f64>,
    pub trajectories: Vec<PathTrajectory>,
    pub costs: Option<CostRecord>,
}

impl PathEnsemble {
    /// Concatenates two ensembles covering adjacent path ranges.
    /// Aggregation is per-path, so merging chunks in index order
    /// reproduces the single-run ensemble exactly.
    pub fn merge(mut self, mut other: PathEnsemble) -> Result<PathEnsemble> {
        if self.kind != other.kind
            || self.n_minors != other.n_minors
            || self.n_steps != other.n_steps
            || other.path_offset != self.path_offset + self.n_paths as u64
        {
            return Err(Error::UnsupportedInput(String::from(
                "ensembles are not adjacent chunks of one scenario",
            )));
        }
        self.n_paths += other.n_paths;
        self.major_min.append(&mut other.major_min);
        self.market_min.append(&mut other.market_min);
        self.minor_min.append(&mut other.minor_min);
        self.trajectories.append(&mut other.trajectories);
        self.costs = match (self.costs.take(), other.costs.take()) {
            (Some(mut a), Some(mut b)) => {
                a.major.append(&mut b.major);
                a.minors.append(&mut b.minors);
                Some(a)
            }
            (None, None) => None,
            _ => {
                return Err(Error::UnsupportedInput(String::from(
                    "cost retention differs between chunks",
                )))
            }
        };
        Ok(self)
    }

    /// Minima of the minors on one path.
    pub fn minor_min_of(&self, path: usize) -> &[f64] {
        &self.minor_min[path * self.n_minors..(path + 1) * self.n_minors]
    }
}

/// One synchronous Euler-Maruyama update:
/// `x_next = x + (drift + control) * dt + sigma * noise`, componentwise,
/// where `noise` already has standard deviation `sqrt(dt)`.
#[inline]
pub fn euler_step(
    state: &mut [f64],
    drifts: &[f64],
    controls: &[f64],
    sigmas: &[f64],
    dt: f64,
    noise: &[f64],
) {
    for i in 0..state.len() {
        state[i] += (drifts[i] + controls[i]) * dt + sigmas[i] * noise[i];
    }
}

struct CostAccumulator {
    major: f64,
    minors: Vec<f64>,
}

impl CostAccumulator {
    fn new(n_minors: usize) -> Self {
        CostAccumulator {
            major: 0.0,
            minors: vec![0.0; n_minors],
        }
    }

    #[inline]
    fn running_major(&mut self, p: &MarketParams, u0: f64, gap: f64, w: f64, dt: f64) {
        self.major += w * dt * (0.5 * u0 * u0 - p.q0 * u0 * gap + 0.5 * p.eps0 * gap * gap);
    }

    #[inline]
    fn running_minor(&mut self, i: usize, p: &MarketParams, u: f64, gap: f64, w: f64, dt: f64) {
        self.minors[i] += w * dt * (0.5 * u * u - p.q * u * gap + 0.5 * p.eps * gap * gap);
    }

    fn terminal(&mut self, p: &MarketParams, major_gap: f64, minor_gaps: &[f64]) {
        self.major += 0.5 * p.c0 * major_gap * major_gap;
        for (i, g) in minor_gaps.iter().enumerate() {
            self.minors[i] += 0.5 * p.c * g * g;
        }
    }
}

/// Coefficient paths resampled onto the simulation grid.
struct Gains {
    phi: Vec<f64>,
    phi0: Vec<f64>,
}

fn resample_gains(rs: &RiccatiSolution, grid: &SimGrid) -> Gains {
    let times = grid.times();
    Gains {
        phi: times.iter().map(|&t| rs.phi_at(t)).collect(),
        phi0: times.iter().map(|&t| rs.phi0_at(t)).collect(),
    }
}

/// Simulates the finite-population market: one major bank and `n_minors`
/// minor banks, all applying the limiting feedback strategies with the
/// mean field replaced by the empirical average. Banks remain in the
/// system after crossing the default threshold.
#[allow(clippy::too_many_arguments)]
pub fn simulate_finite(
    p: &MarketParams,
    rs: &RiccatiSolution,
    n_minors: usize,
    grid: &SimGrid,
    n_paths: usize,
    policy: &RngPolicy,
    mode: StrategyMode,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    simulate_finite_range(p, rs, n_minors, grid, 0..n_paths as u64, policy, mode, opts)
}

/// Range variant of [`simulate_finite`] used for path-parallel execution:
/// paths are independent given the policy, so disjoint ranges can run
/// concurrently and be merged in index order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_finite_range(
    p: &MarketParams,
    rs: &RiccatiSolution,
    n_minors: usize,
    grid: &SimGrid,
    paths: Range<u64>,
    policy: &RngPolicy,
    mode: StrategyMode,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    assert!(n_minors >= 1, "n_minors must be at least 1");
    let n_paths = (paths.end - paths.start) as usize;
    let n_steps = grid.n_steps;
    let dt = grid.dt();
    let sqrt_dt = crate::math::sqrt(dt);
    let gains = resample_gains(rs, grid);

    let mut out = empty_ensemble(EnsembleKind::Finite, n_minors, n_steps, dt, paths.start, opts);
    let mut minor_gaps = vec![0.0; n_minors];

    for path in paths {
        let mut rng_major = policy.bank_rng(path, 0);
        let mut rng_minors: Vec<ChaCha12Rng> = (0..n_minors)
            .map(|i| policy.bank_rng(path, i as u32 + 1))
            .collect();

        let mut x0 = p.x0_init;
        let mut xs = vec![p.xi_init; n_minors];
        let mut major_min = x0;
        let mut minor_min = xs.clone();
        let mut market_min = f64::INFINITY;
        let mut costs = opts.retain_costs.then(|| CostAccumulator::new(n_minors));
        let retain = path < opts.retain_trajectories as u64;
        let mut traj = retain.then(|| PathTrajectory {
            path,
            major: Vec::with_capacity(n_steps + 1),
            minors: vec![Vec::with_capacity(n_steps + 1); n_minors],
            market: Vec::with_capacity(n_steps + 1),
            mean_field: None,
        });

        for step in 0..=n_steps {
            let x_avg = xs.iter().sum::<f64>() / n_minors as f64;
            let market = p.market_state(x_avg, x0);
            market_min = crate::math::min(market_min, market);
            if let Some(t) = traj.as_mut() {
                t.major.push(x0);
                for (i, series) in t.minors.iter_mut().enumerate() {
                    series.push(xs[i]);
                }
                t.market.push(market);
            }

            let phi = gains.phi[step];
            let phi0 = gains.phi0[step];
            let mut u0 = if opts.zero_controls {
                0.0
            } else {
                major_control(phi0, x_avg, x0, p, mode)
            };
            if let Some(pert) = &opts.perturbation {
                if pert.applies(true, 0) {
                    u0 += pert.shift(step, u0);
                }
            }

            let target = p.market_state(x_avg, x0);
            for (i, gap) in minor_gaps.iter_mut().enumerate() {
                *gap = target - xs[i];
            }

            if let Some(acc) = costs.as_mut() {
                let w = if step == 0 || step == n_steps { 0.5 } else { 1.0 };
                acc.running_major(p, u0, x_avg - x0, w, dt);
                for i in 0..n_minors {
                    let mut u = if opts.zero_controls {
                        0.0
                    } else {
                        minor_control(phi, x_avg, x0, xs[i], p)
                    };
                    if let Some(pert) = &opts.perturbation {
                        if pert.applies(false, i) {
                            u += pert.shift(step, u);
                        }
                    }
                    acc.running_minor(i, p, u, minor_gaps[i], w, dt);
                }
            }
            if step == n_steps {
                if let Some(acc) = costs.as_mut() {
                    acc.terminal(p, x_avg - x0, &minor_gaps);
                }
                break;
            }

            let t_next = (step + 1) as f64 * dt;
            let z0: f64 = rng_major.sample(StandardNormal);
            x0 += (p.a0 * (x_avg - x0) + u0) * dt + p.sigma0 * sqrt_dt * z0;
            if !x0.is_finite() {
                return Err(Error::NonFinite { path, time: t_next });
            }
            for i in 0..n_minors {
                let mut u = if opts.zero_controls {
                    0.0
                } else {
                    (p.q - phi) * minor_gaps[i]
                };
                if let Some(pert) = &opts.perturbation {
                    if pert.applies(false, i) {
                        u += pert.shift(step, u);
                    }
                }
                let z: f64 = rng_minors[i].sample(StandardNormal);
                xs[i] += (p.a * minor_gaps[i] + u) * dt + p.sigma * sqrt_dt * z;
                if !xs[i].is_finite() {
                    return Err(Error::NonFinite { path, time: t_next });
                }
                minor_min[i] = crate::math::min(minor_min[i], xs[i]);
            }
            major_min = crate::math::min(major_min, x0);
        }

        out.major_min.push(major_min);
        out.market_min.push(market_min);
        out.minor_min.extend_from_slice(&minor_min);
        if let Some(t) = traj {
            out.trajectories.push(t);
        }
        if let (Some(rec), Some(acc)) = (out.costs.as_mut(), costs) {
            rec.major.push(acc.major);
            rec.minors.extend_from_slice(&acc.minors);
        }
    }
    out.n_paths = n_paths;
    Ok(out)
}

/// Simulates the limiting market: the major bank and the mean field form a
/// closed subsystem driven by the major's Brownian stream only, and
/// `n_reps` representative minor banks follow independent streams around
/// the limiting market state.
#[allow(clippy::too_many_arguments)]
pub fn simulate_limiting(
    p: &MarketParams,
    rs: &RiccatiSolution,
    n_reps: usize,
    grid: &SimGrid,
    n_paths: usize,
    policy: &RngPolicy,
    mode: StrategyMode,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    simulate_limiting_range(p, rs, n_reps, grid, 0..n_paths as u64, policy, mode, opts)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_limiting_range(
    p: &MarketParams,
    rs: &RiccatiSolution,
    n_reps: usize,
    grid: &SimGrid,
    paths: Range<u64>,
    policy: &RngPolicy,
    mode: StrategyMode,
    opts: &SimOptions,
) -> Result<PathEnsemble> {
    assert!(n_reps >= 1, "n_reps must be at least 1");
    let n_paths = (paths.end - paths.start) as usize;
    let n_steps = grid.n_steps;
    let dt = grid.dt();
    let sqrt_dt = crate::math::sqrt(dt);
    let gains = resample_gains(rs, grid);

    let mut out = empty_ensemble(EnsembleKind::Limiting, n_reps, n_steps, dt, paths.start, opts);
    let mut minor_gaps = vec![0.0; n_reps];

    for path in paths {
        let mut rng_major = policy.bank_rng(path, 0);
        let mut rng_minors: Vec<ChaCha12Rng> = (0..n_reps)
            .map(|i| policy.bank_rng(path, i as u32 + 1))
            .collect();

        let mut x0 = p.x0_init;
        let mut xbar = p.xi_init;
        let mut xs = vec![p.xi_init; n_reps];
        let mut major_min = x0;
        let mut minor_min = xs.clone();
        let mut market_min = f64::INFINITY;
        let mut costs = opts.retain_costs.then(|| CostAccumulator::new(n_reps));
        let retain = path < opts.retain_trajectories as u64;
        let mut traj = retain.then(|| PathTrajectory {
            path,
            major: Vec::with_capacity(n_steps + 1),
            minors: vec![Vec::with_capacity(n_steps + 1); n_reps],
            market: Vec::with_capacity(n_steps + 1),
            mean_field: Some(Vec::with_capacity(n_steps + 1)),
        });

        for step in 0..=n_steps {
            let market = p.market_state(xbar, x0);
            market_min = crate::math::min(market_min, market);
            if let Some(t) = traj.as_mut() {
                t.major.push(x0);
                for (i, series) in t.minors.iter_mut().enumerate() {
                    series.push(xs[i]);
                }
                t.market.push(market);
                t.mean_field.as_mut().unwrap().push(xbar);
            }

            let phi = gains.phi[step];
            let phi0 = gains.phi0[step];
            let mut u0 = if opts.zero_controls {
                0.0
            } else {
                major_control(phi0, xbar, x0, p, mode)
            };
            if let Some(pert) = &opts.perturbation {
                if pert.applies(true, 0) {
                    u0 += pert.shift(step, u0);
                }
            }
            for (i, gap) in minor_gaps.iter_mut().enumerate() {
                *gap = market - xs[i];
            }

            if let Some(acc) = costs.as_mut() {
                let w = if step == 0 || step == n_steps { 0.5 } else { 1.0 };
                acc.running_major(p, u0, xbar - x0, w, dt);
                for (i, &gap) in minor_gaps.iter().enumerate().take(n_reps) {
                    let mut u = if opts.zero_controls { 0.0 } else { (p.q - phi) * gap };
                    if let Some(pert) = &opts.perturbation {
                        if pert.applies(false, i) {
                            u += pert.shift(step, u);
                        }
                    }
                    acc.running_minor(i, p, u, gap, w, dt);
                }
            }
            if step == n_steps {
                if let Some(acc) = costs.as_mut() {
                    acc.terminal(p, xbar - x0, &minor_gaps);
                }
                break;
            }

            let t_next = (step + 1) as f64 * dt;
            let z0: f64 = rng_major.sample(StandardNormal);
            let xbar_drift = if opts.zero_controls {
                p.a * ((p.f - 1.0) * xbar + p.g * x0)
            } else {
                meanfield_drift(phi, xbar, x0, p, mode)
            };
            let x0_next = x0 + (p.a0 * (xbar - x0) + u0) * dt + p.sigma0 * sqrt_dt * z0;
            xbar += xbar_drift * dt;
            x0 = x0_next;
            if !x0.is_finite() || !xbar.is_finite() {
                return Err(Error::NonFinite { path, time: t_next });
            }
            for i in 0..n_reps {
                let mut u = if opts.zero_controls {
                    0.0
                } else {
                    (p.q - phi) * minor_gaps[i]
                };
                if let Some(pert) = &opts.perturbation {
                    if pert.applies(false, i) {
                        u += pert.shift(step, u);
                    }
                }
                let z: f64 = rng_minors[i].sample(StandardNormal);
                xs[i] += (p.a * minor_gaps[i] + u) * dt + p.sigma * sqrt_dt * z;
                if !xs[i].is_finite() {
                    return Err(Error::NonFinite { path, time: t_next });
                }
                minor_min[i] = crate::math::min(minor_min[i], xs[i]);
            }
            major_min = crate::math::min(major_min, x0);
        }

        out.major_min.push(major_min);
        out.market_min.push(market_min);
        out.minor_min.extend_from_slice(&minor_min);
        if let Some(t) = traj {
            out.trajectories.push(t);
        }
        if let (Some(rec), Some(acc)) = (out.costs.as_mut(), costs) {
            rec.major.push(acc.major);
            rec.minors.extend_from_slice(&acc.minors);
        }
    }
    out.n_paths = n_paths;
    Ok(out)
}

fn empty_ensemble(
    kind: EnsembleKind,
    n_minors: usize,
    n_steps: usize,
    dt: f64,
    path_offset: u64,
    opts: &SimOptions,
) -> PathEnsemble {
    PathEnsemble {
        kind,
        n_paths: 0,
        n_minors,
        n_steps,
        dt,
        path_offset,
        major_min: Vec::new(),
        market_min: Vec::new(),
        minor_min: Vec::new(),
        trajectories: Vec::new(),
        costs: opts.retain_costs.then(|| CostRecord {
            major: Vec::new(),
            minors: Vec::new(),
            n_minors,
        }),
    }
}

/// Per-path distances between the finite-population and limiting systems
/// when both majors are driven by the same Brownian stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDistance {
    /// `sup_t |x^(N)_t - xbar_t|`.
    pub sup_avg_diff: f64,
    /// `sup_t |market(finite) - market(limiting)|`.
    pub sup_market_diff: f64,
}

/// Paired trajectory of the averages for one retained path.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedTrajectory {
    pub path: u64,
    pub avg_finite: Vec<f64>,
    pub mean_field: Vec<f64>,
    pub market_finite: Vec<f64>,
    pub market_limiting: Vec<f64>,
}

/// Simulates the finite (N minors) and limiting systems in lockstep with a
/// shared major-bank noise stream and reports sup-over-time distances
/// between the empirical average and the mean field.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paired(
    p: &MarketParams,
    rs: &RiccatiSolution,
    n_minors: usize,
    grid: &SimGrid,
    paths: Range<u64>,
    policy: &RngPolicy,
    mode: StrategyMode,
    retain_trajectories: usize,
) -> Result<(Vec<PairedDistance>, Vec<PairedTrajectory>)> {
    assert!(n_minors >= 1);
    let n_steps = grid.n_steps;
    let dt = grid.dt();
    let sqrt_dt = crate::math::sqrt(dt);
    let gains = resample_gains(rs, grid);

    let mut distances = Vec::with_capacity((paths.end - paths.start) as usize);
    let mut retained = Vec::new();

    for path in paths {
        let mut rng_major = policy.bank_rng(path, 0);
        let mut rng_minors: Vec<ChaCha12Rng> = (0..n_minors)
            .map(|i| policy.bank_rng(path, i as u32 + 1))
            .collect();

        let mut x0_f = p.x0_init;
        let mut xs = vec![p.xi_init; n_minors];
        let mut x0_l = p.x0_init;
        let mut xbar = p.xi_init;
        let mut sup_avg = 0.0f64;
        let mut sup_market = 0.0f64;
        let retain = path < retain_trajectories as u64;
        let mut traj = retain.then(|| PairedTrajectory {
            path,
            avg_finite: Vec::with_capacity(n_steps + 1),
            mean_field: Vec::with_capacity(n_steps + 1),
            market_finite: Vec::with_capacity(n_steps + 1),
            market_limiting: Vec::with_capacity(n_steps + 1),
        });

        for step in 0..=n_steps {
            let x_avg = xs.iter().sum::<f64>() / n_minors as f64;
            let market_f = p.market_state(x_avg, x0_f);
            let market_l = p.market_state(xbar, x0_l);
            sup_avg = crate::math::max(sup_avg, crate::math::abs(x_avg - xbar));
            sup_market = crate::math::max(sup_market, crate::math::abs(market_f - market_l));
            if let Some(t) = traj.as_mut() {
                t.avg_finite.push(x_avg);
                t.mean_field.push(xbar);
                t.market_finite.push(market_f);
                t.market_limiting.push(market_l);
            }
            if step == n_steps {
                break;
            }

            let phi = gains.phi[step];
            let phi0 = gains.phi0[step];
            let t_next = (step + 1) as f64 * dt;
            // One draw per bank per step, shared between the two systems.
            let z0: f64 = rng_major.sample(StandardNormal);

            let u0_f = major_control(phi0, x_avg, x0_f, p, mode);
            let u0_l = major_control(phi0, xbar, x0_l, p, mode);
            let x0_f_next = x0_f + (p.a0 * (x_avg - x0_f) + u0_f) * dt + p.sigma0 * sqrt_dt * z0;
            let x0_l_next = x0_l + (p.a0 * (xbar - x0_l) + u0_l) * dt + p.sigma0 * sqrt_dt * z0;
            xbar += meanfield_drift(phi, xbar, x0_l, p, mode) * dt;
            for i in 0..n_minors {
                let gap = market_f - xs[i];
                let u = (p.q - phi) * gap;
                let z: f64 = rng_minors[i].sample(StandardNormal);
                xs[i] += (p.a * gap + u) * dt + p.sigma * sqrt_dt * z;
                if !xs[i].is_finite() {
                    return Err(Error::NonFinite { path, time: t_next });
                }
            }
            x0_f = x0_f_next;
            x0_l = x0_l_next;
            if !x0_f.is_finite() || !x0_l.is_finite() || !xbar.is_finite() {
                return Err(Error::NonFinite { path, time: t_next });
            }
        }
        distances.push(PairedDistance {
            sup_avg_diff: sup_avg,
            sup_market_diff: sup_market,
        });
        if let Some(t) = traj {
            retained.push(t);
        }
    }
    Ok((distances, retained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati;

    fn setup(p: &MarketParams) -> RiccatiSolution {
        riccati::solve(p, StrategyMode::DerivationConsistent, 200).unwrap()
    }

    #[test]
    fn euler_step_matches_hand_arithmetic() {
        // One step of the major dynamics with zero volatility.
        let mut state = [0.0];
        euler_step(&mut state, &[2.5 * 0.4], &[0.1], &[0.0], 0.01, &[0.3]);
        assert!((state[0] - 0.011).abs() < 1e-15);
        // Degenerate dynamics leave the state unchanged.
        let mut state = [1.7, -0.4];
        euler_step(&mut state, &[0.0; 2], &[0.0; 2], &[0.0; 2], 0.5, &[0.9, -0.2]);
        assert_eq!(state, [1.7, -0.4]);
        // Fixed draw: x + (drift+control)*dt + sigma*w.
        let mut state = [0.25];
        euler_step(&mut state, &[-0.3], &[0.2], &[0.7], 0.1, &[0.11]);
        assert!((state[0] - (0.25 + (-0.1) * 0.1 + 0.7 * 0.11)).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_consensus_is_fixed_point_finite() {
        let p = MarketParams {
            sigma: 0.0,
            sigma0: 0.0,
            x0_init: 0.3,
            xi_init: 0.3,
            ..MarketParams::default()
        };
        let rs = setup(&p);
        let grid = SimGrid::new(p.horizon, 50);
        let opts = SimOptions {
            retain_trajectories: 2,
            ..Default::default()
        };
        let e = simulate_finite(&p, &rs, 4, &grid, 3, &RngPolicy::new(1), rs.mode, &opts).unwrap();
        for v in e.major_min.iter().chain(&e.market_min).chain(&e.minor_min) {
            assert!((v - 0.3).abs() < 1e-12);
        }
        for t in &e.trajectories {
            assert!(t.major.iter().all(|x| (x - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_noise_consensus_is_fixed_point_limiting() {
        let p = MarketParams {
            sigma0: 0.0,
            x0_init: -0.1,
            xi_init: -0.1,
            ..MarketParams::default()
        };
        let rs = setup(&p);
        let grid = SimGrid::new(p.horizon, 50);
        let opts = SimOptions {
            retain_trajectories: 1,
            ..Default::default()
        };
        let e =
            simulate_limiting(&p, &rs, 3, &grid, 2, &RngPolicy::new(7), rs.mode, &opts).unwrap();
        let t = &e.trajectories[0];
        // x0 and xbar stay glued to the initial value; minors diffuse around it.
        for (x0, xb) in t.major.iter().zip(t.mean_field.as_ref().unwrap()) {
            assert!((x0 + 0.1).abs() < 1e-12);
            assert!((xb + 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn ensembles_are_deterministic_and_mergeable() {
        let p = MarketParams::default();
        let rs = setup(&p);
        let grid = SimGrid::new(p.horizon, 25);
        let policy = RngPolicy::new(42);
        let opts = SimOptions::default();
        let whole =
            simulate_finite(&p, &rs, 5, &grid, 40, &policy, rs.mode, &opts).unwrap();
        let a = simulate_finite_range(&p, &rs, 5, &grid, 0..17, &policy, rs.mode, &opts).unwrap();
        let b = simulate_finite_range(&p, &rs, 5, &grid, 17..40, &policy, rs.mode, &opts).unwrap();
        let merged = a.merge(b).unwrap();
        assert_eq!(whole, merged);
    }

    #[test]
    fn merge_rejects_non_adjacent_chunks() {
        let p = MarketParams::default();
        let rs = setup(&p);
        let grid = SimGrid::new(p.horizon, 10);
        let policy = RngPolicy::new(3);
        let opts = SimOptions::default();
        let a = simulate_finite_range(&p, &rs, 2, &grid, 0..5, &policy, rs.mode, &opts).unwrap();
        let b = simulate_finite_range(&p, &rs, 2, &grid, 9..12, &policy, rs.mode, &opts).unwrap();
        assert!(a.merge(b).is_err());
    }

    #[test]
    fn crn_gives_identical_streams_across_scenarios() {
        let policy = RngPolicy::new(99);
        let mut a = policy.for_scenario(0).bank_rng(11, 3);
        let mut b = policy.for_scenario(5).bank_rng(11, 3);
        for _ in 0..16 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
        let without = RngPolicy {
            scenario_crn: false,
            ..policy
        };
        let mut c = without.for_scenario(0).bank_rng(11, 3);
        let mut d = without.for_scenario(5).bank_rng(11, 3);
        assert_ne!(
            (0..4).map(|_| c.gen::<u64>()).collect::<Vec<_>>(),
            (0..4).map(|_| d.gen::<u64>()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn limiting_law_of_large_numbers() {
        let p = MarketParams::default();
        let rs = setup(&p);
        let grid = SimGrid::new(p.horizon, 100);
        let opts = SimOptions {
            retain_trajectories: 1,
            ..Default::default()
        };
        let m = 1000;
        let n_paths = 16;
        let opts = SimOptions {
            retain_trajectories: n_paths,
            ..opts
        };
        let e = simulate_limiting(&p, &rs, m, &grid, n_paths, &RngPolicy::new(5), rs.mode, &opts)
            .unwrap();
        // Studentized error of the minor-population mean around the mean
        // field, per path; averaging over paths keeps the check away from
        // single-realization tails.
        let mut z_sum = 0.0;
        for t in &e.trajectories {
            let finals: Vec<f64> = t.minors.iter().map(|s| *s.last().unwrap()).collect();
            let mean = finals.iter().sum::<f64>() / m as f64;
            let var =
                finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m as f64 - 1.0);
            let xbar_t = *t.mean_field.as_ref().unwrap().last().unwrap();
            z_sum += (mean - xbar_t) / crate::math::sqrt(var / m as f64);
        }
        let z_mean = z_sum / n_paths as f64;
        // z_mean has standard deviation 1/sqrt(16) = 0.25; allow 4 sigma.
        assert!(z_mean.abs() <= 1.0, "mean studentized error {z_mean}");
    }

    #[test]
    fn driftless_banks_have_zero_mean_increment() {
        // Controls forced to zero and a = a0 = 0: pure diffusions.
        // validation requires a > 0, so use an effectively-zero value
        let p = MarketParams {
            a: 1e-300,
            a0: 0.0,
            g: 0.0,
            f: 1.0,
            ..MarketParams::default()
        };
        let rs = setup(&p);
        let grid = SimGrid::new(p.horizon, 50);
        let opts = SimOptions {
            retain_trajectories: 2000,
            zero_controls: true,
            ..Default::default()
        };
        let e = simulate_finite(&p, &rs, 2, &grid, 2000, &RngPolicy::new(12), rs.mode, &opts)
            .unwrap();
        let finals: Vec<f64> = e
            .trajectories
            .iter()
            .flat_map(|t| t.minors.iter().map(|s| *s.last().unwrap()))
            .collect();
        let n = finals.len() as f64;
        let mean = finals.iter().sum::<f64>() / n;
        let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let se = crate::math::sqrt(var / n);
        assert!((mean - p.xi_init).abs() <= 4.0 * se, "mean {mean}, se {se}");
    }
}
