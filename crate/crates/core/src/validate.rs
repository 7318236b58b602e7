//! Numerical certification of the equilibrium claims: cost-functional
//! evaluation, best-response (epsilon-Nash) gaps under paired common
//! random numbers, and adjudication of the major-coefficient variants
//! against the matrix oracle.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::experiments::SimRunner;
use crate::model::MarketParams;
use crate::riccati::{self, CouplingVariant, ExtendedSystem, RiccatiSolution, StrategyMode};
use crate::risk::{sample_estimate, Estimate};
use crate::sim::{Direction, PathEnsemble, Perturbation, PerturbTarget, RngPolicy, SimGrid, SimOptions};

/// Which bank's cost functional to reduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostSelector {
    Major,
    /// Index into the minor population (0-based).
    Minor(usize),
}

/// Mean realized cost of the selected bank over an ensemble that retained
/// per-path cost functionals (trapezoidal running cost plus terminal cost,
/// accumulated along each path at simulation time).
pub fn evaluate_cost(e: &PathEnsemble, who: CostSelector) -> Result<Estimate> {
    let costs = e.costs.as_ref().ok_or_else(|| {
        Error::UnsupportedInput(String::from(
            "ensemble was simulated without cost retention",
        ))
    })?;
    let sample: Vec<f64> = match who {
        CostSelector::Major => costs.major.clone(),
        CostSelector::Minor(i) => {
            if i >= costs.n_minors {
                return Err(Error::UnsupportedInput(String::from(
                    "minor index out of range",
                )));
            }
            (0..e.n_paths)
                .map(|p| costs.minors[p * costs.n_minors + i])
                .collect()
        }
    };
    if sample.is_empty() {
        return Err(Error::UnsupportedInput(String::from("empty ensemble")));
    }
    Ok(sample_estimate(&sample))
}

/// A family of unilateral deviations `u* + delta * omega` to test.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub target: PerturbTarget,
    pub direction: Direction,
    /// Deviation magnitudes; must include 0 (the pairing anchor).
    pub deltas: Vec<f64>,
}

impl PerturbationSpec {
    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if !self.deltas.contains(&0.0) {
            return Err(Error::UnsupportedInput(String::from(
                "deltas must include 0",
            )));
        }
        if let Direction::Deterministic(omega) = &self.direction {
            if omega.len() != n_steps + 1 {
                return Err(Error::GridMismatch {
                    expected: n_steps + 1,
                    got: omega.len(),
                });
            }
            if omega.iter().any(|v| !v.is_finite()) {
                return Err(Error::Range(String::from(
                    "direction must be finite on the grid",
                )));
            }
        }
        Ok(())
    }
}

/// The cost change produced by one deviation magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPoint {
    pub delta: f64,
    /// Cost of the deviating bank under `u* + delta * omega`.
    pub cost: Estimate,
    /// Paired mean of `cost(delta) - cost(0)` over shared paths.
    pub gap: f64,
    /// Standard error of the paired differences.
    pub gap_se: f64,
}

/// Best-response check for one direction: per-delta paired gaps plus a
/// least-squares curvature of `gap ~ kappa * delta^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseResult {
    pub points: Vec<GapPoint>,
    pub curvature: f64,
    /// Most negative gap across deltas (0 when all gaps are nonnegative).
    pub worst_gap: f64,
    /// Largest `|gap| / (2 se)` among negative gaps; the equilibrium claim
    /// holds when every gap satisfies `gap >= -2 se`.
    pub passes: bool,
}

/// Monte Carlo settings for best-response measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_minors: usize,
    pub riccati_steps: usize,
    pub policy: RngPolicy,
}

fn target_costs(e: &PathEnsemble, target: PerturbTarget) -> Result<Vec<f64>> {
    let who = match target {
        PerturbTarget::Major => CostSelector::Major,
        PerturbTarget::Minor(i) => CostSelector::Minor(i),
    };
    let costs = e.costs.as_ref().ok_or_else(|| {
        Error::UnsupportedInput(String::from("cost retention missing"))
    })?;
    Ok(match who {
        CostSelector::Major => costs.major.clone(),
        CostSelector::Minor(i) => (0..e.n_paths)
            .map(|p| costs.minors[p * costs.n_minors + i])
            .collect(),
    })
}

/// Measures the paired cost gaps of a unilateral deviation. Only the
/// target bank deviates; everyone else keeps the equilibrium feedback, so
/// for a major deviation the minors (and hence the empirical average)
/// respond through their states. Every delta reuses the same path
/// substreams, so `gap(0) = 0` exactly.
pub fn best_response_gap(
    runner: &dyn SimRunner,
    p: &MarketParams,
    rs: &RiccatiSolution,
    mode: StrategyMode,
    spec: &PerturbationSpec,
    settings: &GapSettings,
) -> Result<BestResponseResult> {
    spec.validate(settings.n_steps)?;
    let grid = SimGrid::new(p.horizon, settings.n_steps);

    let run = |delta: f64| -> Result<Vec<f64>> {
        let opts = SimOptions {
            retain_costs: true,
            perturbation: Some(Perturbation {
                target: spec.target,
                delta,
                direction: spec.direction.clone(),
            }),
            ..Default::default()
        };
        let e = runner.finite(
            p,
            rs,
            settings.n_minors,
            &grid,
            settings.n_paths,
            &settings.policy,
            mode,
            &opts,
        )?;
        target_costs(&e, spec.target)
    };

    let base = run(0.0)?;
    let mut points = Vec::with_capacity(spec.deltas.len());
    let mut worst_gap = 0.0f64;
    let mut passes = true;
    for &delta in &spec.deltas {
        let costs = if delta == 0.0 { base.clone() } else { run(delta)? };
        let diffs: Vec<f64> = costs.iter().zip(&base).map(|(c, b)| c - b).collect();
        let paired = sample_estimate(&diffs);
        if paired.value < worst_gap {
            worst_gap = paired.value;
        }
        if paired.value < -2.0 * paired.se {
            passes = false;
        }
        points.push(GapPoint {
            delta,
            cost: sample_estimate(&costs),
            gap: paired.value,
            gap_se: paired.se,
        });
    }

    // gap ~ kappa * delta^2 through the origin.
    let (mut num, mut den) = (0.0, 0.0);
    for pt in &points {
        let d2 = pt.delta * pt.delta;
        num += pt.gap * d2;
        den += d2 * d2;
    }
    let curvature = if den > 0.0 { num / den } else { 0.0 };
    Ok(BestResponseResult {
        points,
        curvature,
        worst_gap,
        passes,
    })
}

/// Draws `count` deterministic step-function directions on the grid with
/// values in [-1, 1], from a seeded generator so the set is reproducible.
pub fn seeded_directions(n_steps: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let segments = rng.gen_range(1..=5usize);
            let seg_len = (n_steps + 1).div_ceil(segments);
            let levels: Vec<f64> = (0..segments)
                .map(|_| rng.gen_range(-1.0f64..=1.0))
                .collect();
            (0..=n_steps).map(|k| levels[(k / seg_len).min(segments - 1)]).collect()
        })
        .collect()
}

/// Divergence of the major-coefficient variants and their measured
/// best-response quality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeComparison {
    /// Variant labels, in the order of `phi0_paths` and `pairwise`.
    pub variant_names: [&'static str; 4],
    /// phi0 paths per variant on the shared grid.
    pub phi0_paths: [Vec<f64>; 4],
    /// Max absolute pairwise differences of the phi0 paths.
    pub pairwise: [[f64; 4]; 4],
    /// Measured worst major-bank gap per strategy mode.
    pub mode_gaps: Vec<(StrategyMode, f64)>,
    /// The mode whose worst-case gap is least negative.
    pub best_mode: StrategyMode,
}

/// Solves the major coefficient under every variant, tabulates pairwise
/// divergences, and measures the major bank's best-response gap under each
/// strategy mode, reporting the mode with the least negative worst gap.
pub fn mode_comparison(
    runner: &dyn SimRunner,
    p: &MarketParams,
    settings: &GapSettings,
) -> Result<ModeComparison> {
    p.validate()?;
    let steps = settings.riccati_steps;
    let phi_fine = riccati::solve_minor_phi(p, 2 * steps)?;
    let opts = riccati::RiccatiOptions::default();
    let theorem =
        riccati::solve_major_phi0_variant(p, &phi_fine, CouplingVariant::TheoremMinusPhi, steps, &opts)?;
    let appendix =
        riccati::solve_major_phi0_variant(p, &phi_fine, CouplingVariant::AppendixPlusPhi, steps, &opts)?;
    let derivation =
        riccati::solve_major_phi0_variant(p, &phi_fine, CouplingVariant::OracleDoubled, steps, &opts)?;
    let sys = ExtendedSystem::from_params(p)?;
    let oracle = riccati::solve_major_lqr_oracle(&sys, &phi_fine, steps)?.implied_phi0;

    let paths = [theorem, appendix, derivation, oracle];
    let mut pairwise = [[0.0f64; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let d = paths[i]
                .iter()
                .zip(&paths[j])
                .fold(0.0f64, |m, (x, y)| crate::math::max(m, crate::math::abs(x - y)));
            pairwise[i][j] = d;
        }
    }

    let spec = PerturbationSpec {
        target: PerturbTarget::Major,
        direction: Direction::Deterministic(
            (0..=settings.n_steps).map(|_| 1.0).collect(),
        ),
        deltas: alloc::vec![-0.5, -0.25, 0.0, 0.25, 0.5],
    };
    let modes = [
        StrategyMode::TheoremAsPublished,
        StrategyMode::DerivationConsistent,
        StrategyMode::MatrixOracle,
    ];
    let mut mode_gaps = Vec::with_capacity(modes.len());
    for mode in modes {
        let rs = riccati::solve(p, mode, steps)?;
        let result = best_response_gap(runner, p, &rs, mode, &spec, settings)?;
        mode_gaps.push((mode, result.worst_gap));
    }
    let best_mode = mode_gaps
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(m, _)| *m)
        .unwrap();

    Ok(ModeComparison {
        variant_names: ["theorem", "appendix", "derivation", "oracle"],
        phi0_paths: paths,
        pairwise,
        mode_gaps,
        best_mode,
    })
}
