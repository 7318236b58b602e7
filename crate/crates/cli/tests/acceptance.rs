//! End-to-end acceptance suite. Each test covers one numbered criterion
//! and prints exactly one PASS line on success (run with
//! `--nocapture` to see them); tolerances are pinned in the assertions.

use std::process::Command;

use interbank_cli::runner::ParallelRunner;
use interbank_core::experiments::{self, SimRunner};
use interbank_core::model::{derive_clearing, MarketParams};
use interbank_core::riccati::{self, ExtendedSystem, StrategyMode};
use interbank_core::risk::{self, Estimate};
use interbank_core::sim::{self, Direction, PerturbTarget, RngPolicy, SimGrid, SimOptions};
use interbank_core::validate::{
    best_response_gap, mode_comparison, seeded_directions, GapSettings, PerturbationSpec,
};

fn pass(id: u32, name: &str) {
    println!("criterion {id:>2} PASS: {name}");
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn uniform(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// Criterion 1: the clearing identities hold exactly — not to tolerance —
/// for 1000 random size/rate draws.
#[test]
fn c01_market_clearing_is_exact() {
    let mut state = 0xc1ea41u64;
    for _ in 0..1000 {
        let a = 0.01 + 50.0 * uniform(&mut state);
        let g = uniform(&mut state);
        let (a0, f) = derive_clearing(a, g).unwrap();
        assert_eq!(a0, a * g);
        assert_eq!(f + g, 1.0);
        let p = MarketParams::default().with_size(a, g).unwrap();
        p.validate().unwrap();
    }
    pass(1, "market clearing identities exact on 1000 random draws");
}

/// Criterion 2: the backward gain solver (a) returns the zero path in the
/// degenerate case, (b) self-converges at 4th order, (c) hits terminal
/// conditions exactly.
#[test]
fn c02_gain_solver_correctness() {
    // (a) eps = q^2, c = 0 forces phi identically zero.
    let degen = MarketParams {
        eps: 1.0,
        q: 1.0,
        c: 0.0,
        ..MarketParams::default()
    };
    let rs = riccati::solve(&degen, StrategyMode::DerivationConsistent, 1000).unwrap();
    let worst = rs.phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 1e-12, "degenerate phi reaches {worst}");

    // (b) step-halving error ratios stay at 4th order (>= 8).
    let p = MarketParams::default();
    let reference = riccati::solve(&p, StrategyMode::DerivationConsistent, 8000).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    for steps in [250usize, 500, 1000] {
        let rs = riccati::solve(&p, StrategyMode::DerivationConsistent, steps).unwrap();
        let stride = 8000 / steps;
        let err = |coarse: &[f64], fine: &[f64]| {
            coarse
                .iter()
                .enumerate()
                .fold(0.0f64, |m, (k, v)| m.max((v - fine[k * stride]).abs()))
        };
        let e = (err(&rs.phi, &reference.phi), err(&rs.phi0, &reference.phi0));
        if let Some((p0, p1)) = prev {
            assert!(p0 / e.0 >= 8.0, "phi ratio {} at {steps}", p0 / e.0);
            assert!(p1 / e.1 >= 8.0, "phi0 ratio {} at {steps}", p1 / e.1);
        }
        prev = Some(e);
    }

    // (c) terminal values are bitwise exact.
    let pc = MarketParams {
        c: 0.3,
        c0: 0.8,
        ..MarketParams::default()
    };
    for mode in [
        StrategyMode::TheoremAsPublished,
        StrategyMode::DerivationConsistent,
        StrategyMode::MatrixOracle,
    ] {
        let rs = riccati::solve(&pc, mode, 500).unwrap();
        assert_eq!(*rs.phi.last().unwrap(), -pc.c);
        assert_eq!(*rs.phi0.last().unwrap(), -pc.c0);
    }
    pass(2, "gain ODE degenerate zero, 4th-order self-convergence, exact terminal values");
}

/// Criterion 3: the matrix formulation keeps its invariant structure on
/// the baseline parameter set.
#[test]
fn c03_matrix_oracle_structure() {
    let p = MarketParams::default();
    let steps = 1000;
    let sys = ExtendedSystem::from_params(&p).unwrap();
    let phi = riccati::solve_minor_phi(&p, 2 * steps).unwrap();
    let oracle = riccati::solve_major_lqr_oracle(&sys, &phi, steps).unwrap();
    let mut worst_sym = 0.0f64;
    let mut worst_null = 0.0f64;
    for m in &oracle.p_mat {
        worst_sym = worst_sym.max((m[0][1] - m[1][0]).abs());
        worst_null = worst_null
            .max((m[0][0] + m[0][1]).abs())
            .max((m[1][0] + m[1][1]).abs());
    }
    assert!(worst_sym <= 1e-10, "symmetry defect {worst_sym}");
    assert!(worst_null <= 1e-10, "null-direction defect {worst_null}");
    assert_eq!(*oracle.implied_phi0.last().unwrap(), -p.c0);
    pass(3, "matrix path symmetric, consensus direction conserved, terminal value exact");
}

/// Criterion 4: without a major bank the minor gain reduces to the
/// classical single-population benchmark, and the simulated banks'
/// innovations (state increments net of model drift) are cross-sectionally
/// uncorrelated at the 95% level.
#[test]
fn c04_single_population_reduction() {
    let p = MarketParams::default().with_size(5.0, 0.0).unwrap();

    // Independent RK4 integration of the classical benchmark equation for
    // eta = -phi: eta' = 2(a+q) eta + eta^2 - (eps - q^2), eta(T) = c.
    let steps = 2000;
    let phi = riccati::solve_minor_phi(&p, steps).unwrap();
    let rhs = |eta: f64| 2.0 * (p.a + p.q) * eta + eta * eta - (p.eps - p.q * p.q);
    let dt = p.horizon / steps as f64;
    let mut eta = p.c;
    let mut worst = (phi[steps] + eta).abs();
    for idx in (0..steps).rev() {
        let h = -dt;
        let k1 = rhs(eta);
        let k2 = rhs(eta + 0.5 * h * k1);
        let k3 = rhs(eta + 0.5 * h * k2);
        let k4 = rhs(eta + h * k3);
        eta += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        worst = worst.max((phi[idx] + eta).abs());
    }
    assert!(worst <= 1e-8, "benchmark residual {worst}");

    // Innovations: w_i = dx_i - (a + q - phi)(market - x_i) dt recovers
    // sigma dW_i; distinct banks must be uncorrelated. (The states
    // themselves share the empirical average, so only the innovations are
    // independent at finite N.)
    let n_minors = 10;
    let n_paths = 2000;
    let n_steps = 100;
    let rs = riccati::solve(&p, StrategyMode::DerivationConsistent, 1000).unwrap();
    let grid = SimGrid::new(p.horizon, n_steps);
    let opts = SimOptions {
        retain_trajectories: n_paths,
        ..Default::default()
    };
    let e = sim::simulate_finite(
        &p, &rs, n_minors, &grid, n_paths, &RngPolicy::new(4004), rs.mode, &opts,
    )
    .unwrap();
    let dt = grid.dt();
    let mut innovations: Vec<Vec<f64>> = (0..n_minors)
        .map(|_| Vec::with_capacity(n_paths * n_steps))
        .collect();
    for t in &e.trajectories {
        for (i, series) in t.minors.iter().enumerate() {
            for k in 0..n_steps {
                let gain = (p.a + p.q - rs.phi_at(k as f64 * dt)) * (t.market[k] - series[k]);
                innovations[i].push(series[k + 1] - series[k] - gain * dt);
            }
        }
    }
    let n_samples = (n_paths * n_steps) as f64;
    let scale = p.sigma * p.sigma * dt; // Var of one innovation
    let mut z_sum = 0.0;
    let mut z_max: f64 = 0.0;
    let mut n_pairs = 0.0f64;
    for i in 0..n_minors {
        for j in (i + 1)..n_minors {
            let s: f64 = innovations[i]
                .iter()
                .zip(&innovations[j])
                .map(|(a, b)| a * b)
                .sum();
            let z = s / (scale * n_samples.sqrt());
            z_sum += z;
            z_max = z_max.max(z.abs());
            n_pairs += 1.0;
        }
    }
    let z_agg = z_sum / n_pairs.sqrt();
    assert!(z_agg.abs() <= 1.96, "aggregate cross-correlation z = {z_agg}");
    // Bonferroni guard across the 45 pairs.
    assert!(z_max <= 4.5, "worst pair z = {z_max}");
    pass(4, "no-major reduction matches classical benchmark; innovations uncorrelated");
}

/// Criterion 5: estimator identities hold to rounding on a simulated
/// ensemble, and boundary hits count as defaults.
#[test]
fn c05_estimator_identities() {
    let p = MarketParams::default();
    let rs = riccati::solve(&p, StrategyMode::DerivationConsistent, 1000).unwrap();
    let grid = SimGrid::new(p.horizon, 100);
    let e = ParallelRunner
        .finite(&p, &rs, 10, &grid, 5000, &RngPolicy::new(55), rs.mode, &SimOptions::default())
        .unwrap();
    let r = risk::estimate_risk_report(&e, p.threshold).unwrap();
    let (ri, rse) = risk::total_probability_residual(&r);
    assert!(ri.unwrap().abs() <= 1e-12);
    assert!(rse.unwrap().abs() <= 1e-12);
    let h = risk::loss_distribution(&e, p.threshold).unwrap();
    assert!(h.recombination_residual() <= 1e-12);
    assert!((h.total.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

    assert!(risk::path_default_indicator(p.threshold, p.threshold));
    assert!(!risk::path_default_indicator(p.threshold + 1e-12, p.threshold));
    pass(5, "total-probability and loss-recombination residuals <= 1e-12; boundary defaults");
}

/// True when the series never drops a step by more than twice the
/// combined standard error and ends strictly above its start.
fn increasing_after_smoothing(series: &[Estimate]) -> bool {
    for w in series.windows(2) {
        let slack = 2.0 * (w[0].se * w[0].se + w[1].se * w[1].se).sqrt();
        if w[1].value <= w[0].value - slack {
            return false;
        }
    }
    series.last().unwrap().value > series.first().unwrap().value
}

fn decreasing_after_smoothing(series: &[Estimate]) -> bool {
    let flipped: Vec<Estimate> = series
        .iter()
        .map(|e| Estimate { value: -e.value, se: e.se })
        .collect();
    increasing_after_smoothing(&flipped)
}

/// Criterion 6: major-bank size sweep reproduces the expected trend directions
/// at 50000 paths with 10 minors under common random numbers.
#[test]
fn c06_size_sweep_trends() {
    let settings = experiments::SweepSettings {
        n_paths: 50_000,
        n_steps: 100,
        n_minors: 10,
        riccati_steps: 1000,
        mode: StrategyMode::DerivationConsistent,
        with_loss: false,
    };
    let values: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let sweep = experiments::sweep_size_g(
        &ParallelRunner,
        &MarketParams::default(),
        &values,
        &settings,
        &RngPolicy::new(99),
    )
    .unwrap();
    let baseline_pi = sweep.rows[0].report.pi.value;
    let swept = &sweep.rows[1..];

    let pi_md: Vec<Estimate> = swept.iter().map(|r| r.report.pi_given_md.unwrap()).collect();
    assert!(increasing_after_smoothing(&pi_md), "pi|MD not increasing in G");

    for r in swept {
        let pi_ms = r.report.pi_given_ms.unwrap().value;
        assert!(
            pi_ms < baseline_pi,
            "pi|MS = {pi_ms} not below no-major baseline {baseline_pi} at G = {}",
            r.value
        );
    }

    let pse_md: Vec<Estimate> = swept.iter().map(|r| r.report.p_se_given_md.unwrap()).collect();
    assert!(increasing_after_smoothing(&pse_md), "pSE|MD not increasing in G");

    for r in swept.iter().filter(|r| r.value >= 0.4) {
        let v = r.report.p_se_given_ms.unwrap().value;
        assert!(v <= 0.01, "pSE|MS = {v} above 0.01 at G = {}", r.value);
    }
    pass(6, "size sweep: conditional default and systemic trends match the expected directions");
}

/// Criterion 7: market-friction sweep (F = G = 1/2, a0 = a/2) with the
/// no-major baseline per row.
#[test]
fn c07_friction_sweep_trends() {
    let settings = experiments::SweepSettings {
        n_paths: 50_000,
        n_steps: 100,
        n_minors: 10,
        riccati_steps: 1000,
        mode: StrategyMode::DerivationConsistent,
        with_loss: false,
    };
    let values: Vec<f64> = (1..=10).map(|k| k as f64).collect();
    let sweep = experiments::sweep_friction_a(
        &ParallelRunner,
        &MarketParams::default(),
        &values,
        &settings,
        &RngPolicy::new(99),
    )
    .unwrap();

    let no_major_pi: Vec<Estimate> = sweep
        .rows
        .iter()
        .map(|r| r.no_major_report.as_ref().unwrap().pi)
        .collect();
    assert!(decreasing_after_smoothing(&no_major_pi), "no-major pi not decreasing in a");

    let pi_md: Vec<Estimate> = sweep
        .rows
        .iter()
        .map(|r| r.report.pi_given_md.unwrap())
        .collect();
    assert!(increasing_after_smoothing(&pi_md), "pi|MD not increasing in a");

    let no_major_pse: Vec<Estimate> = sweep
        .rows
        .iter()
        .map(|r| r.no_major_report.as_ref().unwrap().p_se)
        .collect();
    for i in 0..no_major_pse.len() {
        for j in (i + 1)..no_major_pse.len() {
            let (a, b) = (no_major_pse[i], no_major_pse[j]);
            let slack = 2.0 * (a.se * a.se + b.se * b.se).sqrt();
            assert!(
                (a.value - b.value).abs() <= slack,
                "no-major pSE not flat: {} vs {}",
                a.value,
                b.value
            );
        }
    }

    let pse_md: Vec<Estimate> = sweep
        .rows
        .iter()
        .map(|r| r.report.p_se_given_md.unwrap())
        .collect();
    assert!(increasing_after_smoothing(&pse_md), "pSE|MD not increasing in a");
    pass(7, "friction sweep: with/without-major trends match the expected directions");
}

/// Criterion 8: the empirical minor average approaches the mean field as
/// the population grows, with the major bank's noise stream shared
/// between the finite and limiting systems.
#[test]
fn c08_population_convergence() {
    let rows = experiments::convergence_study(
        &ParallelRunner,
        &MarketParams::default(),
        &[10, 100],
        1000,
        100,
        1000,
        StrategyMode::DerivationConsistent,
        &RngPolicy::new(2024),
    )
    .unwrap();
    let at10 = rows[0].median_sup_avg;
    let at100 = rows[1].median_sup_avg;
    assert!(
        at100 < at10,
        "median sup distance did not shrink: N=10 gives {at10}, N=100 gives {at100}"
    );
    pass(8, "median sup|average - mean field| shrinks from N=10 to N=100");
}

/// Criterion 9: minor-bank best-response gaps certify the approximate
/// equilibrium: no deviation helps beyond noise, the gap is even in the
/// deviation size, and the measured epsilon does not grow with N.
#[test]
fn c09_epsilon_nash_measurement() {
    let p = MarketParams::default();
    let mode = StrategyMode::DerivationConsistent;
    let rs = riccati::solve(&p, mode, 1000).unwrap();
    let n_steps = 100;
    let dirs = seeded_directions(n_steps, 20, 4242);
    let deltas = vec![0.0, 0.05, -0.05, 0.1, -0.1, 0.2, -0.2];
    let settings10 = GapSettings {
        n_paths: 5000,
        n_steps,
        n_minors: 10,
        riccati_steps: 1000,
        policy: RngPolicy::new(77),
    };

    let mut eps10_all = 0.0f64; // worst gap, all 20 directions at N=10
    let mut eps10_sub = 0.0f64; // worst gap over the comparison subset
    let mut eps10_sub_se = 0.0f64;
    for (i, omega) in dirs.iter().enumerate() {
        let spec = PerturbationSpec {
            target: PerturbTarget::Minor(0),
            direction: Direction::Deterministic(omega.clone()),
            deltas: deltas.clone(),
        };
        let r = best_response_gap(&ParallelRunner, &p, &rs, mode, &spec, &settings10).unwrap();
        // gap(0) is exact under paired common random numbers.
        let zero = r.points.iter().find(|pt| pt.delta == 0.0).unwrap();
        assert_eq!(zero.gap, 0.0);
        assert_eq!(zero.gap_se, 0.0);
        for pt in &r.points {
            assert!(
                pt.gap >= -2.0 * pt.gap_se,
                "direction {i} delta {}: gap {} < -2 SE {}",
                pt.delta,
                pt.gap,
                pt.gap_se
            );
            if pt.delta > 0.0 {
                let mirror = r.points.iter().find(|q| q.delta == -pt.delta).unwrap();
                let slack = 2.0 * (pt.gap_se + mirror.gap_se);
                assert!(
                    (pt.gap - mirror.gap).abs() <= slack,
                    "direction {i}: gap({}) = {} vs gap({}) = {} beyond {slack}",
                    pt.delta,
                    pt.gap,
                    mirror.delta,
                    mirror.gap
                );
            }
        }
        eps10_all = eps10_all.min(r.worst_gap);
        if i < 6 {
            eps10_sub = eps10_sub.min(r.worst_gap);
            for pt in &r.points {
                eps10_sub_se = eps10_sub_se.max(pt.gap_se);
            }
        }
    }

    // Epsilon comparison across population sizes over a fixed direction
    // subset (kept small: the N=100 market is 10x the work per path).
    let settings100 = GapSettings {
        n_minors: 100,
        ..settings10
    };
    let mut eps100 = 0.0f64;
    let mut eps100_se = 0.0f64;
    for omega in dirs.iter().take(6) {
        let spec = PerturbationSpec {
            target: PerturbTarget::Minor(0),
            direction: Direction::Deterministic(omega.clone()),
            deltas: vec![0.0, 0.05, 0.1, 0.2],
        };
        let r = best_response_gap(&ParallelRunner, &p, &rs, mode, &spec, &settings100).unwrap();
        eps100 = eps100.min(r.worst_gap);
        for pt in &r.points {
            eps100_se = eps100_se.max(pt.gap_se);
        }
    }
    let eps10_m = (-eps10_sub).max(0.0); // measured epsilon is the worst gap magnitude
    let eps100_m = (-eps100).max(0.0);
    let slack = 2.0 * (eps10_sub_se * eps10_sub_se + eps100_se * eps100_se).sqrt();
    assert!(
        eps100_m <= eps10_m + slack,
        "epsilon grew with N: {eps100_m} at N=100 vs {eps10_m} at N=10 (slack {slack})"
    );
    println!(
        "  measured epsilon: {:.6} at N=10 (20 directions), {:.6} at N=100 (subset)",
        (-eps10_all).max(0.0),
        eps100_m
    );
    pass(9, "no profitable minor deviation beyond 2 SE; epsilon does not grow with N");
}

/// Criterion 10: the mode adjudication report exists and is bit-for-bit
/// deterministic under a fixed seed.
#[test]
fn c10_mode_adjudication_deterministic() {
    let p = MarketParams::default();
    let settings = GapSettings {
        n_paths: 2000,
        n_steps: 100,
        n_minors: 10,
        riccati_steps: 1000,
        policy: RngPolicy::new(1234),
    };
    let a = mode_comparison(&ParallelRunner, &p, &settings).unwrap();
    let b = mode_comparison(&ParallelRunner, &p, &settings).unwrap();
    assert_eq!(a, b, "mode comparison is not deterministic");
    // The table must actually separate the variants that disagree and
    // identify the pair that coincides.
    assert!(a.pairwise[2][3] <= 1e-8, "derivation vs oracle: {}", a.pairwise[2][3]);
    assert!(a.pairwise[0][2] > 1e-3, "theorem vs derivation should differ");
    assert_eq!(a.mode_gaps.len(), 3);
    println!(
        "  phi0 max divergence theorem/appendix/derivation vs oracle: {:.6} / {:.6} / {:.2e}; best mode: {}",
        a.pairwise[0][3], a.pairwise[1][3], a.pairwise[2][3], a.best_mode.name()
    );
    pass(10, "mode adjudication report deterministic; variant divergences tabulated");
}

/// Criterion 11: CLI outputs are byte-identical across reruns and worker
/// counts.
#[test]
fn c11_cli_byte_determinism() {
    let bin = env!("CARGO_BIN_EXE_interbank");
    let base = std::env::temp_dir().join(format!("interbank-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&base).unwrap();
    let cfg_path = base.join("base.cfg");
    std::fs::write(&cfg_path, "g_values = 0.2, 0.5, 0.8\n").unwrap();

    let run = |dir: &str, workers: &str| {
        let out = base.join(dir);
        let status = Command::new(bin)
            .args([
                "sweep-g",
                "--config",
                cfg_path.to_str().unwrap(),
                "--seed",
                "7",
                "--paths",
                "2000",
                "--workers",
                workers,
                "--loss",
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        (
            std::fs::read(out.join("risk.csv")).unwrap(),
            std::fs::read(out.join("loss.csv")).unwrap(),
        )
    };
    let first = run("a", "1");
    let second = run("b", "1");
    let more_workers = run("c", "4");
    assert_eq!(first, second, "identical rerun changed output bytes");
    assert_eq!(first, more_workers, "worker count changed output bytes");

    // Invalid parameters must fail with the validation status and write
    // no risk output.
    std::fs::write(base.join("bad.cfg"), "F = 0.5\nG = 0.6\n").unwrap();
    let out_bad = base.join("bad-out");
    let status = Command::new(bin)
        .args([
            "simulate",
            "--config",
            base.join("bad.cfg").to_str().unwrap(),
            "--seed",
            "7",
            "--paths",
            "10",
            "--out",
            out_bad.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(11), "clearing violation must exit with the validation status");
    assert!(!out_bad.join("risk.csv").exists());

    std::fs::remove_dir_all(&base).ok();
    pass(11, "CLI outputs byte-identical across reruns and worker counts; bad config rejected");
}
