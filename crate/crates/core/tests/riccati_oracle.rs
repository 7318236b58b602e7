//! Cross-checks of the backward ODE solvers against independent oracles:
//! the closed-form solution of the minor coefficient equation, a
//! separately coded classical single-population benchmark, step-halving
//! self-convergence, and the matrix formulation.

use interbank_core::model::MarketParams;
use interbank_core::riccati::{
    self, solve, solve_major_lqr_oracle, solve_minor_phi, ExtendedSystem, StrategyMode,
};

/// Closed-form solution of
/// `phi' = 2(a+q) phi - phi^2 + (eps - q^2)`, `phi(T) = -c`.
///
/// Substituting `y = phi - b` with `b = a+q` gives `y' = delta^2 - y^2`
/// with `delta = sqrt(b^2 + eps - q^2)`, solved by a tanh (|y(T)| < delta)
/// or coth (|y(T)| > delta) profile, or frozen at an equilibrium.
fn phi_closed_form(p: &MarketParams, t: f64) -> f64 {
    let b = p.a + p.q;
    let k = p.eps - p.q * p.q;
    let delta = (b * b + k).sqrt();
    let y_t = -p.c - b;
    let s = t - p.horizon; // nonpositive on [0, T]
    let y = if (y_t.abs() - delta).abs() < 1e-14 {
        y_t
    } else if y_t.abs() < delta {
        delta * (delta * s + (y_t / delta).atanh()).tanh()
    } else {
        let acoth = |x: f64| 0.5 * ((x + 1.0) / (x - 1.0)).ln();
        let coth = |z: f64| 1.0 / z.tanh();
        delta * coth(delta * s + acoth(y_t / delta))
    };
    b + y
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn minor_gain_matches_closed_form_tanh_branch() {
    // Baseline parameters: c = 0 puts the terminal value inside the
    // separatrix, so the tanh branch applies.
    let p = MarketParams::default();
    let steps = 1000;
    let phi = solve_minor_phi(&p, steps).unwrap();
    let grid = riccati::uniform_grid(p.horizon, steps);
    let worst = grid
        .iter()
        .zip(&phi)
        .fold(0.0f64, |m, (&t, &v)| m.max((v - phi_closed_form(&p, t)).abs()));
    assert!(worst < 1e-10, "max deviation from closed form: {worst}");
}

#[test]
fn minor_gain_matches_closed_form_across_parameter_sets() {
    let cases = [
        MarketParams {
            a: 1.0,
            q: 0.5,
            eps: 2.0,
            c: 0.3,
            horizon: 2.0,
            ..MarketParams::default()
        }
        .with_size(1.0, 0.5)
        .unwrap(),
        // Large terminal weight: |y(T)| > delta, coth branch.
        MarketParams {
            c: 10.0,
            ..MarketParams::default()
        },
        MarketParams {
            a: 0.3,
            q: 0.0,
            eps: 4.0,
            c: 1.0,
            horizon: 0.5,
            ..MarketParams::default()
        }
        .with_size(0.3, 0.2)
        .unwrap(),
    ];
    for p in &cases {
        let steps = 2000;
        let phi = solve_minor_phi(p, steps).unwrap();
        let grid = riccati::uniform_grid(p.horizon, steps);
        let worst = grid
            .iter()
            .zip(&phi)
            .fold(0.0f64, |m, (&t, &v)| m.max((v - phi_closed_form(p, t)).abs()));
        assert!(worst < 1e-9, "max deviation {worst} for {p:?}");
    }
}

#[test]
fn equilibrium_terminal_value_is_a_fixed_point() {
    // eps = q^2 with c chosen so phi(T) sits exactly on the lower
    // equilibrium b - delta = 0: the path is constant.
    let p = MarketParams {
        q: 2.0,
        eps: 4.0,
        c: 0.0,
        ..MarketParams::default()
    };
    let phi = solve_minor_phi(&p, 500).unwrap();
    assert!(phi.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn step_halving_shows_fourth_order_convergence() {
    // Errors against a fine reference must shrink by ~16x per halving;
    // require at least 8x to allow roundoff headroom.
    let p = MarketParams::default();
    let reference = solve(&p, StrategyMode::DerivationConsistent, 8000).unwrap();
    let mut prev_err_phi = f64::NAN;
    let mut prev_err_phi0 = f64::NAN;
    for steps in [250usize, 500, 1000] {
        let rs = solve(&p, StrategyMode::DerivationConsistent, steps).unwrap();
        // Compare on the coarse grid; reference grid points coincide.
        let stride = 8000 / steps;
        let ref_phi: Vec<f64> = (0..=steps).map(|k| reference.phi[k * stride]).collect();
        let ref_phi0: Vec<f64> = (0..=steps).map(|k| reference.phi0[k * stride]).collect();
        let err_phi = max_abs_diff(&rs.phi, &ref_phi);
        let err_phi0 = max_abs_diff(&rs.phi0, &ref_phi0);
        if prev_err_phi.is_finite() {
            assert!(
                prev_err_phi / err_phi >= 8.0,
                "phi convergence ratio {} at {steps} steps",
                prev_err_phi / err_phi
            );
            assert!(
                prev_err_phi0 / err_phi0 >= 8.0,
                "phi0 convergence ratio {} at {steps} steps",
                prev_err_phi0 / err_phi0
            );
        }
        prev_err_phi = err_phi;
        prev_err_phi0 = err_phi0;
    }
}

#[test]
fn scalar_major_equation_agrees_with_matrix_oracle() {
    // The scalar major coefficient ODE is the restriction of the matrix
    // Riccati equation to its invariant symmetric family; both
    // integrations must agree to well below integration error.
    for p in [
        MarketParams::default(),
        MarketParams {
            c0: 0.5,
            eps0: 4.0,
            q0: 1.5,
            ..MarketParams::default()
        },
        MarketParams::default().with_size(3.0, 0.8).unwrap(),
    ] {
        let a = solve(&p, StrategyMode::DerivationConsistent, 1000).unwrap();
        let b = solve(&p, StrategyMode::MatrixOracle, 1000).unwrap();
        let d = max_abs_diff(&a.phi0, &b.phi0);
        assert!(d <= 1e-8, "scalar vs matrix phi0 diverge by {d} for {p:?}");
    }
}

#[test]
fn matrix_oracle_preserves_structure() {
    // Fig. 5-style parameter set: symmetry and the conserved null
    // direction [1, 1] hold along the whole path, and the terminal value
    // is exact.
    let p = MarketParams::default();
    let sys = ExtendedSystem::from_params(&p).unwrap();
    let steps = 1000;
    let phi = solve_minor_phi(&p, 2 * steps).unwrap();
    let oracle = solve_major_lqr_oracle(&sys, &phi, steps).unwrap();
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
}

#[test]
fn no_major_reduction_matches_classical_benchmark() {
    // With G = 0 the minor equation must reproduce the classical
    // single-population gain: eta = -phi solves
    // eta' = 2(a+q) eta + eta^2 - (eps - q^2), eta(T) = c,
    // integrated here by an independently coded RK4.
    let p = MarketParams {
        c: 0.7,
        ..MarketParams::default()
    }
    .with_size(5.0, 0.0)
    .unwrap();
    let steps = 2000;
    let phi = solve_minor_phi(&p, steps).unwrap();

    let rhs = |eta: f64| 2.0 * (p.a + p.q) * eta + eta * eta - (p.eps - p.q * p.q);
    let dt = p.horizon / steps as f64;
    let mut eta = vec![0.0; steps + 1];
    eta[steps] = p.c;
    for idx in (0..steps).rev() {
        let y = eta[idx + 1];
        let h = -dt;
        let k1 = rhs(y);
        let k2 = rhs(y + 0.5 * h * k1);
        let k3 = rhs(y + 0.5 * h * k2);
        let k4 = rhs(y + h * k3);
        eta[idx] = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let worst = phi
        .iter()
        .zip(&eta)
        .fold(0.0f64, |m, (&f, &e)| m.max((f + e).abs()));
    assert!(worst <= 1e-8, "benchmark residual {worst}");
}

#[test]
fn terminal_conditions_are_bitwise_exact() {
    for mode in [
        StrategyMode::TheoremAsPublished,
        StrategyMode::DerivationConsistent,
        StrategyMode::MatrixOracle,
    ] {
        let p = MarketParams {
            c: 0.25,
            c0: 0.75,
            ..MarketParams::default()
        };
        let rs = solve(&p, mode, 500).unwrap();
        assert_eq!(*rs.phi.last().unwrap(), -p.c);
        assert_eq!(*rs.phi0.last().unwrap(), -p.c0);
    }
}
