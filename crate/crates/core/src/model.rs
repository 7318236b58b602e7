//! Model parameters, market-clearing constraints, and the market state.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Relative tolerance used when checking the clearing identities on
/// externally supplied parameter sets. `derive_clearing` itself produces
/// exact values.
const CLEARING_TOL: f64 = 1e-12;

/// All constants of the interbank market model.
///
/// The pair `(a0, f)` is stored redundantly alongside `(a, g)` and checked
/// for consistency instead of being derived silently, so configuration
/// files are self-documenting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Mean-reversion rate of minor banks (1/time).
    pub a: f64,
    /// Mean-reversion rate of the major bank (1/time); must equal `a * g`.
    pub a0: f64,
    /// Relative size of the minor-bank mass, in [0, 1].
    pub f: f64,
    /// Relative size of the major bank, in [0, 1]; `f + g = 1`.
    pub g: f64,
    /// Transaction-incentive weight of minor banks (1/time).
    pub q: f64,
    /// Transaction-incentive weight of the major bank (1/time).
    pub q0: f64,
    /// Running deviation penalty of minor banks (1/time^2); `q^2 <= eps`.
    pub eps: f64,
    /// Running deviation penalty of the major bank (1/time^2).
    pub eps0: f64,
    /// Terminal deviation penalty of minor banks (1/time).
    pub c: f64,
    /// Terminal deviation penalty of the major bank (1/time).
    pub c0: f64,
    /// Diffusion volatility of minor banks (reserve-units/sqrt(time)).
    pub sigma: f64,
    /// Diffusion volatility of the major bank.
    pub sigma0: f64,
    /// Horizon T (time).
    pub horizon: f64,
    /// Default threshold D (log-reserve units).
    pub threshold: f64,
    /// Initial major log-reserve.
    pub x0_init: f64,
    /// Initial minor log-reserve, shared by all minors.
    pub xi_init: f64,
}

impl Default for MarketParams {
    /// Baseline configuration: a=5, G=0.5 with q=q0=1 and D=-0.65, plus
    /// sigma=sigma0=1, T=1, eps=eps0=10, c=c0=0 and zero initial reserves.
    fn default() -> Self {
        MarketParams {
            a: 5.0,
            a0: 2.5,
            f: 0.5,
            g: 0.5,
            q: 1.0,
            q0: 1.0,
            eps: 10.0,
            eps0: 10.0,
            c: 0.0,
            c0: 0.0,
            sigma: 1.0,
            sigma0: 1.0,
            horizon: 1.0,
            threshold: -0.65,
            x0_init: 0.0,
            xi_init: 0.0,
        }
    }
}

/// Computes `(a0, f)` from `(a, g)` so that the market-clearing identities
/// `a0 = a*g` and `a0 = a - a*f` hold exactly.
pub fn derive_clearing(a: f64, g: f64) -> Result<(f64, f64)> {
    if !a.is_finite() || a <= 0.0 {
        return Err(Error::Range(format!("a must be positive and finite, got {a}")));
    }
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::Range(format!("g must lie in [0, 1], got {g}")));
    }
    Ok((a * g, 1.0 - g))
}

/// Market state `f*x_avg + g*x0`, the common tracking signal and the
/// systemic-event statistic.
#[inline]
pub fn market_state(x_avg: f64, x0: f64, f: f64, g: f64) -> f64 {
    f * x_avg + g * x0
}

impl MarketParams {
    /// Replaces the size parameters with `(a, g)` and the derived
    /// `(a0, f)` satisfying market clearing.
    pub fn with_size(mut self, a: f64, g: f64) -> Result<Self> {
        let (a0, f) = derive_clearing(a, g)?;
        self.a = a;
        self.a0 = a0;
        self.f = f;
        self.g = g;
        Ok(self)
    }

    /// Checks every model invariant, reporting the first violation by name.
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a, self.a0, self.f, self.g, self.q, self.q0, self.eps, self.eps0, self.c,
            self.c0, self.sigma, self.sigma0, self.horizon, self.threshold, self.x0_init,
            self.xi_init,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("all parameters must be finite".into()));
        }
        if self.a <= 0.0 {
            return Err(Error::Range(format!("a must be positive, got {}", self.a)));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Range(format!("T must be positive, got {}", self.horizon)));
        }
        if self.sigma < 0.0 || self.sigma0 < 0.0 {
            return Err(Error::Range("volatilities must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.f) {
            return Err(Error::Range(format!("F must lie in [0, 1], got {}", self.f)));
        }
        if !(0.0..=1.0).contains(&self.g) {
            return Err(Error::Range(format!("G must lie in [0, 1], got {}", self.g)));
        }
        if math::abs(self.f + self.g - 1.0) > CLEARING_TOL {
            return Err(Error::Clearing(format!(
                "F + G must equal 1, got F={} G={}",
                self.f, self.g
            )));
        }
        if math::abs(self.a0 - self.a * self.g) > CLEARING_TOL * math::max(1.0, math::abs(self.a)) {
            return Err(Error::Clearing(format!(
                "a0 must equal a*G, got a0={} a*G={}",
                self.a0,
                self.a * self.g
            )));
        }
        if self.q * self.q > self.eps {
            return Err(Error::Convexity(format!(
                "q^2 <= eps required, got q^2={} eps={}",
                self.q * self.q,
                self.eps
            )));
        }
        if self.eps < 0.0 || self.eps0 < 0.0 || self.c < 0.0 || self.c0 < 0.0 {
            return Err(Error::Range("cost weights must be nonnegative".into()));
        }
        Ok(())
    }

    /// Returns the parameters unchanged iff every invariant holds.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Non-fatal observations. The major-bank convexity condition
    /// `q0^2 <= eps0` is not imposed by the model, so a violation is
    /// surfaced here rather than rejected.
    pub fn warnings(&self) -> Vec<&'static str> {
        let mut w = Vec::new();
        if self.q0 * self.q0 > self.eps0 {
            w.push("q0^2 > eps0: the major bank's running cost is not convex");
        }
        w
    }

    /// Market state at the given averages under these size weights.
    #[inline]
    pub fn market_state(&self, x_avg: f64, x0: f64) -> f64 {
        market_state(x_avg, x0, self.f, self.g)
    }
}
