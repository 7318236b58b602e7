//! Core model of an interbank lending market with one major bank and a
//! large population of minor banks.
//!
//! The crate computes equilibrium borrowing/lending feedback strategies
//! from backward Riccati-type ODEs, simulates the market by Euler-Maruyama
//! Monte Carlo with deterministic per-bank random substreams, and turns
//! path ensembles into default and systemic-risk estimates.
//!
//! The crate is `no_std`-compatible (with `alloc`); the companion
//! `interbank-cli` crate carries file formats, parallel execution, and the
//! command-line interface.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod experiments;
pub(crate) mod math;
pub mod model;
pub mod riccati;
pub mod risk;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};
pub use model::MarketParams;
pub use riccati::{RiccatiSolution, StrategyMode};
pub use risk::{Estimate, RiskReport};
pub use sim::{PathEnsemble, RngPolicy, SimGrid, SimOptions};
