//! Simulation and inference for real-time counting of atoms trapped in a
//! strongly coupled optical cavity.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`sim`] draws exact event trajectories of the joint process
//!    (trapped atoms `N`, coupled atoms `k`): fast optical-pumping telegraph
//!    switching of `k` plus slow independent trap loss of `N`.
//! 2. [`detection`] renders a trajectory to the normalized transmission
//!    signal, integrates it onto a sample grid, adds noise and applies the
//!    detector and digital low-pass stages.
//! 3. [`analysis`] builds amplitude histograms, locates the transmission
//!    plateaus and turns a batch of traces into populations `Φ_N(t)`.
//! 4. [`fit`] propagates the pure-death model in closed form and fits the
//!    single per-atom loss rate `Γ` to those populations.
//!
//! [`physics`] holds the closed-form cavity and manifold quantities that
//! predict where the plateaus sit.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        let tol: f64 = $tol;
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }};
}

pub mod analysis;
pub mod config;
pub mod detection;
pub mod error;
pub mod fit;
pub mod io;
pub mod physics;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
