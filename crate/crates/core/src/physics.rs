//! Cavity QED parameters and closed-form model quantities.
//!
//! Rates are stored as ordinary frequencies (`g0 / 2π` etc., in Hz). Every
//! quantity derived here is a ratio of rates, so the common `2π` drops out.
//!
//! The manifold model describes how many of `N` trapped atoms sit in the
//! probe-coupled hyperfine manifold. Pumping into that manifold happens at a
//! constant rate `γ₀→₁` regardless of how many atoms are already there, while
//! pumping out of it from `k` coupled atoms happens at `γ₁→₀ / k²`. The
//! stationary distribution of that chain is `p_k ∝ (k!)² yᵏ` with
//! `y = γ₀→₁ / γ₁→₀`, and the empty-manifold probability `p₀` sets the mean
//! transmission plateau for `N` atoms.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest atom number the manifold tables accept.
pub const MAX_TABULATED_ATOMS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityParams {
    /// Peak single-atom coupling `g₀/2π` (Hz).
    pub g0: f64,
    /// Cavity field decay `κ/2π` (Hz).
    pub kappa: f64,
    /// Atomic dipole decay `γ/2π` (Hz).
    pub gamma: f64,
    /// Cavity detuning from the atomic line (Hz). Metadata only.
    pub delta_c: f64,
    /// Probe detuning from the atom-cavity resonance (Hz). Metadata only.
    pub delta_4: f64,
    /// Mean intracavity photon number with no atoms present.
    pub nbar_empty: f64,
    /// Mode waist (m).
    pub w0: f64,
    /// Probe wavelength (m).
    pub lambda0: f64,
}

impl Default for CavityParams {
    fn default() -> Self {
        Self {
            g0: 24.0e6,
            kappa: 4.2e6,
            gamma: 2.6e6,
            delta_c: 0.0,
            delta_4: 4.0e6,
            nbar_empty: 0.02,
            w0: 23.4e-6,
            lambda0: 852.4e-9,
        }
    }
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cavity.g0", self.g0),
            ("cavity.kappa", self.kappa),
            ("cavity.gamma", self.gamma),
            ("cavity.nbar_empty", self.nbar_empty),
            ("cavity.w0", self.w0),
            ("cavity.lambda0", self.lambda0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(
                    name,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        for (name, v) in [
            ("cavity.delta_c", self.delta_c),
            ("cavity.delta_4", self.delta_4),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        Ok(())
    }

    /// `g₀ > max(κ, γ)`.
    pub fn is_strong_coupling(&self) -> bool {
        self.g0 > self.kappa.max(self.gamma)
    }

    /// Coupling for an atom at transverse distance `rho` and axial position
    /// `z` in the standing-wave mode, scaled by the dimensionless transition
    /// factor `g_factor`.
    pub fn coupling_at(&self, rho: f64, z: f64, g_factor: f64) -> f64 {
        let k0 = 2.0 * PI / self.lambda0;
        let radial = (-2.0 * rho * rho / (self.w0 * self.w0)).exp();
        self.g0 * g_factor * (k0 * z).sin() * radial
    }

    /// Single-atom cooperativity `C₁ = g² / (2κγ)` for coupling `g`.
    pub fn cooperativity(&self, g: f64) -> f64 {
        g * g / (2.0 * self.kappa * self.gamma)
    }

    /// Weak-drive transmission suppression `f ≈ 4C₁²` for coupling `g`.
    pub fn suppression(&self, g: f64) -> f64 {
        let c1 = self.cooperativity(g);
        4.0 * c1 * c1
    }

    /// One-atom normalized intensity `I₁/I₀ = 1/f` at peak coupling.
    pub fn one_atom_intensity(&self) -> f64 {
        1.0 / self.suppression(self.g0)
    }

    pub fn critical_numbers(&self) -> CriticalNumbers {
        let g2 = self.g0 * self.g0;
        CriticalNumbers {
            photon: self.gamma * self.gamma / (2.0 * g2),
            atom: 2.0 * self.kappa * self.gamma / g2,
        }
    }

    /// Empty-cavity field amplitude `√n̄`, the scale between normalized
    /// signal and `|⟨a⟩|`.
    pub fn empty_amplitude(&self) -> f64 {
        self.nbar_empty.sqrt()
    }
}

/// Critical photon number `n₀` and critical atom number `N₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalNumbers {
    pub photon: f64,
    pub atom: f64,
}

/// Normalized intracavity intensity `I_k / I₀` with `k` atoms in the coupled
/// manifold. `I₀` is the empty-cavity level; `I_k = I₁ / k²` otherwise.
pub fn intensity_level(k: usize, i1_over_i0: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        let k = k as f64;
        i1_over_i0 / (k * k)
    }
}

/// Rates out of a state with `k` of `n` atoms coupled: `(up, down)`.
///
/// The upward channel is closed once every atom is coupled.
pub fn pumping_rates(gamma_10: f64, y: f64, k: usize, n: usize) -> (f64, f64) {
    let up = if k < n { y * gamma_10 } else { 0.0 };
    let down = if k > 0 {
        let kf = k as f64;
        gamma_10 / (kf * kf)
    } else {
        0.0
    };
    (up, down)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldModel {
    /// `γ₀→₁ / γ₁→₀`.
    pub y: f64,
    pub n_max: usize,
}

impl ManifoldModel {
    pub fn new(y: f64, n_max: usize) -> Result<Self> {
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::param(
                "y",
                format!("must be finite and > 0, got {y}"),
            ));
        }
        if n_max > MAX_TABULATED_ATOMS {
            return Err(Error::TabulationLimit {
                n: n_max,
                n_max: MAX_TABULATED_ATOMS,
            });
        }
        Ok(Self { y, n_max })
    }

    fn check(&self, n_atoms: usize) -> Result<()> {
        if n_atoms > self.n_max {
            return Err(Error::TabulationLimit {
                n: n_atoms,
                n_max: self.n_max,
            });
        }
        Ok(())
    }

    /// Stationary probabilities `p_k`, `k = 0..=n_atoms`.
    ///
    /// Weights `(k!)² yᵏ` are accumulated in log space and normalized with a
    /// log-sum-exp, so large `N` or large `y` do not overflow.
    pub fn steady_state_distribution(&self, n_atoms: usize) -> Result<Vec<f64>> {
        self.check(n_atoms)?;
        let log_w = self.log_weights(n_atoms);
        let log_z = log_sum_exp(&log_w);
        Ok(log_w.into_iter().map(|lw| (lw - log_z).exp()).collect())
    }

    /// Normalized transmission plateau for `n_atoms` trapped atoms, `p₀^(N)`.
    pub fn plateau_prediction(&self, n_atoms: usize) -> Result<f64> {
        self.check(n_atoms)?;
        // p₀ = 1 / Σ (k!)² yᵏ and the k = 0 log-weight is zero
        Ok((-log_sum_exp(&self.log_weights(n_atoms))).exp())
    }

    fn log_weights(&self, n_atoms: usize) -> Vec<f64> {
        let ln_y = self.y.ln();
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain((1..=n_atoms).map(|k| {
                acc += 2.0 * (k as f64).ln() + ln_y;
                acc
            }))
            .collect()
    }

    /// `(N, p₀^(N))` for `N = 0..=n_max`.
    pub fn plateau_table(&self) -> Vec<(usize, f64)> {
        (0..=self.n_max)
            .map(|n| (n, self.plateau_prediction(n).expect("n within n_max")))
            .collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let peak = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    peak + xs.iter().map(|x| (x - peak).exp()).sum::<f64>().ln()
}
