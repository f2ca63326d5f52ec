//! Physical parameters in cavity units and the closed-form quantities derived
//! from them.
//!
//! Everything downstream works with the dimensionless variables
//! `X = k x` (wrapped to `[0, 2π)`), `P = p / ħk` and `τ = κ t`. In these units
//! the N-body dynamics reads
//!
//! ```text
//! dX_i = 2ε P_i dτ
//! dP_i = [2δ n̄ Θ sin X_i − (γ̃/N) sin X_i Σ_j sin X_j P_j] dτ + sin X_i √(2n̄/N) dW
//! ```
//!
//! with one Wiener increment `dW` shared by all particles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensionless model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Cavity detuning in units of the linewidth, `Δ_c / κ`. Negative for cooling.
    pub delta: f64,
    /// Recoil frequency in units of the linewidth, `ω_r / κ`.
    pub eps: f64,
    /// Pump parameter `n̄ = N S² / (κ² + Δ_c²)`.
    pub nbar: f64,
    /// Number of atoms.
    pub n_atoms: usize,
}

/// Quantities fixed by a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    /// `ħκβ = −4δ / (1 + δ²)`.
    pub beta_tilde: f64,
    /// Self-organization threshold `(1 + δ²) / (4δ²)`.
    pub nbar_c: f64,
    /// Stationary momentum variance in units of `(ħk)²`.
    pub sigma2_p: f64,
    /// Collective friction rate `n̄ Γ / κ`.
    pub gamma_tilde: f64,
}

/// Recoil ratio used throughout the reference configuration (`κ ≈ 390 ω_r`).
pub const REFERENCE_EPS: f64 = 1.0 / 390.0;

impl ModelParams {
    pub fn new(delta: f64, eps: f64, nbar: f64, n_atoms: usize) -> Result<Self> {
        let p = Self {
            delta,
            eps,
            nbar,
            n_atoms,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_detuning(self.delta)?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.eps >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "eps = {} violates kappa > omega_r (Fokker-Planck regime)",
                self.eps
            )));
        }
        if !(self.nbar >= 0.0 && self.nbar.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "nbar must be non-negative, got {}",
                self.nbar
            )));
        }
        if self.n_atoms == 0 {
            return Err(Error::InvalidParams("n_atoms must be at least 1".into()));
        }
        Ok(())
    }

    pub fn derived(&self) -> DerivedParams {
        // validated on construction; the formulas are only meaningful for delta < 0
        let beta_tilde = beta_tilde(self.delta);
        DerivedParams {
            beta_tilde,
            nbar_c: nbar_c(self.delta),
            sigma2_p: 1.0 / (2.0 * self.eps * beta_tilde),
            gamma_tilde: 2.0 * self.nbar * self.eps * beta_tilde,
        }
    }

    /// Same detuning and recoil ratio, different pump.
    pub fn with_nbar(&self, nbar: f64) -> Result<Self> {
        Self::new(self.delta, self.eps, nbar, self.n_atoms)
    }

    pub fn with_atoms(&self, n_atoms: usize) -> Result<Self> {
        Self::new(self.delta, self.eps, self.nbar, n_atoms)
    }

    /// `n̄ / n̄_c`.
    pub fn pump_ratio(&self) -> f64 {
        self.nbar / nbar_c(self.delta)
    }

    /// Noise amplitude `√(2 n̄ / N)` of the shared Wiener increment.
    pub fn noise_amplitude(&self) -> f64 {
        (2.0 * self.nbar / self.n_atoms as f64).sqrt()
    }

    /// `E / ħκ = Σ ε P² + δ n̄ N Θ²`.
    pub fn energy(&self, p2_sum: f64, theta: f64) -> f64 {
        let n = self.n_atoms as f64;
        self.eps * p2_sum + self.delta * self.nbar * n * theta * theta
    }
}

/// Validates and derives in one call.
pub fn derive_params(p: &ModelParams) -> Result<DerivedParams> {
    p.validate()?;
    Ok(p.derived())
}

fn check_detuning(delta: f64) -> Result<()> {
    if delta < 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "detuning must be negative (cooling regime), got {delta}"
        )))
    }
}

fn beta_tilde(delta: f64) -> f64 {
    -4.0 * delta / (1.0 + delta * delta)
}

fn nbar_c(delta: f64) -> f64 {
    (1.0 + delta * delta) / (4.0 * delta * delta)
}

/// Threshold pump `n̄_c(δ)` for a single detuning.
pub fn threshold(delta: f64) -> Result<f64> {
    check_detuning(delta)?;
    Ok(nbar_c(delta))
}

/// Phase boundary `(δ, n̄_c(δ))` sampled on the given detunings.
pub fn threshold_curve(deltas: &[f64]) -> Result<Vec<(f64, f64)>> {
    deltas
        .iter()
        .map(|&d| threshold(d).map(|c| (d, c)))
        .collect()
}

/// Pump after a sudden detuning change at fixed laser amplitude.
///
/// `N S²` is held fixed, so `n̄ (1 + δ²)` is invariant.
pub fn path_b_convert(delta_i: f64, nbar_i: f64, delta_f: f64) -> Result<f64> {
    check_detuning(delta_i)?;
    check_detuning(delta_f)?;
    if !(nbar_i >= 0.0 && nbar_i.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "nbar must be non-negative, got {nbar_i}"
        )));
    }
    if delta_i == delta_f {
        return Ok(nbar_i);
    }
    Ok(nbar_i * (1.0 + delta_i * delta_i) / (1.0 + delta_f * delta_f))
}
