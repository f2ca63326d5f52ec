//! Initial states drawn from the stationary distribution `∝ exp(−βH)`.
//!
//! The Hamiltonian is separable, so momenta are drawn exactly from their
//! Gaussian marginal and only the positions need a Markov chain. The position
//! weight is `exp(r N Θ²)` with `r = n̄ / n̄_c`.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::state::{wrap_angle, PhaseState};

/// Proposal widths at or above this value are replaced by uniform proposals.
pub const MAX_WIDTH: f64 = PI;

/// Longest measured segment, as a multiple of the nominal one.
const MAX_EXTENSION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Burn-in length in sweeps per atom (total sweeps = this × N).
    pub burn_in_sweeps_per_atom: usize,
    /// Acceptance rate the width adaptation aims for.
    pub target_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in_sweeps_per_atom: 100,
            target_acceptance: 0.5,
        }
    }
}

/// Outcome of a burn-in run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurnDiagnostics {
    /// Acceptance rate over the frozen-width half of the chain.
    pub acceptance: f64,
    /// Frozen proposal width.
    pub width: f64,
    /// The width hit [`MAX_WIDTH`] and proposals are uniform.
    pub saturated: bool,
    /// Integrated autocorrelation time of Θ, in sweeps.
    pub theta_iat: f64,
    pub sweeps: usize,
}

impl BurnDiagnostics {
    fn check(&self) -> Result<()> {
        if self.acceptance < 0.1 || (self.acceptance > 0.9 && !self.saturated) {
            return Err(Error::SamplerNotConverged(format!(
                "acceptance {:.3} outside [0.1, 0.9] at width {:.3}",
                self.acceptance, self.width
            )));
        }
        if !self.theta_iat.is_finite() {
            return Err(Error::SamplerNotConverged(
                "autocorrelation time of theta is not finite".into(),
            ));
        }
        Ok(())
    }
}

/// Single-site Metropolis chain over positions.
struct PositionChain {
    x: Vec<f64>,
    cos_sum: f64,
    /// `r / N`, so that the log weight is `coupling · (Σ cos)²`.
    coupling: f64,
    width: f64,
}

impl PositionChain {
    fn new<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Self {
        let n = params.n_atoms;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
        let cos_sum = x.iter().map(|v| v.cos()).sum();
        Self {
            x,
            cos_sum,
            coupling: params.pump_ratio() / n as f64,
            width: 1.0,
        }
    }

    fn saturated(&self) -> bool {
        self.width >= MAX_WIDTH
    }

    /// One sweep of N single-site proposals; returns the number accepted.
    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let mut accepted = 0;
        for i in 0..self.x.len() {
            let old = self.x[i];
            let new = if self.saturated() {
                rng.random::<f64>() * TAU
            } else {
                let z: f64 = StandardNormal.sample(rng);
                wrap_angle(old + self.width * z)
            };
            let c_old = old.cos();
            let c_new = new.cos();
            let s_new = self.cos_sum - c_old + c_new;
            let log_ratio = self.coupling * (s_new * s_new - self.cos_sum * self.cos_sum);
            if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
                self.x[i] = new;
                self.cos_sum = s_new;
                accepted += 1;
            }
        }
        // refresh to keep the running sum from drifting
        self.cos_sum = self.x.iter().map(|v| v.cos()).sum();
        accepted
    }

    fn theta(&self) -> f64 {
        self.cos_sum / self.x.len() as f64
    }
}

/// Integrated autocorrelation time with Sokal's self-consistent window (c = 5).
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return f64::NAN;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        // a frozen observable carries no memory
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c = series[..n - lag]
            .iter()
            .zip(&series[lag..])
            .map(|(a, b)| (a - mean) * (b - mean))
            .sum::<f64>()
            / ((n - lag) as f64 * var);
        tau += 2.0 * c;
        if lag as f64 >= 5.0 * tau {
            return tau.max(1.0);
        }
    }
    // window never closed: the chain is too short for its correlation time
    f64::INFINITY
}

fn run_burn_in<R: Rng + ?Sized>(
    chain: &mut PositionChain,
    sweeps: usize,
    target: f64,
    rng: &mut R,
) -> Result<BurnDiagnostics> {
    if sweeps == 0 {
        return Err(Error::SamplerNotConverged("chain length is zero".into()));
    }
    let n = chain.x.len();
    let adapt = sweeps.div_ceil(2);
    for k in 0..adapt {
        let rate = chain.sweep(rng) as f64 / n as f64;
        let gain = 1.0 / (1.0 + k as f64).sqrt();
        chain.width = (chain.width * (gain * (rate - target)).exp()).clamp(1e-4, MAX_WIDTH);
    }
    let measure = (sweeps - adapt).max(1);
    let mut accepted = 0usize;
    let mut thetas = Vec::with_capacity(measure);
    let mut theta_iat = f64::INFINITY;
    // short chains are extended until the autocorrelation window closes
    while thetas.len() < MAX_EXTENSION * measure {
        let more = thetas.len().max(measure);
        for _ in 0..more {
            accepted += chain.sweep(rng);
            thetas.push(chain.theta());
        }
        theta_iat = integrated_autocorrelation(&thetas);
        if theta_iat.is_finite() {
            break;
        }
    }
    Ok(BurnDiagnostics {
        acceptance: accepted as f64 / (thetas.len() * n) as f64,
        width: chain.width,
        saturated: chain.saturated(),
        theta_iat,
        sweeps: adapt + thetas.len(),
    })
}

/// Runs and diagnoses a burn-in of `sweeps` sweeps at the given parameters.
pub fn metropolis_burn<R: Rng + ?Sized>(
    params: &ModelParams,
    sweeps: usize,
    rng: &mut R,
) -> Result<BurnDiagnostics> {
    params.validate()?;
    let mut chain = PositionChain::new(params, rng);
    let diag = run_burn_in(
        &mut chain,
        sweeps,
        SamplerConfig::default().target_acceptance,
        rng,
    )?;
    diag.check()?;
    Ok(diag)
}

/// Draws one phase-space point from the stationary distribution at `params`.
pub fn sample_equilibrium<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<PhaseState> {
    params.validate()?;
    let n = params.n_atoms;
    let x = if params.nbar == 0.0 {
        (0..n).map(|_| rng.random::<f64>() * TAU).collect()
    } else {
        let mut chain = PositionChain::new(params, rng);
        let sweeps = cfg.burn_in_sweeps_per_atom * n;
        let diag = run_burn_in(&mut chain, sweeps, cfg.target_acceptance, rng)?;
        diag.check()?;
        // decorrelate from the measured segment
        for _ in 0..diag.theta_iat.ceil() as usize {
            chain.sweep(rng);
        }
        chain.x
    };
    let sigma = params.derived().sigma2_p.sqrt();
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParams(format!("momentum width: {e}")))?;
    let p = (0..n).map(|_| normal.sample(rng)).collect();
    PhaseState::new(x, p, 0.0)
}
