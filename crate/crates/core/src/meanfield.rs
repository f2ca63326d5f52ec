//! Mean-field single-particle dynamics represented by a cloud of sample points.
//!
//! Each sample point feels its own self-interaction plus the field of the
//! other `N − 1` atoms through the ensemble moments `⟨cos X⟩` and
//! `⟨P sin X⟩`; the velocity-dependent part of the collective friction enters
//! the mean-field potential with coefficient `−εβ̃/δ`. The dissipator acts on
//! each point separately with independent noise.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nbody::{IntegratorConfig, TrajectoryAbort};
use crate::observables::Snapshot;
use crate::params::ModelParams;
use crate::recorder::RecordingGrid;
use crate::rng::SimRng;
use crate::state::wrap_angle;

/// Default number of sample points representing the one-body distribution.
pub const DEFAULT_SAMPLES: usize = 10_000;

/// Sample points per independently seeded block.
const BLOCK: usize = 1024;

/// `(⟨cos X⟩, ⟨P sin X⟩)` over the ensemble.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub cos_mean: f64,
    pub psin_mean: f64,
}

/// Mean-field force on a point at `x`:
/// `(2δn̄/N) [cos X + (N − 1)(⟨cos X⟩ − (εβ̃/δ)⟨P sin X⟩)] sin X`.
pub fn mf_force(x: f64, m: &Moments, params: &ModelParams) -> f64 {
    let (s, c) = x.sin_cos();
    mf_force_trig(s, c, collective_term(m, params, true), params)
}

fn collective_term(m: &Moments, params: &ModelParams, dissipative: bool) -> f64 {
    let n = params.n_atoms as f64;
    let cross = if dissipative {
        params.eps * params.derived().beta_tilde / params.delta
    } else {
        0.0
    };
    (n - 1.0) * (m.cos_mean - cross * m.psin_mean)
}

#[inline]
fn mf_force_trig(s: f64, c: f64, collective: f64, params: &ModelParams) -> f64 {
    2.0 * params.delta * params.nbar / params.n_atoms as f64 * (c + collective) * s
}

/// Sample-point representation of the one-body distribution.
#[derive(Debug, Clone)]
pub struct MfEnsemble {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub tau: f64,
    /// Physical atom number entering `(N − 1)` and the `1/N` dissipator.
    pub n_physical: usize,
    moments: Moments,
    frozen: Option<Moments>,
    sin: Vec<f64>,
    cos: Vec<f64>,
    rngs: Vec<SimRng>,
}

fn block_rngs(len: usize, seed: u64, stream: u64) -> Vec<SimRng> {
    (0..len.div_ceil(BLOCK))
        .map(|b| {
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ (b as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            r.set_stream(stream);
            r
        })
        .collect()
}

impl MfEnsemble {
    /// Builds an ensemble; `seed`/`stream` key the per-block noise generators.
    pub fn new(x: Vec<f64>, p: Vec<f64>, n_physical: usize, seed: u64, stream: u64) -> Result<Self> {
        if x.len() != p.len() || x.is_empty() {
            return Err(Error::InvalidParams("mean-field ensemble needs matching, non-empty arrays".into()));
        }
        if n_physical == 0 {
            return Err(Error::InvalidParams("physical atom number must be positive".into()));
        }
        let len = x.len();
        let mut ens = Self {
            x: x.into_iter().map(wrap_angle).collect(),
            p,
            tau: 0.0,
            n_physical,
            moments: Moments::default(),
            frozen: None,
            sin: vec![0.0; len],
            cos: vec![0.0; len],
            rngs: block_rngs(len, seed, stream),
        };
        ens.refresh();
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Moments of the current sample points.
    pub fn moments(&self) -> Moments {
        self.moments
    }

    /// Pins the moments seen by the force to fixed values (diagnostics only).
    pub fn freeze_moments(&mut self, m: Option<Moments>) {
        self.frozen = m;
    }

    fn refresh(&mut self) {
        self.sin
            .par_chunks_mut(BLOCK)
            .zip(self.cos.par_chunks_mut(BLOCK))
            .zip(self.x.par_chunks(BLOCK))
            .for_each(|((s, c), x)| {
                for ((s, c), x) in s.iter_mut().zip(c.iter_mut()).zip(x) {
                    let (sv, cv) = x.sin_cos();
                    *s = sv;
                    *c = cv;
                }
            });
        self.moments = self.reduce_moments();
    }

    /// Order-independent reduction: fixed blocks summed in block order.
    fn reduce_moments(&self) -> Moments {
        let partial: Vec<(f64, f64)> = self
            .cos
            .par_chunks(BLOCK)
            .zip(self.sin.par_chunks(BLOCK))
            .zip(self.p.par_chunks(BLOCK))
            .map(|((c, s), p)| {
                let cs: f64 = c.iter().sum();
                let ps: f64 = s.iter().zip(p).map(|(s, p)| s * p).sum();
                (cs, ps)
            })
            .collect();
        let (cs, ps) = partial
            .iter()
            .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
        let m = self.len() as f64;
        Moments {
            cos_mean: cs / m,
            psin_mean: ps / m,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::from_particles(self.tau, self.moments.cos_mean, &self.sin, &self.p)
    }
}

/// Advances every sample point by `cfg.dt`: velocity Verlet in the mean field
/// of the start-of-step moments, then friction `−(γ̃/N) sin²X P` and
/// independent noise `sin X √(2n̄/N) ΔW_i` at the post-Verlet positions.
/// Without dissipation the `⟨P sin X⟩` part of the field is dropped as well.
pub fn mf_step(ens: &mut MfEnsemble, params: &ModelParams, cfg: &IntegratorConfig) -> Result<()> {
    let mut p = *params;
    p.n_atoms = ens.n_physical;
    let moments = ens.frozen.unwrap_or(ens.moments);
    let collective = collective_term(&moments, &p, cfg.gamma_on);
    let dt = cfg.dt;
    let h = 0.5 * dt;
    let stream = 2.0 * p.eps * dt;
    let friction = if cfg.gamma_on {
        p.derived().gamma_tilde / p.n_atoms as f64
    } else {
        0.0
    };
    let noise = if cfg.gamma_on { p.noise_amplitude() * dt.sqrt() } else { 0.0 };
    let gamma_on = cfg.gamma_on;

    ens.x
        .par_chunks_mut(BLOCK)
        .zip(ens.p.par_chunks_mut(BLOCK))
        .zip(ens.sin.par_chunks_mut(BLOCK))
        .zip(ens.cos.par_chunks_mut(BLOCK))
        .zip(ens.rngs.par_iter_mut())
        .for_each(|((((xs, ps), ss), cs), rng)| {
            for (((x, pv), s), c) in xs.iter_mut().zip(ps.iter_mut()).zip(ss.iter_mut()).zip(cs.iter_mut()) {
                *pv += h * mf_force_trig(*s, *c, collective, &p);
                let mut nx = *x + stream * *pv;
                if nx >= TAU {
                    nx -= TAU;
                } else if nx < 0.0 {
                    nx += TAU;
                }
                if !(0.0..TAU).contains(&nx) {
                    nx = wrap_angle(nx);
                }
                *x = nx;
                let (sv, cv) = nx.sin_cos();
                *s = sv;
                *c = cv;
                *pv += h * mf_force_trig(sv, cv, collective, &p);
                if gamma_on {
                    let z: f64 = StandardNormal.sample(rng);
                    *pv += -friction * sv * sv * *pv * dt + sv * noise * z;
                }
            }
        });
    ens.tau += dt;
    ens.moments = ens.reduce_moments();
    if !ens.moments.cos_mean.is_finite() || !ens.moments.psin_mean.is_finite() {
        return Err(Error::NonFinite {
            tau: ens.tau,
            what: "mean-field moments".into(),
        });
    }
    Ok(())
}

/// Integrates a mean-field ensemble through the recording grid.
pub fn run_meanfield(
    mut ens: MfEnsemble,
    params: &ModelParams,
    cfg: IntegratorConfig,
    grid: &RecordingGrid,
) -> std::result::Result<Vec<Snapshot>, TrajectoryAbort> {
    let mut out = Vec::with_capacity(grid.len());
    let mut done = 0u64;
    let start = ens.tau;
    for &target in grid.steps() {
        while done < target {
            if let Err(e) = mf_step(&mut ens, params, &cfg) {
                return Err(TrajectoryAbort {
                    tau: ens.tau,
                    reason: e.to_string(),
                    partial: out,
                });
            }
            done += 1;
        }
        ens.tau = start + done as f64 * cfg.dt;
        out.push(ens.snapshot());
    }
    Ok(out)
}

/// `I₁(k)/I₀(k)`, the mean of `cos X` under the weight `e^{k cos X}`.
pub fn bessel_ratio(k: f64) -> f64 {
    // trapezoid rule on a periodic integrand converges geometrically
    let n = 512;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let c = (TAU * i as f64 / n as f64).cos();
        let w = (k * (c - 1.0)).exp();
        num += c * w;
        den += w;
    }
    num / den
}

/// Self-consistent mean-field order parameter `Θ₀ = I₁(2rΘ₀)/I₀(2rΘ₀)`,
/// `r = n̄/n̄_c`; zero at and below threshold.
pub fn self_consistent_theta(pump_ratio: f64) -> f64 {
    if pump_ratio <= 1.0 {
        return 0.0;
    }
    let mut t = 1.0;
    for _ in 0..10_000 {
        let next = bessel_ratio(2.0 * pump_ratio * t);
        if (next - t).abs() < 1e-15 {
            return next;
        }
        t = next;
    }
    t
}

/// Draws `m` independent points from the mean-field thermal state at
/// `params`: momenta Gaussian with variance `σ²_P`, positions
/// `∝ exp(2rΘ₀ cos X)` with the sign of `Θ₀` picked at random.
pub fn sample_meanfield_equilibrium<R: Rng + ?Sized>(
    params: &ModelParams,
    m: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    if m == 0 {
        return Err(Error::InvalidParams("mean-field sample size must be positive".into()));
    }
    let theta0 = self_consistent_theta(params.pump_ratio());
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let k = 2.0 * params.pump_ratio() * theta0;
    let x = (0..m)
        .map(|_| loop {
            let x = rng.random::<f64>() * TAU;
            // acceptance exp(k (cos X − 1)) ≤ 1
            if k == 0.0 || rng.random::<f64>() < (k * (x.cos() - 1.0)).exp() {
                break if sign > 0.0 { x } else { wrap_angle(x + std::f64::consts::PI) };
            }
        })
        .collect();
    let normal = Normal::new(0.0, params.derived().sigma2_p.sqrt())
        .map_err(|e| Error::InvalidParams(format!("momentum width: {e}")))?;
    let p = (0..m).map(|_| normal.sample(rng)).collect();
    Ok((x, p))
}
