//! N-body stochastic dynamics with the collective cavity friction.
//!
//! One step of the default scheme is a velocity-Verlet update of the
//! Hamiltonian part followed by a dissipative substep that applies friction
//! and noise along the single mode `s_i = sin X_i`, with `s` frozen at the
//! post-Verlet positions. The friction kernel `(γ̃/N) s sᵀ` and the diffusion
//! matrix `(2n̄/N) s sᵀ` are both rank one, so the substep costs O(N) and
//! consumes exactly one Gaussian number.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compensated::{dot2, Dd, NeumaierSum};
use crate::error::{Error, Result};
use crate::observables::Snapshot;
use crate::params::ModelParams;
use crate::recorder::RecordingGrid;
use crate::state::{wrap_angle, PhaseState};

/// Particle count from which Θ is accumulated with compensation.
const COMPENSATED_FROM: usize = 1000;

/// Largest accepted value of `dt` times any of the fast rates.
pub const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    StrangSplit,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// `false` switches off friction and noise (Hamiltonian dynamics).
    pub gamma_on: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            scheme: Scheme::StrangSplit,
            gamma_on: true,
        }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, scheme: Scheme, gamma_on: bool) -> Self {
        Self {
            dt,
            scheme,
            gamma_on,
        }
    }

    /// Checks `dt` against the streaming rate `2ε max|P|`, the friction rate
    /// `γ̃` and the trap frequency `√(4ε|δ|n̄)`.
    pub fn check_stability(&self, params: &ModelParams, state: &PhaseState) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::UnstableStep {
                dt: self.dt,
                reason: "dt must be positive".into(),
            });
        }
        let d = params.derived();
        let p_max = state.p.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let rates = [
            ("streaming", 2.0 * params.eps * p_max),
            ("friction", d.gamma_tilde),
            (
                "trap frequency",
                (4.0 * params.eps * params.delta.abs() * params.nbar).sqrt(),
            ),
        ];
        for (name, rate) in rates {
            if rate * self.dt > STABILITY_LIMIT {
                return Err(Error::UnstableStep {
                    dt: self.dt,
                    reason: format!("{name} rate {rate:.4} times dt exceeds {STABILITY_LIMIT}"),
                });
            }
        }
        Ok(())
    }
}

#[inline]
fn order_parameter(cos: &[f64]) -> f64 {
    let n = cos.len();
    let sum = if n >= COMPENSATED_FROM {
        cos.iter().copied().collect::<NeumaierSum>().value()
    } else {
        cos.iter().sum()
    };
    sum / n as f64
}

/// Conservative drift `2δn̄Θ sin X_i`.
pub fn force(state: &PhaseState, params: &ModelParams) -> Vec<f64> {
    let cos: Vec<f64> = state.x.iter().map(|x| x.cos()).collect();
    let theta = order_parameter(&cos);
    let c = 2.0 * params.delta * params.nbar * theta;
    state.x.iter().map(|x| c * x.sin()).collect()
}

/// Friction drift `−(γ̃/N) sin X_i Σ_j sin X_j P_j`; zero when `gamma_on` is off.
pub fn dissipative_drift(state: &PhaseState, params: &ModelParams, gamma_on: bool) -> Vec<f64> {
    if !gamma_on {
        return vec![0.0; state.len()];
    }
    let g = params.derived().gamma_tilde / state.len() as f64;
    let sin: Vec<f64> = state.x.iter().map(|x| x.sin()).collect();
    let c: f64 = sin.iter().zip(&state.p).map(|(s, p)| s * p).sum();
    sin.iter().map(|s| -g * s * c).collect()
}

/// Stepper for one trajectory. Caches `sin X`, `cos X` and Θ of the current
/// positions between steps.
#[derive(Debug, Clone)]
pub struct NBodyIntegrator {
    params: ModelParams,
    cfg: IntegratorConfig,
    stream: f64,
    kick: f64,
    friction: f64,
    noise: f64,
    sin: Vec<f64>,
    cos: Vec<f64>,
    theta: f64,
}

impl NBodyIntegrator {
    pub fn new(params: ModelParams, cfg: IntegratorConfig, state: &PhaseState) -> Result<Self> {
        params.validate()?;
        if state.len() != params.n_atoms {
            return Err(Error::InvalidParams(format!(
                "state has {} atoms, parameters {}",
                state.len(),
                params.n_atoms
            )));
        }
        cfg.check_stability(&params, state)?;
        let n = params.n_atoms as f64;
        let mut integ = Self {
            params,
            cfg,
            stream: 2.0 * params.eps,
            kick: 2.0 * params.delta * params.nbar,
            friction: params.derived().gamma_tilde / n,
            noise: params.noise_amplitude(),
            sin: vec![0.0; params.n_atoms],
            cos: vec![0.0; params.n_atoms],
            theta: 0.0,
        };
        integ.refresh(state);
        Ok(integ)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    /// `sin X` of the positions the integrator last saw.
    pub fn sines(&self) -> &[f64] {
        &self.sin
    }

    pub fn cosines(&self) -> &[f64] {
        &self.cos
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Per-atom friction coefficient `γ̃/N` (zero when friction is off).
    pub fn friction_rate(&self) -> f64 {
        if self.cfg.gamma_on {
            self.friction
        } else {
            0.0
        }
    }

    /// Amplitude `√(2n̄/N)` of the shared noise (zero when friction is off).
    pub fn noise_amplitude(&self) -> f64 {
        if self.cfg.gamma_on {
            self.noise
        } else {
            0.0
        }
    }

    /// Recomputes the trigonometric cache from `state`.
    pub fn refresh(&mut self, state: &PhaseState) {
        for ((x, s), c) in state.x.iter().zip(&mut self.sin).zip(&mut self.cos) {
            let (sv, cv) = x.sin_cos();
            *s = sv;
            *c = cv;
        }
        self.theta = order_parameter(&self.cos);
    }

    #[inline]
    fn half_kick(&self, p: &mut [f64], h: f64) {
        let c = h * self.kick * self.theta;
        for (p, s) in p.iter_mut().zip(&self.sin) {
            *p += c * s;
        }
    }

    fn drift(&self, state: &mut PhaseState, dt: f64) {
        let c = dt * self.stream;
        for (x, p) in state.x.iter_mut().zip(&state.p) {
            let mut v = *x + c * p;
            if v >= TAU {
                v -= TAU;
            } else if v < 0.0 {
                v += TAU;
            }
            if !(0.0..TAU).contains(&v) {
                v = wrap_angle(v);
            }
            *x = v;
        }
    }

    /// Velocity-Verlet update of the Hamiltonian part over one `dt`.
    pub fn hamiltonian_substep(&mut self, state: &mut PhaseState) {
        let h = 0.5 * self.cfg.dt;
        self.half_kick(&mut state.p, h);
        self.drift(state, self.cfg.dt);
        self.refresh(state);
        self.half_kick(&mut state.p, h);
    }

    /// Friction and shared noise along `s = sin X` with the cached `s`:
    /// `P ← P + s · (−(γ̃/N) dt (s·P) + √(2n̄/N) ΔW)`.
    ///
    /// The scalar `s·P` and the update are carried in double-double precision
    /// so the rounded result equals the correctly rounded exact update.
    pub fn dissipative_substep(&self, state: &mut PhaseState, dw: f64) {
        if !self.cfg.gamma_on {
            return;
        }
        let c = dot2(&self.sin, &state.p);
        let q = (c * -self.friction) * self.cfg.dt + Dd::mul_f64s(self.noise, dw);
        for (p, s) in state.p.iter_mut().zip(&self.sin) {
            *p = (q * *s).add_f64(*p).to_f64();
        }
    }

    /// First-order scheme with every coefficient at the start-of-step positions.
    pub fn euler_maruyama_substep(&mut self, state: &mut PhaseState, dw: f64) {
        let dt = self.cfg.dt;
        let kick = dt * self.kick * self.theta;
        let shift = if self.cfg.gamma_on {
            let c: f64 = self.sin.iter().zip(&state.p).map(|(s, p)| s * p).sum();
            -self.friction * dt * c + self.noise * dw
        } else {
            0.0
        };
        let stream = dt * self.stream;
        for ((x, p), s) in state.x.iter_mut().zip(&mut state.p).zip(&self.sin) {
            *x = wrap_angle(*x + stream * *p);
            *p += (kick + shift) * s;
        }
        self.refresh(state);
    }

    /// Advances by `dt` with a caller-supplied Wiener increment.
    pub fn step_with_increment(&mut self, state: &mut PhaseState, dw: f64) -> Result<()> {
        match self.cfg.scheme {
            Scheme::StrangSplit => {
                self.hamiltonian_substep(state);
                self.dissipative_substep(state, dw);
            }
            Scheme::EulerMaruyama => self.euler_maruyama_substep(state, dw),
        }
        state.tau += self.cfg.dt;
        if !self.theta.is_finite() || state.p.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                tau: state.tau,
                what: "momentum or order parameter".into(),
            });
        }
        Ok(())
    }

    /// Draws the shared increment `ΔW ~ N(0, dt)` and advances by `dt`.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut PhaseState, rng: &mut R) -> Result<()> {
        let dw = if self.cfg.gamma_on {
            let z: f64 = StandardNormal.sample(rng);
            z * self.cfg.dt.sqrt()
        } else {
            0.0
        };
        self.step_with_increment(state, dw)
    }

    /// `E / ħκ` of `state`; uses the cached Θ.
    pub fn energy(&self, state: &PhaseState) -> f64 {
        self.params.energy(state.p2_sum(), self.theta)
    }

    pub fn snapshot(&self, state: &PhaseState) -> Snapshot {
        Snapshot::from_particles(state.tau, self.theta, &self.sin, &state.p)
    }
}

/// Piecewise-constant parameters; each segment applies from its start time on.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    segments: Vec<(f64, ModelParams)>,
}

impl Schedule {
    pub fn constant(params: ModelParams) -> Self {
        Self {
            segments: vec![(f64::NEG_INFINITY, params)],
        }
    }

    /// Adds a switch to `params` at time `tau`; switches must be added in order.
    pub fn then_at(mut self, tau: f64, params: ModelParams) -> Result<Self> {
        let last = self.segments.last().map(|s| s.0).unwrap_or(f64::NEG_INFINITY);
        if tau <= last {
            return Err(Error::InvalidParams("schedule switch times must increase".into()));
        }
        if params.n_atoms != self.segments[0].1.n_atoms {
            return Err(Error::InvalidParams("schedule cannot change the atom number".into()));
        }
        self.segments.push((tau, params));
        Ok(self)
    }

    pub fn at(&self, tau: f64) -> &ModelParams {
        &self
            .segments
            .iter()
            .rev()
            .find(|(start, _)| *start <= tau)
            .unwrap_or(&self.segments[0])
            .1
    }

    fn next_switch_after(&self, tau: f64) -> Option<f64> {
        self.segments.iter().map(|s| s.0).find(|&t| t > tau)
    }
}

/// A trajectory that stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryAbort {
    pub tau: f64,
    pub reason: String,
    /// Records collected before the failure.
    pub partial: Vec<Snapshot>,
}

/// Integrates `initial` through the recording grid, returning one snapshot per
/// recording time (the first is the initial state).
pub fn run_trajectory<R: Rng + ?Sized>(
    initial: PhaseState,
    schedule: &Schedule,
    cfg: IntegratorConfig,
    grid: &RecordingGrid,
    rng: &mut R,
) -> std::result::Result<Vec<Snapshot>, TrajectoryAbort> {
    let mut state = initial;
    let abort = |tau: f64, e: Error, partial: Vec<Snapshot>| TrajectoryAbort {
        tau,
        reason: e.to_string(),
        partial,
    };
    let mut integ = NBodyIntegrator::new(*schedule.at(state.tau), cfg, &state)
        .map_err(|e| abort(state.tau, e, Vec::new()))?;
    let mut out = Vec::with_capacity(grid.len());
    let mut done: u64 = 0;
    let start = state.tau;
    let mut next_switch = schedule.next_switch_after(state.tau);
    for &target in grid.steps() {
        while done < target {
            if let Some(sw) = next_switch {
                if state.tau >= sw - 0.5 * cfg.dt {
                    integ = NBodyIntegrator::new(*schedule.at(sw), cfg, &state)
                        .map_err(|e| abort(state.tau, e, out.clone()))?;
                    next_switch = schedule.next_switch_after(sw);
                }
            }
            if let Err(e) = integ.step(&mut state, rng) {
                return Err(abort(state.tau, e, out));
            }
            done += 1;
        }
        // avoid accumulating rounding in tau over millions of steps
        state.tau = start + done as f64 * cfg.dt;
        out.push(integ.snapshot(&state));
    }
    Ok(out)
}
