//! Quench experiments: trajectory ensembles, engine comparisons and
//! atom-number sweeps.
//!
//! Trajectory `k` draws its initial state and its noise from its own streams
//! of the master seed, trajectories run on a work-stealing pool, and results
//! are reduced in trajectory order. Output is therefore byte-identical for any
//! worker count. `PRETHERMAL_THREADS` caps the pool size.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{run_meanfield, sample_meanfield_equilibrium, MfEnsemble, DEFAULT_SAMPLES};
use crate::nbody::{run_trajectory, IntegratorConfig, Schedule, Scheme, TrajectoryAbort};
use crate::observables::{t_star, EnsembleSeries, Pooling, SeriesMeta, Snapshot, SCHEMA_VERSION};
use crate::params::{path_b_convert, ModelParams};
use crate::recorder::{RecordingGrid, POINTS_PER_DECADE};
use crate::rng::{trajectory_rng, StreamRole};
use crate::sampler::{sample_equilibrium, SamplerConfig};
use crate::vlasov::{fit_stage_one, linear_fit, StageOneFit};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "PRETHERMAL_THREADS";

/// Largest tolerated fraction of aborted trajectories.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

/// Fraction of the stationary `⟨Θ²⟩` defining the relaxation time.
pub const T_STAR_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// N-body dynamics with collective friction and noise.
    Full,
    /// N-body dynamics without dissipation.
    Hamiltonian,
    /// Sample-point representation of the one-body distribution.
    Meanfield,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Full => "full",
            Engine::Hamiltonian => "hamiltonian",
            Engine::Meanfield => "meanfield",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Engine::Full),
            "hamiltonian" => Ok(Engine::Hamiltonian),
            "meanfield" => Ok(Engine::Meanfield),
            _ => Err(Error::Config(format!("unknown engine '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// Pump strength changes at fixed detuning.
    PathA,
    /// Detuning changes at fixed laser amplitude.
    PathB,
    /// No quench; evolves the initial equilibrium.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchProtocol {
    pub kind: ProtocolKind,
    pub initial: ModelParams,
    #[serde(rename = "final")]
    pub final_params: ModelParams,
    pub engine: Engine,
    pub horizon: f64,
    pub dt: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Sample points per mean-field ensemble.
    pub mf_samples: usize,
    pub pooling: Pooling,
    pub per_decade: usize,
    pub sampler: SamplerConfig,
}

impl QuenchProtocol {
    fn base(kind: ProtocolKind, initial: ModelParams, final_params: ModelParams) -> Self {
        Self {
            kind,
            initial,
            final_params,
            engine: Engine::Full,
            horizon: 2e5,
            dt: IntegratorConfig::default().dt,
            trajectories: 100,
            seed: 0,
            mf_samples: DEFAULT_SAMPLES,
            pooling: Pooling::Pooled,
            per_decade: POINTS_PER_DECADE,
            sampler: SamplerConfig::default(),
        }
    }

    /// Pump quench `nbar_i → nbar_f` at fixed detuning.
    pub fn path_a(delta: f64, eps: f64, nbar_i: f64, nbar_f: f64, n_atoms: usize) -> Result<Self> {
        Ok(Self::base(
            ProtocolKind::PathA,
            ModelParams::new(delta, eps, nbar_i, n_atoms)?,
            ModelParams::new(delta, eps, nbar_f, n_atoms)?,
        ))
    }

    /// Detuning quench `delta_i → delta_f` at fixed laser amplitude.
    pub fn path_b(delta_i: f64, delta_f: f64, eps: f64, nbar_i: f64, n_atoms: usize) -> Result<Self> {
        let nbar_f = path_b_convert(delta_i, nbar_i, delta_f)?;
        Ok(Self::base(
            ProtocolKind::PathB,
            ModelParams::new(delta_i, eps, nbar_i, n_atoms)?,
            ModelParams::new(delta_f, eps, nbar_f, n_atoms)?,
        ))
    }

    /// Evolution of the equilibrium state at `params`.
    pub fn null(params: ModelParams) -> Self {
        Self::base(ProtocolKind::None, params, params)
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_run(mut self, horizon: f64, dt: f64, trajectories: usize, seed: u64) -> Self {
        self.horizon = horizon;
        self.dt = dt;
        self.trajectories = trajectories;
        self.seed = seed;
        self
    }

    /// Same quench at a different atom number.
    pub fn with_atoms(&self, n_atoms: usize) -> Result<Self> {
        let mut p = self.clone();
        p.initial = self.initial.with_atoms(n_atoms)?;
        p.final_params = self.final_params.with_atoms(n_atoms)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        self.final_params.validate()?;
        let (i, f) = (&self.initial, &self.final_params);
        if i.n_atoms != f.n_atoms || i.eps != f.eps {
            return Err(Error::InvalidParams("a quench keeps N and ε fixed".into()));
        }
        match self.kind {
            ProtocolKind::PathA if i.delta != f.delta => {
                return Err(Error::InvalidParams("path A keeps the detuning fixed".into()))
            }
            ProtocolKind::PathB => {
                let expect = path_b_convert(i.delta, i.nbar, f.delta)?;
                if (f.nbar - expect).abs() > 1e-12 * expect.abs().max(1.0) {
                    return Err(Error::InvalidParams(format!(
                        "path B final pump {} differs from the fixed-amplitude value {expect}",
                        f.nbar
                    )));
                }
            }
            ProtocolKind::None if i != f => {
                return Err(Error::InvalidParams("a null protocol keeps all parameters".into()))
            }
            _ => {}
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidParams("at least one trajectory is required".into()));
        }
        if self.engine == Engine::Meanfield && self.mf_samples == 0 {
            return Err(Error::InvalidParams("mean-field sample count must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RecordingGrid> {
        RecordingGrid::logarithmic(self.horizon, self.dt, self.per_decade)
    }

    fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig::new(self.dt, Scheme::StrangSplit, self.engine != Engine::Hamiltonian)
    }

    pub fn meta(&self, aborted: usize) -> SeriesMeta {
        SeriesMeta {
            schema_version: SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            engine: self.engine,
            params: self.final_params,
            initial: self.initial,
            dt: self.dt,
            trajectories: self.trajectories - aborted,
            seed: self.seed,
            pooling: self.pooling,
            mf_samples: (self.engine == Engine::Meanfield).then_some(self.mf_samples),
            aborted,
        }
    }
}

/// Runs `f` on a pool sized by [`THREADS_ENV`], or on the current pool.
pub fn with_worker_cap<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a count")))?;
            with_workers(n, f)
        }
        Err(_) => Ok(f()),
    }
}

/// Runs `f` on a dedicated pool of `n` workers.
pub fn with_workers<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if n == 0 {
        return Err(Error::Config("worker count must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn run_one(protocol: &QuenchProtocol, grid: &RecordingGrid, k: usize) -> std::result::Result<Vec<Snapshot>, TrajectoryAbort> {
    let early = |e: Error| TrajectoryAbort {
        tau: 0.0,
        reason: e.to_string(),
        partial: Vec::new(),
    };
    let k64 = k as u64;
    let mut init_rng = trajectory_rng(protocol.seed, k64, StreamRole::InitialState);
    match protocol.engine {
        Engine::Full | Engine::Hamiltonian => {
            let state = sample_equilibrium(&protocol.initial, &protocol.sampler, &mut init_rng).map_err(early)?;
            let mut rng = trajectory_rng(protocol.seed, k64, StreamRole::Dynamics);
            let schedule = Schedule::constant(protocol.final_params);
            run_trajectory(state, &schedule, protocol.integrator(), grid, &mut rng)
        }
        Engine::Meanfield => {
            let (x, p) = sample_meanfield_equilibrium(&protocol.initial, protocol.mf_samples, &mut init_rng)
                .map_err(early)?;
            let ens = MfEnsemble::new(
                x,
                p,
                protocol.final_params.n_atoms,
                protocol.seed,
                2 * k64 + StreamRole::Dynamics as u64,
            )
            .map_err(early)?;
            run_meanfield(ens, &protocol.final_params, protocol.integrator(), grid)
        }
    }
}

/// Runs every trajectory of a protocol and returns the snapshot series of the
/// ones that completed, in trajectory order, with the number that aborted.
pub fn run_trajectories(protocol: &QuenchProtocol) -> Result<(Vec<Vec<Snapshot>>, usize)> {
    protocol.validate()?;
    let grid = protocol.grid()?;
    let results: Vec<_> = with_worker_cap(|| {
        (0..protocol.trajectories)
            .into_par_iter()
            .map(|k| run_one(protocol, &grid, k))
            .collect()
    })?;
    let total = results.len();
    let mut runs = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => runs.push(s),
            Err(a) => failures.push((k, a)),
        }
    }
    if let Some((k, a)) = failures.first() {
        if failures.len() as f64 > MAX_ABORT_FRACTION * total as f64 || runs.is_empty() {
            return Err(Error::TooManyAborts {
                failed: failures.len(),
                total,
                first: format!("trajectory {k} at tau = {}: {}", a.tau, a.reason),
            });
        }
    }
    Ok((runs, failures.len()))
}

/// Samples, evolves and reduces one protocol.
pub fn run_quench(protocol: &QuenchProtocol) -> Result<EnsembleSeries> {
    let (runs, aborted) = run_trajectories(protocol)?;
    EnsembleSeries::from_trajectories(protocol.meta(aborted), &runs)
}

/// Stage-one fit of an ensemble whose error bar comes from a delete-one-group
/// jackknife over trajectories (at most `groups` groups).
///
/// Residual-based errors ignore that neighbouring records share the same
/// trajectories; the jackknife captures the trajectory-to-trajectory scatter.
pub fn fit_stage_one_jackknife(
    meta: &SeriesMeta,
    runs: &[Vec<Snapshot>],
    stationary: Option<f64>,
    groups: usize,
) -> Result<StageOneFit> {
    let full = EnsembleSeries::from_trajectories(meta.clone(), runs)?;
    let mut fit = fit_stage_one(&full.theta_sq(), stationary)?;
    let g = groups.min(runs.len());
    if g < 2 {
        fit.rate_se = f64::NAN;
        return Ok(fit);
    }
    let estimates = (0..g)
        .map(|k| {
            let kept: Vec<Vec<Snapshot>> = runs
                .iter()
                .enumerate()
                .filter(|(i, _)| i % g != k)
                .map(|(_, r)| r.clone())
                .collect();
            let s = EnsembleSeries::from_trajectories(meta.clone(), &kept)?;
            fit_stage_one(&s.theta_sq(), stationary).map(|f| f.rate)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = estimates.iter().sum::<f64>() / g as f64;
    let var = estimates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() * (g - 1) as f64 / g as f64;
    fit.rate_se = var.sqrt();
    Ok(fit)
}

/// Series of several engines on a common grid.
#[derive(Debug, Clone)]
pub struct EngineComparison {
    pub series: Vec<EnsembleSeries>,
    /// First time `⟨|Θ|⟩` of the first two engines differs by more than the
    /// combined `3σ`.
    pub divergence: Option<f64>,
}

/// First record where two series of `⟨|Θ|⟩` differ by more than `3σ`.
pub fn divergence_time(a: &EnsembleSeries, b: &EnsembleSeries) -> Option<f64> {
    a.records.iter().zip(&b.records).find_map(|(ra, rb)| {
        let d = (ra.abs_theta.mean - rb.abs_theta.mean).abs();
        let s = (ra.abs_theta.se.powi(2) + rb.abs_theta.se.powi(2)).sqrt();
        (s.is_finite() && d > 3.0 * s).then_some(ra.tau)
    })
}

/// Runs `protocol` once per engine with the same seed, hence identical
/// initial ensembles for the N-body engines.
pub fn compare_engines(protocol: &QuenchProtocol, engines: &[Engine]) -> Result<EngineComparison> {
    if engines.is_empty() {
        return Err(Error::InvalidParams("no engines to compare".into()));
    }
    let series = engines
        .iter()
        .map(|&e| run_quench(&protocol.clone().with_engine(e)))
        .collect::<Result<Vec<_>>>()?;
    let divergence = match series.as_slice() {
        [a, b, ..] => divergence_time(a, b),
        _ => None,
    };
    Ok(EngineComparison { series, divergence })
}

impl EngineComparison {
    /// Aligned CSV: `tau` then six columns per engine.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("tau");
        for s in &self.series {
            let e = s.meta.engine.name();
            for c in ["abs_theta_mean", "abs_theta_se", "theta_sq_mean", "theta_sq_se", "kurtosis", "phi11"] {
                header.push_str(&format!(",{e}_{c}"));
            }
        }
        writeln!(w, "{header}")?;
        let rows = self.series.iter().map(|s| s.records.len()).min().unwrap_or(0);
        for i in 0..rows {
            let mut line = format!("{:e}", self.series[0].records[i].tau);
            for s in &self.series {
                let r = &s.records[i];
                for v in [
                    r.abs_theta.mean,
                    r.abs_theta.se,
                    r.theta_sq.mean,
                    r.theta_sq.se,
                    r.kurtosis.mean,
                    r.phi11.mean,
                ] {
                    line.push_str(&format!(",{v:e}"));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Power-law fit `t* = A N^slope` in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub slope_se: f64,
    /// `ln A`.
    pub intercept: f64,
    pub points: usize,
}

impl PowerLawFit {
    /// Symmetric interval of `z` standard errors around the slope.
    pub fn slope_interval(&self, z: f64) -> (f64, f64) {
        (self.slope - z * self.slope_se, self.slope + z * self.slope_se)
    }
}

/// Least-squares fit of `ln t` against `ln N`; needs two distinct `N`.
pub fn fit_power_law(points: &[(usize, f64)]) -> Result<PowerLawFit> {
    let mut ns: Vec<usize> = points.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 2 {
        return Err(Error::Degenerate("a scaling fit needs at least two atom numbers".into()));
    }
    if points.iter().any(|&(n, t)| n == 0 || !(t > 0.0)) {
        return Err(Error::Degenerate("scaling fit needs positive N and times".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| ((n as f64).ln(), t.ln())).collect();
    let (slope, slope_se) = linear_fit(logs.iter().copied());
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / logs.len() as f64;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / logs.len() as f64;
    Ok(PowerLawFit {
        slope,
        slope_se,
        intercept: my - slope * mx,
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub engine: Engine,
    pub n_atoms: usize,
    pub t_star: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub fits: Vec<(Engine, PowerLawFit)>,
}

impl ScalingTable {
    pub fn fit(&self, engine: Engine) -> Option<&PowerLawFit> {
        self.fits.iter().find(|f| f.0 == engine).map(|f| &f.1)
    }

    pub fn t_star(&self, engine: Engine, n_atoms: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.engine == engine && r.n_atoms == n_atoms)
            .map(|r| r.t_star)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "engine,n_atoms,t_star,horizon")?;
        for r in &self.rows {
            writeln!(w, "{},{},{:e},{:e}", r.engine.name(), r.n_atoms, r.t_star, r.horizon)?;
        }
        Ok(())
    }
}

/// Relaxation time `t*` of `⟨Θ²⟩` for `template` at each atom number and
/// engine, with a power-law fit per engine.
///
/// The horizon grows in proportion to `N` from the template's value at the
/// template's atom number, since `t*` does.
pub fn scaling_sweep(template: &QuenchProtocol, ns: &[usize], engines: &[Engine]) -> Result<ScalingTable> {
    let mut distinct = ns.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Degenerate("a scaling sweep needs at least two atom numbers".into()));
    }
    let n0 = template.final_params.n_atoms as f64;
    let mut rows = Vec::new();
    for &engine in engines {
        for &n in &distinct {
            let mut p = template.with_atoms(n)?.with_engine(engine);
            p.horizon = template.horizon * n as f64 / n0;
            let series = run_quench(&p)?;
            let ts = t_star(&series.theta_sq(), T_STAR_FRACTION)?;
            rows.push(ScalingRow {
                engine,
                n_atoms: n,
                t_star: ts,
                horizon: p.horizon,
            });
        }
    }
    let fits = engines
        .iter()
        .map(|&e| {
            let pts: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r.engine == e)
                .map(|r| (r.n_atoms, r.t_star))
                .collect();
            fit_power_law(&pts).map(|f| (e, f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingTable { rows, fits })
}
