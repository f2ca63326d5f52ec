//! Semiclassical relaxation dynamics of atoms coupled through a lossy cavity
//! mode: N-body and mean-field engines, an equilibrium sampler, Vlasov
//! stability analysis and ensemble statistics for quench experiments.
//!
//! Everything is dimensionless: positions `X = kx ∈ [0, 2π)`, momenta
//! `P = p/ħk`, time `τ = κt`. The kinetic energy per atom in units of the
//! recoil energy equals `⟨P²⟩`.

pub mod compensated;
pub mod config;
pub mod error;
pub mod harness;
pub mod meanfield;
pub mod nbody;
pub mod observables;
pub mod params;
pub mod recorder;
pub mod rng;
pub mod sampler;
pub mod state;
pub mod vlasov;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use harness::{
    compare_engines, run_quench, scaling_sweep, Engine, EngineComparison, ProtocolKind, QuenchProtocol,
    ScalingTable,
};
pub use meanfield::{mf_force, mf_step, MfEnsemble};
pub use nbody::{IntegratorConfig, NBodyIntegrator, Scheme};
pub use observables::{t_star, EnsembleSeries, ObservableRecord, Pooling, SeriesMeta, SeriesPoint, Snapshot};
pub use params::{derive_params, path_b_convert, threshold, DerivedParams, ModelParams, REFERENCE_EPS};
pub use recorder::RecordingGrid;
pub use sampler::{metropolis_burn, sample_equilibrium, SamplerConfig};
pub use state::PhaseState;
pub use vlasov::{erfcx, fit_stage_one, growth_rate, DispersionParams, GrowthRateResult, StageOneFit};
