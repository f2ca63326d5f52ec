mod common;

use std::time::Instant;

use prethermal_core::meanfield::{mf_step, Moments};
use prethermal_core::nbody::{run_trajectory, Schedule};
use prethermal_core::rng::{trajectory_rng, StreamRole};
use prethermal_core::{
    sample_equilibrium, Engine, IntegratorConfig, MfEnsemble, ModelParams, NBodyIntegrator, PhaseState,
    QuenchProtocol, RecordingGrid, SamplerConfig, Scheme, REFERENCE_EPS,
};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

fn params(nbar: f64, n: usize) -> ModelParams {
    ModelParams::new(-1.0, REFERENCE_EPS, nbar, n).unwrap()
}

/// Mean `P²` per atom at `horizon` for one state, driven by the fine Wiener
/// increments `fine` summed in groups of `stride`.
fn p2_at_horizon(state: &PhaseState, p: ModelParams, scheme: Scheme, fine: &[f64], dt_fine: f64, stride: usize) -> f64 {
    let cfg = IntegratorConfig::new(dt_fine * stride as f64, scheme, true);
    let mut s = state.clone();
    let mut integ = NBodyIntegrator::new(p, cfg, &s).unwrap();
    for chunk in fine.chunks(stride) {
        integ.step_with_increment(&mut s, chunk.iter().sum()).unwrap();
    }
    s.p2_sum() / s.len() as f64
}

#[test]
fn euler_maruyama_bias_halves_with_step() {
    let p = params(1.0, 10);
    let dt_fine: f64 = 0.0125;
    let horizon = 50.0;
    let steps = (horizon / dt_fine) as usize;
    let strides = [8usize, 4, 2];
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(21, k, StreamRole::InitialState);
            let state = sample_equilibrium(&p, &SamplerConfig::default(), &mut rng).unwrap();
            let mut noise = trajectory_rng(21, k, StreamRole::Dynamics);
            let fine: Vec<f64> = (0..steps)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut noise);
                    z * dt_fine.sqrt()
                })
                .collect();
            let reference = p2_at_horizon(&state, p, Scheme::StrangSplit, &fine, dt_fine, 1);
            let em = strides
                .iter()
                .map(|&s| p2_at_horizon(&state, p, Scheme::EulerMaruyama, &fine, dt_fine, s) - reference)
                .collect();
            let split = p2_at_horizon(&state, p, Scheme::StrangSplit, &fine, dt_fine, 8) - reference;
            (em, split, reference)
        })
        .collect();
    let bias: Vec<(f64, f64)> = (0..strides.len())
        .map(|i| common::mean_se(&rows.iter().map(|r| r.0[i]).collect::<Vec<_>>()))
        .collect();
    for w in bias.windows(2) {
        let ratio = w[0].0 / w[1].0;
        assert!(w[1].0 > 5.0 * w[1].1, "bias not resolved: {bias:?}");
        assert!((1.6..=2.5).contains(&ratio), "bias ratio {ratio} from {bias:?}");
    }
    let split = common::mean_se(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    assert!(split.0.abs() < 0.25 * bias[0].0, "split {split:?} vs {bias:?}");
}

#[test]
fn split_scheme_converges_in_step() {
    // same noise path at dt = 0.4, 0.2, 0.1 against dt = 0.025
    let p = params(1.0, 20);
    let dt_fine: f64 = 0.025;
    let steps = (200.0 / dt_fine) as usize;
    let rows: Vec<[f64; 3]> = (0..64u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(23, k, StreamRole::InitialState);
            let state = sample_equilibrium(&params(0.005, 20), &SamplerConfig::default(), &mut rng).unwrap();
            let mut noise = trajectory_rng(23, k, StreamRole::Dynamics);
            let fine: Vec<f64> = (0..steps)
                .map(|_| StandardNormal.sample(&mut noise))
                .map(|z: f64| z * dt_fine.sqrt())
                .collect::<Vec<f64>>();
            let reference = p2_at_horizon(&state, p, Scheme::StrangSplit, &fine, dt_fine, 1);
            let d = |s| (p2_at_horizon(&state, p, Scheme::StrangSplit, &fine, dt_fine, s) - reference).abs();
            [d(16), d(8), d(4)]
        })
        .collect();
    let err: Vec<f64> = (0..3).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64).collect();
    assert!(err[0] > err[1] && err[1] > err[2], "{err:?}");
}

#[test]
fn hamiltonian_energy_has_no_secular_drift() {
    for &(nbar_i, seed) in &[(1.0, 1u64), (0.005, 2)] {
        let (drift, peak) = common::hamiltonian_energy_error(200, nbar_i, 1.0, 0.05, 1e4, seed);
        assert!(drift < 1e-6, "n̄_i {nbar_i}: drift {drift:e} (peak {peak:e})");
        // bounded shadow-energy oscillation of the splitting
        assert!(peak < 1e-5, "n̄_i {nbar_i}: peak {peak:e}");
    }
}

#[test]
fn equilibrium_is_stationary_under_full_dynamics() {
    let p = params(1.0, 50);
    let cfg = IntegratorConfig::new(0.05, Scheme::StrangSplit, true);
    let times: Vec<f64> = (0..=200).map(|k| k as f64 * 100.0).collect();
    let grid = RecordingGrid::from_times(&times, cfg.dt).unwrap();
    let rows: Vec<(f64, f64, bool)> = (0..16u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(31, k, StreamRole::InitialState);
            let state = sample_equilibrium(&p, &SamplerConfig::default(), &mut rng).unwrap();
            let mut dyn_rng = trajectory_rng(31, k, StreamRole::Dynamics);
            let snaps = run_trajectory(state, &Schedule::constant(p), cfg, &grid, &mut dyn_rng).unwrap();
            let m = snaps.len() as f64;
            let bounded = snaps.iter().all(|s| (-1.0..=1.0).contains(&s.theta));
            (
                snaps.iter().map(|s| s.p2).sum::<f64>() / m,
                snaps.iter().map(|s| s.p4).sum::<f64>() / m,
                bounded,
            )
        })
        .collect();
    assert!(rows.iter().all(|r| r.2));
    let p2: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let p4: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (m2, se2) = common::mean_se(&p2);
    let (k, se_k) = common::pooled_kurtosis(&p2, &p4);
    let target = p.derived().sigma2_p;
    assert!((m2 - target).abs() < 3.0 * se2, "⟨P²⟩ {m2} ± {se2} vs {target}");
    assert!((k - 3.0).abs() < 3.0 * se_k, "K {k} ± {se_k}");
}

#[test]
fn meanfield_points_relax_as_independent_ornstein_uhlenbeck() {
    // n̄ small enough that the potential is negligible against kinetic energy;
    // streaming averages sin²X to 1/2, so ⟨P²⟩ relaxes at rate γ̃/N
    let p = params(0.02, 1);
    let m = 8192;
    let hot = 4.0 * p.derived().sigma2_p;
    let mut rng = trajectory_rng(41, 0, StreamRole::InitialState);
    let normal = Normal::new(0.0, hot.sqrt()).unwrap();
    let x: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    let v: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng)).collect();
    let mut ens = MfEnsemble::new(x, v, 1, 41, 1).unwrap();
    ens.freeze_moments(Some(Moments::default()));
    let cfg = IntegratorConfig::new(0.25, Scheme::StrangSplit, true);
    let rate = p.derived().gamma_tilde;
    let sigma2 = p.derived().sigma2_p;
    let mut checked = 0;
    for step in 1..=(8000.0 / cfg.dt) as usize {
        mf_step(&mut ens, &p, &cfg).unwrap();
        if step % 4000 == 0 {
            let tau = step as f64 * cfg.dt;
            let q: Vec<f64> = ens.p.iter().map(|v| v * v).collect();
            let (mean, se) = common::mean_se(&q);
            let exact = sigma2 + (hot - sigma2) * (-rate * tau).exp();
            assert!(
                (mean - exact).abs() < 3.0 * se + 0.02 * exact,
                "τ {tau}: {mean} ± {se} vs {exact}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 8);
}

#[test]
fn reruns_are_identical_across_worker_counts() {
    let full = QuenchProtocol::path_a(-1.0, REFERENCE_EPS, 0.005, 1.0, 20)
        .unwrap()
        .with_run(200.0, 0.05, 6, 77);
    let mut mf = full.clone().with_engine(Engine::Meanfield);
    mf.mf_samples = 3000;
    for protocol in [&full, &mf] {
        let one = common::csv_on_workers(protocol, 1);
        let again = common::csv_on_workers(protocol, 1);
        let four = common::csv_on_workers(protocol, 4);
        assert_eq!(one, again);
        assert_eq!(one, four, "{:?}", protocol.engine);
    }
}

#[test]
fn step_cost_is_linear_in_atom_number() {
    let time_steps = |n: usize| {
        let p = params(1.0, n);
        let mut rng = trajectory_rng(3, 0, StreamRole::Dynamics);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.28).collect();
        let v: Vec<f64> = (0..n).map(|_| 10.0 * (rng.random::<f64>() - 0.5)).collect();
        let mut state = PhaseState::new(x, v, 0.0).unwrap();
        let cfg = IntegratorConfig::new(0.05, Scheme::StrangSplit, true);
        let mut integ = NBodyIntegrator::new(p, cfg, &state).unwrap();
        (0..5)
            .map(|_| {
                let t = Instant::now();
                for _ in 0..2000 {
                    integ.step(&mut state, &mut rng).unwrap();
                }
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let small = time_steps(1000);
    let large = time_steps(2000);
    assert!(large / small <= 2.5, "{small:.4}s → {large:.4}s");
}
