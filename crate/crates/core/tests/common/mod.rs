//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use prethermal_core::compensated::Dd;

/// Friction and shared noise applied through the explicit `N × N` matrices
/// `G = g s sᵀ` and `B = a² s sᵀ`, with the noise factor `L` obtained by a
/// Cholesky step on the largest pivot of `B`. `s` holds the frozen `sin X`.
pub fn dense_dissipative_step(s: &[f64], p: &[f64], g: f64, a: f64, dt: f64, dw: f64) -> Vec<f64> {
    let n = s.len();
    let gmat: Vec<Vec<Dd>> = (0..n)
        .map(|i| (0..n).map(|j| Dd::mul_f64s(g, s[i]).mul_f64(s[j])).collect())
        .collect();
    let bmat: Vec<Vec<Dd>> = (0..n)
        .map(|i| (0..n).map(|j| Dd::mul_f64s(a, a).mul_f64(s[i]).mul_f64(s[j])).collect())
        .collect();
    let pivot = (0..n)
        .max_by(|&i, &j| s[i].abs().total_cmp(&s[j].abs()))
        .unwrap();
    let root = bmat[pivot][pivot].sqrt();
    let orient = if s[pivot] < 0.0 { -1.0 } else { 1.0 };
    (0..n)
        .map(|i| {
            let mut drift = Dd::ZERO;
            for j in 0..n {
                drift = drift + gmat[i][j].mul_f64(p[j]);
            }
            let chol = if root.hi > 0.0 {
                bmat[i][pivot].div(root).mul_f64(orient)
            } else {
                Dd::ZERO
            };
            let inc = -drift.mul_f64(dt) + chol.mul_f64(dw);
            inc.add_f64(p[i]).to_f64()
        })
        .collect()
}

/// Number of momentum entries where the integrator's rank-1 dissipative
/// substep and [`dense_dissipative_step`] differ in any bit, over `steps`
/// steps of an `n`-atom system driven by shared noise.
pub fn rank_one_mismatches(n: usize, steps: usize) -> usize {
    use prethermal_core::rng::{trajectory_rng, StreamRole};
    use prethermal_core::{sample_equilibrium, IntegratorConfig, ModelParams, NBodyIntegrator, SamplerConfig, Scheme};
    use rand_distr::{Distribution, StandardNormal};
    let params = ModelParams::new(-1.0, prethermal_core::REFERENCE_EPS, 1.0, n).unwrap();
    let mut rng = trajectory_rng(11, n as u64, StreamRole::Dynamics);
    let mut state = sample_equilibrium(&params, &SamplerConfig::default(), &mut rng).unwrap();
    let cfg = IntegratorConfig::new(0.05, Scheme::StrangSplit, true);
    let mut integ = NBodyIntegrator::new(params, cfg, &state).unwrap();
    let mut mismatches = 0;
    for _ in 0..steps {
        integ.hamiltonian_substep(&mut state);
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = z * cfg.dt.sqrt();
        let expect = dense_dissipative_step(
            integ.sines(),
            &state.p,
            integ.friction_rate(),
            integ.noise_amplitude(),
            cfg.dt,
            dw,
        );
        integ.dissipative_substep(&mut state, dw);
        mismatches += expect.iter().zip(&state.p).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    mismatches
}

/// Largest per-bin deviation, in binomial standard deviations, of the
/// sampled `Θ` histogram for two atoms at `n̄ = 1` from
/// [`pair_theta_histogram`].
pub fn pair_sampler_worst_z(samples: usize, bins: usize) -> f64 {
    use prethermal_core::rng::{trajectory_rng, StreamRole};
    use prethermal_core::{sample_equilibrium, ModelParams, SamplerConfig};
    let params = ModelParams::new(-1.0, prethermal_core::REFERENCE_EPS, 1.0, 2).unwrap();
    let expect = pair_theta_histogram(params.pump_ratio(), bins, 2000);
    let mut counts = vec![0usize; bins];
    let cfg = SamplerConfig::default();
    for k in 0..samples {
        let mut rng = trajectory_rng(5, k as u64, StreamRole::InitialState);
        let s = sample_equilibrium(&params, &cfg, &mut rng).unwrap();
        let b = (((s.theta() + 1.0) * 0.5 * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .iter()
        .zip(&expect)
        .map(|(&c, &q)| {
            let mean = q * samples as f64;
            let sd = (samples as f64 * q * (1.0 - q)).sqrt();
            (c as f64 - mean).abs() / sd
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of `erfcx` against [`erfcx_quadrature`] on
/// `[0, 50]` in steps of 0.1 plus a few interior and tiny arguments.
pub fn erfcx_worst_relative() -> f64 {
    let mut xs: Vec<f64> = (0..=500).map(|k| k as f64 * 0.1).collect();
    xs.extend([0.46875, 0.5, 4.0, 26.543, 1e-3, 1e-8]);
    xs.into_iter()
        .map(|x| {
            let q = erfcx_quadrature(x);
            ((prethermal_core::erfcx(x).unwrap() - q) / q).abs()
        })
        .fold(0.0, f64::max)
}

/// `e^{x²} erfc(x) = (2/√π) ∫₀^∞ e^{−t² − 2xt} dt` by exp-sinh quadrature.
pub fn erfcx_quadrature(x: f64) -> f64 {
    let h = 1.0 / 128.0;
    let mut sum = 0.0;
    let mut k = -800i32;
    while k <= 800 {
        let s = k as f64 * h;
        let u = 0.5 * PI * s.sinh();
        let t = u.exp();
        let w = t * 0.5 * PI * s.cosh();
        let f = (-t * t - 2.0 * x * t).exp();
        sum += w * f;
        k += 1;
    }
    2.0 / PI.sqrt() * h * sum
}

/// Modified Bessel functions `(I₀(h), I₁(h))` scaled by `e^{−|h|}`, by the
/// periodic trapezoid rule.
pub fn bessel_i01_scaled(h: f64) -> (f64, f64) {
    let m = 256;
    let (mut i0, mut i1) = (0.0, 0.0);
    for k in 0..m {
        let t = TAU * k as f64 / m as f64;
        let w = (h * t.cos() - h.abs()).exp();
        i0 += w;
        i1 += w * t.cos();
    }
    (i0 / m as f64, i1 / m as f64)
}

/// Exact `⟨Θ²⟩` of `N` positions distributed as `exp(a N Θ²)` on the torus,
/// through the Gaussian linearisation `exp(c S²) = E_h[e^{hS}]`, `h ~ N(0, 2c)`,
/// `c = a/N`, `S = Σ cos X`.
pub fn gibbs_theta_sq(a: f64, n: usize) -> f64 {
    assert!(a > 0.0);
    let nf = n as f64;
    let var = 2.0 * a / nf;
    let hmax = 2.0 * a + 12.0 * var.sqrt() + 1.0;
    let steps = 40_000;
    let dh = 2.0 * hmax / steps as f64;
    let mut logs = Vec::with_capacity(steps + 1);
    let mut second = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let h: f64 = -hmax + k as f64 * dh;
        let (i0, i1) = bessel_i01_scaled(h);
        let r = i1 / i0;
        // (I₀^N)'' / I₀^N with I₀' = I₁, I₁' = I₀ − I₁/h
        let d2 = if h.abs() < 1e-12 {
            nf * 0.5
        } else {
            nf * (nf - 1.0) * r * r + nf * (1.0 - r / h)
        };
        logs.push(-h * h / (2.0 * var) + nf * (i0.ln() + h.abs()));
        second.push(d2);
    }
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (l, d2) in logs.iter().zip(&second) {
        let w = (l - peak).exp();
        num += w * d2;
        den += w;
    }
    num / den / (nf * nf)
}

/// Probability mass of `Θ = (cos X₁ + cos X₂)/2` in `bins` equal bins on
/// `[−1, 1]` under the weight `exp(2 a Θ²)`, by midpoint quadrature.
pub fn pair_theta_histogram(a: f64, bins: usize, grid: usize) -> Vec<f64> {
    let mut mass = vec![0.0; bins];
    let cos: Vec<f64> = (0..grid)
        .map(|k| (TAU * (k as f64 + 0.5) / grid as f64).cos())
        .collect();
    for c1 in &cos {
        for c2 in &cos {
            let theta = 0.5 * (c1 + c2);
            let w = (2.0 * a * theta * theta).exp();
            let b = (((theta + 1.0) * 0.5 * bins as f64) as usize).min(bins - 1);
            mass[b] += w;
        }
    }
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

/// Sign-change scan of `f` on a uniform grid over `[lo, hi]`, refined by
/// rescanning the bracketing cell until it is narrower than `tol`.
pub fn scan_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let cells = 1000;
    while hi - lo > tol {
        let step = (hi - lo) / cells as f64;
        let mut prev = f(lo);
        let mut found = None;
        for k in 1..=cells {
            let x = lo + k as f64 * step;
            let v = f(x);
            if prev.signum() != v.signum() {
                found = Some((x - step, x));
                break;
            }
            prev = v;
        }
        let (a, b) = found.expect("no sign change in scan window");
        lo = a;
        hi = b;
    }
    0.5 * (lo + hi)
}

/// Mean and standard error of `values`.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Pooled kurtosis `Σp4 / (Σp2)²·n` with a delete-one jackknife error over
/// the paired per-trajectory moments.
pub fn pooled_kurtosis(p2: &[f64], p4: &[f64]) -> (f64, f64) {
    let n = p2.len();
    let (s2, s4): (f64, f64) = (p2.iter().sum(), p4.iter().sum());
    let k = |a: f64, b: f64, m: f64| b * m / (a * a);
    let full = k(s2, s4, n as f64);
    let leave: Vec<f64> = (0..n).map(|i| k(s2 - p2[i], s4 - p4[i], (n - 1) as f64)).collect();
    let lm = leave.iter().sum::<f64>() / n as f64;
    let var = leave.iter().map(|v| (v - lm).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    (full, var.sqrt())
}

/// Relative Γ = 0 energy error over `horizon` at step `dt`, for one state
/// quenched from `nbar_i` to `nbar_f`: the change of the mean energy between
/// the first and last tenth of the run (secular drift) and the largest
/// pointwise deviation.
pub fn hamiltonian_energy_error(n: usize, nbar_i: f64, nbar_f: f64, dt: f64, horizon: f64, seed: u64) -> (f64, f64) {
    use prethermal_core::rng::{trajectory_rng, StreamRole};
    use prethermal_core::{sample_equilibrium, IntegratorConfig, ModelParams, NBodyIntegrator, SamplerConfig, Scheme};
    let init = ModelParams::new(-1.0, prethermal_core::REFERENCE_EPS, nbar_i, n).unwrap();
    let fin = init.with_nbar(nbar_f).unwrap();
    let mut rng = trajectory_rng(seed, 0, StreamRole::InitialState);
    let mut state = sample_equilibrium(&init, &SamplerConfig::default(), &mut rng).unwrap();
    let cfg = IntegratorConfig::new(dt, Scheme::StrangSplit, false);
    let mut integ = NBodyIntegrator::new(fin, cfg, &state).unwrap();
    let e0 = integ.energy(&state);
    let steps = (horizon / dt).round() as usize;
    let window = steps / 10;
    let (mut first, mut last, mut peak) = (0.0, 0.0, 0.0f64);
    for k in 0..steps {
        integ.step(&mut state, &mut rng).unwrap();
        let e = integ.energy(&state);
        peak = peak.max(((e - e0) / e0).abs());
        if k < window {
            first += e;
        }
        if k >= steps - window {
            last += e;
        }
    }
    (((last - first) / window as f64 / e0).abs(), peak)
}

/// Ensemble CSV of a protocol run on a dedicated pool of `workers` threads.
pub fn csv_on_workers(protocol: &prethermal_core::QuenchProtocol, workers: usize) -> Vec<u8> {
    let series = prethermal_core::harness::with_workers(workers, || prethermal_core::run_quench(protocol))
        .unwrap()
        .unwrap();
    let mut out = Vec::new();
    series.write_csv(&mut out).unwrap();
    out
}
