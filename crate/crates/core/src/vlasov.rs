//! Linear instability of the homogeneous state in the collisionless limit.
//!
//! A small perturbation of the spatially uniform thermal state grows as
//! `e^{γτ}` where `γ` solves
//!
//! ```text
//! [1 − 2γ/(1 + δ²)] · F(γ) · n̄/n̄_c = 1,    F = 1 − √π b erfcx(b),    b = γ √(β̃ / 4ε)
//! ```
//!
//! Only the real positive root is considered.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::SeriesPoint;

const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_562_869_5e-1;

// W. J. Cody, "Rational Chebyshev approximations for the error function"
// (Math. Comp. 1969), double-precision coefficients as distributed in CALERF.
const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_21e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_09e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];
const ERFC_C: [f64; 9] = [
    5.641_884_969_886_700_89e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];
const ERFC_D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];
const ERFC_P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];
const ERFC_Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

/// Beyond this the leading term `1/(x√π)` is exact to double precision.
const ERFCX_HUGE: f64 = 6.71e7;

/// Scaled complementary error function `e^{x²} erfc(x)` for `x ≥ 0`.
pub fn erfcx(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidParams(format!("erfcx argument {x} must be >= 0")));
    }
    Ok(erfcx_nonneg(x))
}

fn erfcx_nonneg(x: f64) -> f64 {
    if x <= 0.46875 {
        let ysq = if x > 1.11e-16 { x * x } else { 0.0 };
        let mut num = ERF_A[4] * ysq;
        let mut den = ysq;
        for i in 0..3 {
            num = (num + ERF_A[i]) * ysq;
            den = (den + ERF_B[i]) * ysq;
        }
        let erf = x * (num + ERF_A[3]) / (den + ERF_B[3]);
        ysq.exp() * (1.0 - erf)
    } else if x <= 4.0 {
        let mut num = ERFC_C[8] * x;
        let mut den = x;
        for i in 0..7 {
            num = (num + ERFC_C[i]) * x;
            den = (den + ERFC_D[i]) * x;
        }
        (num + ERFC_C[7]) / (den + ERFC_D[7])
    } else if x < ERFCX_HUGE {
        let ysq = 1.0 / (x * x);
        let mut num = ERFC_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERFC_P[i]) * ysq;
            den = (den + ERFC_Q[i]) * ysq;
        }
        let r = ysq * (num + ERFC_P[4]) / (den + ERFC_Q[4]);
        (FRAC_1_SQRT_PI - r) / x
    } else {
        FRAC_1_SQRT_PI / x
    }
}

/// `F(b) = 1 − √π b erfcx(b)`, in `(0, 1]` for `b ≥ 0`.
pub fn response(b: f64) -> f64 {
    1.0 - PI.sqrt() * b * erfcx_nonneg(b)
}

/// Detuning and recoil ratio, the two parameters the dispersion relation needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionParams {
    pub delta: f64,
    pub eps: f64,
}

impl DispersionParams {
    pub fn new(delta: f64, eps: f64) -> Result<Self> {
        if !(delta < 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParams(format!("detuning must be negative, got {delta}")));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParams(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { delta, eps })
    }

    fn beta_tilde(&self) -> f64 {
        -4.0 * self.delta / (1.0 + self.delta * self.delta)
    }

    /// `b / γ`.
    fn b_per_rate(&self) -> f64 {
        (self.beta_tilde() / (4.0 * self.eps)).sqrt()
    }
}

/// Left-hand side of the dispersion relation at growth rate `gamma_v ≥ 0`.
pub fn dispersion_lhs(gamma_v: f64, ratio: f64, p: &DispersionParams) -> Result<f64> {
    if !(gamma_v >= 0.0) {
        return Err(Error::InvalidParams(format!("growth rate {gamma_v} must be >= 0")));
    }
    Ok(lhs(gamma_v, ratio, p))
}

fn lhs(gamma_v: f64, ratio: f64, p: &DispersionParams) -> f64 {
    let b = gamma_v * p.b_per_rate();
    (1.0 - 2.0 * gamma_v / (1.0 + p.delta * p.delta)) * response(b) * ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRateResult {
    /// Growth rate in units of `κ`.
    pub gamma_v: f64,
    /// `|lhs − 1|` at `gamma_v`.
    pub residual: f64,
    /// Final bisection interval.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

/// Positive root of the dispersion relation for pump ratio `n̄_f / n̄_c`.
pub fn growth_rate(ratio: f64, p: &DispersionParams) -> Result<GrowthRateResult> {
    if !ratio.is_finite() {
        return Err(Error::InvalidParams(format!("pump ratio {ratio}")));
    }
    if ratio <= 1.0 {
        return Err(Error::Stable(ratio));
    }
    let g = |x: f64| lhs(x, ratio, p) - 1.0;
    // lhs(0) = ratio > 1; lhs < 0 once 2γ > 1 + δ², so the bracket is finite
    let mut lo = 0.0;
    let mut hi = 1e-3;
    let mut grown = 0;
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        grown += 1;
        if grown > 200 {
            return Err(Error::RootNotFound("no sign change while growing bracket".into()));
        }
    }
    let mut iterations = 0;
    while iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let (r_lo, r_hi) = (g(lo).abs(), g(hi).abs());
    let (gamma_v, residual) = if r_lo <= r_hi { (lo, r_lo) } else { (hi, r_hi) };
    if !(gamma_v > 0.0) || residual >= 1e-10 {
        return Err(Error::RootNotFound(format!(
            "bisection ended at {gamma_v} with residual {residual:e}"
        )));
    }
    Ok(GrowthRateResult {
        gamma_v,
        residual,
        bracket: (lo, hi),
        iterations,
    })
}

/// Exponential fit of the early growth of `⟨Θ²⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOneFit {
    /// Amplitude growth rate (half the slope of `ln⟨Θ²⟩`).
    pub rate: f64,
    /// Standard error of `rate` from the regression residuals.
    pub rate_se: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Lower edge of the fit window, relative to the initial value.
pub const FIT_START_FACTOR: f64 = 3.0;
/// Upper edge of the fit window, relative to the stationary value.
pub const FIT_END_FRACTION: f64 = 0.3;

/// Least-squares fit of `ln⟨Θ²⟩` against `τ` from where `⟨Θ²⟩` first reaches
/// three times its initial value to where it first reaches 30% of
/// `stationary` (the trailing-decade mean when `None`).
pub fn fit_stage_one(theta_sq: &[SeriesPoint], stationary: Option<f64>) -> Result<StageOneFit> {
    let first = theta_sq
        .first()
        .ok_or_else(|| Error::NoExponentialStage("empty series".into()))?;
    let stationary = match stationary {
        Some(s) => s,
        None => {
            let last = theta_sq.last().unwrap().tau;
            let tail: Vec<f64> = theta_sq
                .iter()
                .filter(|p| p.tau >= last / 10.0)
                .map(|p| p.mean)
                .collect();
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    };
    let lo_level = FIT_START_FACTOR * first.mean;
    let hi_level = FIT_END_FRACTION * stationary;
    if !(first.mean > 0.0) || hi_level <= lo_level {
        return Err(Error::NoExponentialStage(format!(
            "window [{lo_level:.3e}, {hi_level:.3e}] is empty"
        )));
    }
    let start = theta_sq
        .iter()
        .position(|p| p.mean >= lo_level)
        .ok_or_else(|| Error::NoExponentialStage("never reaches 3x its initial value".into()))?;
    let end = theta_sq[start..]
        .iter()
        .position(|p| p.mean >= hi_level)
        .map(|k| start + k)
        .ok_or_else(|| Error::NoExponentialStage("never reaches 30% of stationary".into()))?;
    let window = &theta_sq[start..=end];
    if window.len() < 3 {
        return Err(Error::NoExponentialStage(format!(
            "only {} records in the growth window",
            window.len()
        )));
    }
    let (slope, slope_se) = linear_fit(window.iter().map(|p| (p.tau, p.mean.ln())));
    Ok(StageOneFit {
        rate: 0.5 * slope,
        rate_se: 0.5 * slope_se,
        window: (window[0].tau, window[window.len() - 1].tau),
        points: window.len(),
    })
}

/// Ordinary least squares; returns slope and its standard error.
pub(crate) fn linear_fit(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = points.collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = if pts.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    (slope, se)
}
