//! Single-time observables, their ensemble statistics, and the CSV/JSON
//! formats of ensemble series.
//!
//! Ensemble reductions are built from [`PartialSums`], which merge
//! associatively; ratio observables (kurtosis, φ11) are formed once after the
//! merge. By default moments are pooled over particles and trajectories before
//! the ratio is taken; [`Pooling::PerTrajectory`] averages per-trajectory
//! ratios instead.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::Engine;
use crate::params::ModelParams;
use crate::state::PhaseState;

/// Exact header of ensemble series CSV files.
pub const CSV_HEADER: &str = "tau,theta_mean,theta_se,abs_theta_mean,abs_theta_se,theta_sq_mean,theta_sq_se,kinetic_mean,kinetic_se,kurtosis,phi11,rel_loc,photons";

/// Header of raw per-trajectory CSV files.
pub const RAW_CSV_HEADER: &str = "trajectory,tau,theta,theta_sq,kinetic,p2,p4,abs_sin_p,abs_sin,abs_p";

pub const SCHEMA_VERSION: u32 = 1;

/// Relative slack of the flatness test for series without error bars.
pub const FLAT_REL_TOL: f64 = 0.02;

/// Observables of one trajectory at one time; momentum moments are means over
/// the particles of that trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tau: f64,
    pub theta: f64,
    pub p2: f64,
    pub p4: f64,
    pub abs_p: f64,
    pub abs_sin: f64,
    pub abs_sin_p: f64,
    pub count: usize,
}

impl Snapshot {
    pub fn from_particles(tau: f64, theta: f64, sin: &[f64], p: &[f64]) -> Self {
        let (mut p2, mut p4, mut ap, mut asn, mut asp) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (s, p) in sin.iter().zip(p) {
            let q = p * p;
            p2 += q;
            p4 += q * q;
            ap += p.abs();
            asn += s.abs();
            asp += (s * p).abs();
        }
        let n = p.len() as f64;
        Self {
            tau,
            theta,
            p2: p2 / n,
            p4: p4 / n,
            abs_p: ap / n,
            abs_sin: asn / n,
            abs_sin_p: asp / n,
            count: p.len(),
        }
    }

    pub fn from_state(state: &PhaseState) -> Self {
        let sin: Vec<f64> = state.x.iter().map(|x| x.sin()).collect();
        Self::from_particles(state.tau, state.theta(), &sin, &state.p)
    }
}

/// `(Θ, |Θ|, Θ²)` of a state.
pub fn order_parameter(state: &PhaseState) -> (f64, f64, f64) {
    let t = state.theta();
    (t, t.abs(), t * t)
}

/// `K = ⟨p⁴⟩ / ⟨p²⟩²`.
pub fn kurtosis(p2: f64, p4: f64) -> Result<f64> {
    if !(p2 > 0.0) {
        return Err(Error::Degenerate(format!("kurtosis needs <p^2> > 0, got {p2}")));
    }
    Ok(p4 / (p2 * p2))
}

/// `⟨|sin X · P|⟩ / (⟨|sin X|⟩ ⟨|P|⟩) − 1`.
pub fn phi11(abs_sin_p: f64, abs_sin: f64, abs_p: f64) -> Result<f64> {
    if !(abs_sin > 0.0 && abs_p > 0.0) {
        return Err(Error::Degenerate(format!(
            "phi11 needs positive denominators, got <|sin X|> = {abs_sin}, <|P|> = {abs_p}"
        )));
    }
    Ok(abs_sin_p / (abs_sin * abs_p) - 1.0)
}

/// `δΘ / ⟨|Θ|⟩` with `δΘ = √(⟨Θ²⟩ − ⟨|Θ|⟩²)`.
pub fn relative_localization(theta_sq: f64, abs_theta: f64) -> Result<f64> {
    if !(abs_theta > 0.0) {
        return Err(Error::Degenerate(format!("<|theta|> = {abs_theta} is not positive")));
    }
    let var = theta_sq - abs_theta * abs_theta;
    if var < -1e-12 * theta_sq.abs() {
        return Err(Error::Degenerate(format!(
            "<theta^2> = {theta_sq} below <|theta|>^2 = {}",
            abs_theta * abs_theta
        )));
    }
    Ok(var.max(0.0).sqrt() / abs_theta)
}

/// Intracavity photon number `N n̄ ⟨Θ²⟩`.
pub fn photon_estimate(theta_sq: f64, nbar: f64, n_atoms: usize) -> Result<f64> {
    if n_atoms == 0 {
        return Err(Error::InvalidParams("photon estimate needs N >= 1".into()));
    }
    if theta_sq < 0.0 || nbar < 0.0 {
        return Err(Error::InvalidParams("negative <theta^2> or nbar".into()));
    }
    Ok(n_atoms as f64 * nbar * theta_sq)
}

/// Number of per-trajectory quantities tracked by [`PartialSums`].
const NQ: usize = 10;
const Q_THETA: usize = 0;
const Q_ABS_THETA: usize = 1;
const Q_THETA_SQ: usize = 2;
const Q_P2: usize = 3;
const Q_P4: usize = 4;
const Q_ASP: usize = 5;
const Q_AS: usize = 6;
const Q_AP: usize = 7;
const Q_K: usize = 8;
const Q_PHI: usize = 9;

/// Sums and cross sums of per-trajectory quantities at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSums {
    pub trajectories: usize,
    pub particles: usize,
    sum: [f64; NQ],
    cross: [[f64; NQ]; NQ],
}

impl Default for PartialSums {
    fn default() -> Self {
        Self {
            trajectories: 0,
            particles: 0,
            sum: [0.0; NQ],
            cross: [[0.0; NQ]; NQ],
        }
    }
}

impl PartialSums {
    pub fn push(&mut self, s: &Snapshot) {
        let k = if s.p2 > 0.0 { s.p4 / (s.p2 * s.p2) } else { f64::NAN };
        let phi = if s.abs_sin > 0.0 && s.abs_p > 0.0 {
            s.abs_sin_p / (s.abs_sin * s.abs_p) - 1.0
        } else {
            f64::NAN
        };
        let v = [
            s.theta,
            s.theta.abs(),
            s.theta * s.theta,
            s.p2,
            s.p4,
            s.abs_sin_p,
            s.abs_sin,
            s.abs_p,
            k,
            phi,
        ];
        for i in 0..NQ {
            self.sum[i] += v[i];
            for j in 0..NQ {
                self.cross[i][j] += v[i] * v[j];
            }
        }
        self.trajectories += 1;
        self.particles += s.count;
    }

    pub fn merge(&mut self, other: &PartialSums) {
        for i in 0..NQ {
            self.sum[i] += other.sum[i];
            for j in 0..NQ {
                self.cross[i][j] += other.cross[i][j];
            }
        }
        self.trajectories += other.trajectories;
        self.particles += other.particles;
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.trajectories as f64
    }

    /// Sample covariance of two per-trajectory quantities.
    fn cov(&self, i: usize, j: usize) -> f64 {
        let t = self.trajectories as f64;
        if self.trajectories < 2 {
            return f64::NAN;
        }
        (self.cross[i][j] - self.sum[i] * self.sum[j] / t) / (t - 1.0)
    }

    fn estimate(&self, i: usize) -> Estimate {
        let t = self.trajectories as f64;
        Estimate {
            mean: self.mean(i),
            se: (self.cov(i, i).max(0.0) / t).sqrt(),
        }
    }

    /// Delta-method standard error of `Σ_i g_i q_i` around the means.
    fn linearized_se(&self, idx: &[usize], grad: &[f64]) -> f64 {
        let mut var = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                var += grad[a] * grad[b] * self.cov(i, j);
            }
        }
        (var.max(0.0) / self.trajectories as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error over independent trajectories (NaN for a single one).
    pub se: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Moments pooled over particles and trajectories, then one ratio.
    #[default]
    Pooled,
    /// One ratio per trajectory, then averaged.
    PerTrajectory,
}

/// Ensemble observables at one recording time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub tau: f64,
    pub theta: Estimate,
    pub abs_theta: Estimate,
    pub theta_sq: Estimate,
    /// `⟨P²⟩`, equal to the kinetic energy per atom in units of `ħω_r`.
    pub kinetic: Estimate,
    pub kurtosis: Estimate,
    pub phi11: Estimate,
    /// NaN when undefined (`⟨|Θ|⟩ = 0`).
    pub rel_loc: f64,
    pub photons: f64,
    /// `√⟨P²⟩`.
    pub momentum_width: f64,
    pub p2: f64,
    pub p4: f64,
    pub abs_p: f64,
    pub abs_sin: f64,
    pub abs_sin_p: f64,
}

impl ObservableRecord {
    pub fn from_sums(tau: f64, s: &PartialSums, params: &ModelParams, pooling: Pooling) -> Self {
        let p2 = s.mean(Q_P2);
        let p4 = s.mean(Q_P4);
        let (asp, asn, ap) = (s.mean(Q_ASP), s.mean(Q_AS), s.mean(Q_AP));
        let (kurtosis, phi11) = match pooling {
            Pooling::Pooled => {
                let k = p4 / (p2 * p2);
                let k_se = s.linearized_se(
                    &[Q_P4, Q_P2],
                    &[1.0 / (p2 * p2), -2.0 * p4 / (p2 * p2 * p2)],
                );
                let phi = asp / (asn * ap) - 1.0;
                let phi_se = s.linearized_se(
                    &[Q_ASP, Q_AS, Q_AP],
                    &[
                        1.0 / (asn * ap),
                        -asp / (asn * asn * ap),
                        -asp / (asn * ap * ap),
                    ],
                );
                (
                    Estimate { mean: k, se: k_se },
                    Estimate {
                        mean: phi,
                        se: phi_se,
                    },
                )
            }
            Pooling::PerTrajectory => (s.estimate(Q_K), s.estimate(Q_PHI)),
        };
        let theta_sq = s.estimate(Q_THETA_SQ);
        let abs_theta = s.estimate(Q_ABS_THETA);
        Self {
            tau,
            theta: s.estimate(Q_THETA),
            abs_theta,
            theta_sq,
            kinetic: s.estimate(Q_P2),
            kurtosis,
            phi11,
            rel_loc: relative_localization(theta_sq.mean, abs_theta.mean).unwrap_or(f64::NAN),
            photons: params.n_atoms as f64 * params.nbar * theta_sq.mean,
            momentum_width: p2.sqrt(),
            p2,
            p4,
            abs_p: ap,
            abs_sin: asn,
            abs_sin_p: asp,
        }
    }
}

/// Run metadata written next to every series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub schema_version: u32,
    pub code_version: String,
    pub engine: Engine,
    /// Parameters the system evolves under.
    pub params: ModelParams,
    /// Parameters of the initial equilibrium.
    pub initial: ModelParams,
    pub dt: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub pooling: Pooling,
    /// Sample points per mean-field ensemble (mean-field engine only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mf_samples: Option<usize>,
    /// Trajectories that aborted and were left out of the statistics.
    #[serde(default)]
    pub aborted: usize,
}

impl SeriesMeta {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        let meta: SeriesMeta =
            serde_json::from_reader(r).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "sidecar schema version {} (expected {SCHEMA_VERSION})",
                meta.schema_version
            )));
        }
        Ok(meta)
    }
}

/// Time series of ensemble observables.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSeries {
    pub meta: SeriesMeta,
    pub records: Vec<ObservableRecord>,
}

/// One point of a scalar series with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub tau: f64,
    pub mean: f64,
    pub se: f64,
}

impl EnsembleSeries {
    /// Reduces per-trajectory snapshot series (all on the same grid) in
    /// trajectory order.
    pub fn from_trajectories(meta: SeriesMeta, runs: &[Vec<Snapshot>]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Degenerate("no trajectories to reduce".into()))?;
        let len = first.len();
        if runs.iter().any(|r| r.len() != len) {
            return Err(Error::Degenerate("trajectories recorded on different grids".into()));
        }
        let mut sums = vec![PartialSums::default(); len];
        for run in runs {
            for (acc, snap) in sums.iter_mut().zip(run) {
                acc.push(snap);
            }
        }
        let taus: Vec<f64> = first.iter().map(|s| s.tau).collect();
        Ok(Self::from_sums(meta, &taus, &sums))
    }

    pub fn from_sums(meta: SeriesMeta, taus: &[f64], sums: &[PartialSums]) -> Self {
        let records = taus
            .iter()
            .zip(sums)
            .map(|(&tau, s)| ObservableRecord::from_sums(tau, s, &meta.params, meta.pooling))
            .collect();
        Self { meta, records }
    }

    pub fn taus(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.tau).collect()
    }

    /// `⟨Θ²⟩` with its standard error.
    pub fn theta_sq(&self) -> Vec<SeriesPoint> {
        self.points(|r| r.theta_sq)
    }

    pub fn abs_theta(&self) -> Vec<SeriesPoint> {
        self.points(|r| r.abs_theta)
    }

    pub fn points(&self, f: impl Fn(&ObservableRecord) -> Estimate) -> Vec<SeriesPoint> {
        self.records
            .iter()
            .map(|r| {
                let e = f(r);
                SeriesPoint {
                    tau: r.tau,
                    mean: e.mean,
                    se: e.se,
                }
            })
            .collect()
    }

    /// Record closest to `tau`.
    pub fn at(&self, tau: f64) -> Option<&ObservableRecord> {
        self.records.iter().min_by(|a, b| {
            (a.tau - tau)
                .abs()
                .partial_cmp(&(b.tau - tau).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.tau,
                r.theta.mean,
                r.theta.se,
                r.abs_theta.mean,
                r.abs_theta.se,
                r.theta_sq.mean,
                r.theta_sq.se,
                r.kinetic.mean,
                r.kinetic.se,
                r.kurtosis.mean,
                r.phi11.mean,
                r.rel_loc,
                r.photons
            )?;
        }
        Ok(())
    }

    /// Reads a series written by [`write_csv`](Self::write_csv). Columns the
    /// CSV does not carry (ratio errors, raw moments) come back as NaN.
    pub fn read_csv<R: BufRead>(r: R, meta: SeriesMeta) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty series file".into()))??;
        if header.trim_end() != CSV_HEADER {
            return Err(Error::Format(format!("unexpected header: {header}")));
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))?;
            if v.len() != 13 {
                return Err(Error::Format(format!(
                    "line {}: expected 13 fields, got {}",
                    lineno + 2,
                    v.len()
                )));
            }
            let est = |m: f64, s: f64| Estimate { mean: m, se: s };
            records.push(ObservableRecord {
                tau: v[0],
                theta: est(v[1], v[2]),
                abs_theta: est(v[3], v[4]),
                theta_sq: est(v[5], v[6]),
                kinetic: est(v[7], v[8]),
                kurtosis: est(v[9], f64::NAN),
                phi11: est(v[10], f64::NAN),
                rel_loc: v[11],
                photons: v[12],
                momentum_width: v[7].sqrt(),
                p2: v[7],
                p4: f64::NAN,
                abs_p: f64::NAN,
                abs_sin: f64::NAN,
                abs_sin_p: f64::NAN,
            });
        }
        Ok(Self { meta, records })
    }
}

/// Writes raw per-trajectory snapshots.
pub fn write_raw_csv<W: Write>(mut w: W, runs: &[Vec<Snapshot>]) -> Result<()> {
    writeln!(w, "{RAW_CSV_HEADER}")?;
    for (t, run) in runs.iter().enumerate() {
        for s in run {
            writeln!(
                w,
                "{t},{},{},{},{},{},{},{},{},{}",
                s.tau,
                s.theta,
                s.theta * s.theta,
                s.p2,
                s.p2,
                s.p4,
                s.abs_sin_p,
                s.abs_sin,
                s.abs_p
            )?;
        }
    }
    Ok(())
}

/// Comparison of the two halves of a series' trailing decade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flatness {
    /// Mean over the whole trailing decade.
    pub stationary: f64,
    pub early_mean: f64,
    pub late_mean: f64,
    /// `3σ` of the half-mean difference plus the relative slack.
    pub allowance: f64,
    pub flat: bool,
}

fn rms(v: &[SeriesPoint]) -> f64 {
    let s: f64 = v
        .iter()
        .map(|p| if p.se.is_finite() { p.se * p.se } else { 0.0 })
        .sum();
    (s / v.len() as f64).sqrt()
}

/// Flatness test over the last decade of log-time (`τ ≥ τ_last / 10`).
///
/// Neighbouring records are strongly correlated, so each half-mean is given
/// the rms of its records' standard errors rather than an averaged-down one.
pub fn trailing_flatness(series: &[SeriesPoint]) -> Result<Flatness> {
    let last = series
        .last()
        .ok_or_else(|| Error::NotStationary("empty series".into()))?
        .tau;
    let tail: Vec<SeriesPoint> = series
        .iter()
        .copied()
        .filter(|p| p.tau > 0.0 && p.tau >= last / 10.0)
        .collect();
    if tail.len() < 4 {
        return Err(Error::NotStationary(format!(
            "only {} records in the trailing decade",
            tail.len()
        )));
    }
    let mean = |v: &[SeriesPoint]| v.iter().map(|p| p.mean).sum::<f64>() / v.len() as f64;
    let (early, late) = tail.split_at(tail.len() / 2);
    let stationary = mean(&tail);
    let (m1, m2) = (mean(early), mean(late));
    let sigma = (rms(early).powi(2) + rms(late).powi(2)).sqrt();
    let allowance = 3.0 * sigma + FLAT_REL_TOL * stationary.abs();
    Ok(Flatness {
        stationary,
        early_mean: m1,
        late_mean: m2,
        allowance,
        flat: (m2 - m1).abs() <= allowance,
    })
}

/// First time the series reaches `fraction` of its stationary value.
///
/// The stationary value is the trailing-decade mean; the crossing time is
/// interpolated linearly in `ln τ` (linearly in `τ` next to `τ = 0`).
pub fn t_star(series: &[SeriesPoint], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParams(format!("fraction {fraction} outside (0, 1]")));
    }
    let flat = trailing_flatness(series)?;
    let level = fraction * flat.stationary;
    let first = series[0];
    let start_tol = 3.0 * first.se.max(0.0) + 1e-9 * flat.stationary.abs();
    let crossing = series.iter().position(|p| p.mean >= level);
    let tau = match crossing {
        None => return Err(Error::NeverCrosses(fraction)),
        Some(0) if first.mean > flat.stationary + start_tol => {
            // starts above its final value: relaxes from above, no up-crossing
            return Err(Error::NeverCrosses(fraction));
        }
        Some(0) => first.tau,
        Some(k) => {
            let (a, b) = (series[k - 1], series[k]);
            let w = (level - a.mean) / (b.mean - a.mean);
            if a.tau > 0.0 {
                (a.tau.ln() + w * (b.tau.ln() - a.tau.ln())).exp()
            } else {
                a.tau + w * (b.tau - a.tau)
            }
        }
    };
    if !flat.flat {
        return Err(Error::NotStationary(format!(
            "trailing-decade halves differ by {:.4e} (allowed {:.4e})",
            (flat.late_mean - flat.early_mean).abs(),
            flat.allowance
        )));
    }
    Ok(tau)
}
