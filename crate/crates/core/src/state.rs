use std::f64::consts::TAU;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Positions and momenta of one N-body trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub tau: f64,
}

/// Wraps an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl PhaseState {
    pub fn new(x: Vec<f64>, p: Vec<f64>, tau: f64) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::InvalidParams(format!(
                "position and momentum arrays differ in length ({} vs {})",
                x.len(),
                p.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::InvalidParams("empty phase state".into()));
        }
        let x = x.into_iter().map(wrap_angle).collect();
        Ok(Self { x, p, tau })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Order parameter `Θ = (1/N) Σ cos X_i`.
    pub fn theta(&self) -> f64 {
        self.x.iter().map(|x| x.cos()).sum::<f64>() / self.len() as f64
    }

    pub fn p2_sum(&self) -> f64 {
        self.p.iter().map(|p| p * p).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite())
    }

    /// Writes the checkpoint layout: `N: u64`, `tau: f64`, `X[N]: f64`,
    /// `P[N]: f64`, all little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.tau.to_le_bytes())?;
        for v in self.x.iter().chain(&self.p) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8);
        if n == 0 || n > (1 << 32) {
            return Err(Error::Format(format!("checkpoint particle count {n}")));
        }
        let n = n as usize;
        r.read_exact(&mut b8)?;
        let tau = f64::from_le_bytes(b8);
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                v.push(f64::from_le_bytes(b8));
            }
            Ok(v)
        };
        let x = read_vec(n)?;
        let p = read_vec(n)?;
        if x.iter().any(|&v| !(0.0..TAU).contains(&v)) {
            return Err(Error::Format("checkpoint position outside [0, 2pi)".into()));
        }
        Ok(Self { x, p, tau })
    }
}

/// Writes sampled initial states as `trajectory,particle,X,P` rows.
pub fn write_states_csv<W: Write>(mut w: W, states: &[PhaseState]) -> Result<()> {
    writeln!(w, "trajectory,particle,X,P")?;
    for (t, s) in states.iter().enumerate() {
        for (i, (x, p)) in s.x.iter().zip(&s.p).enumerate() {
            writeln!(w, "{t},{i},{x:e},{p:e}")?;
        }
    }
    Ok(())
}
