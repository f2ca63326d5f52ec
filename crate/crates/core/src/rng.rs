//! Per-trajectory random streams.
//!
//! Every trajectory owns two ChaCha8 streams keyed by the master seed: one for
//! drawing its initial state and one for its dynamics. Trajectory `k` can
//! therefore be replayed in isolation, and two engines started from the same
//! seed see identical initial ensembles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    InitialState = 0,
    Dynamics = 1,
}

pub fn trajectory_rng(master_seed: u64, trajectory: u64, role: StreamRole) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(2 * trajectory + role as u64);
    rng
}
