//! Criterion benchmarks for the integrators and the equilibrium sampler; see
//! `benches/step.rs`. Run with `cargo bench -p prethermal-bench`.
