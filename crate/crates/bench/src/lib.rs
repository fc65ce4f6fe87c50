//! Shared fixtures for the benchmarks.

use sawtooth::imperfections::{sample_realization, CouplingMode, ImperfectionConfig, NoisyMap};
use sawtooth::sawtooth::MapParams;

/// Map at `k = 2`, `K = √2` on `n_qubits`.
pub fn params(n_qubits: usize) -> MapParams {
    MapParams::new(n_qubits, 2.0, 2f64.sqrt(), 0).expect("valid parameters")
}

/// Noisy map at strength `epsilon` with a fixed realization.
pub fn noisy_map(n_qubits: usize, epsilon: f64, mode: CouplingMode) -> NoisyMap {
    let cfg = ImperfectionConfig::from_epsilon(epsilon, mode).expect("valid strength");
    let r = sample_realization(n_qubits, &cfg, 1);
    NoisyMap::new(&params(n_qubits), &r, &cfg)
}
