//! Static hardware imperfections acting between gates.
//!
//! Between consecutive gate slots the register evolves for a time `τ_g`
//! under `H_s = Σ_i δ_i σ_i^z + Σ_i J_i σ_i^x σ_{i+1}^x` (linear chain,
//! nearest neighbours, no wraparound). The mean one-qubit spacing is
//! assumed removed by spin echo and does not enter the dynamics.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::sawtooth::{compile_program, GateProgram, MapParams, Slot};
use crate::state::{Gate, StateVector};

/// How the coupling bound `J` follows the detuning scale `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    #[default]
    Zero,
    EqualToDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImperfectionConfig {
    detuning: f64,
    coupling: f64,
    gate_time: f64,
    mean_spacing: f64,
}

impl ImperfectionConfig {
    pub fn new(detuning: f64, coupling: f64, gate_time: f64, mean_spacing: f64) -> Result<Self> {
        if !(detuning >= 0.0 && detuning.is_finite()) {
            return Err(invalid(format!(
                "detuning scale must be >= 0, got {detuning}"
            )));
        }
        if !(coupling >= 0.0 && coupling.is_finite()) {
            return Err(invalid(format!(
                "coupling bound must be >= 0, got {coupling}"
            )));
        }
        if !(gate_time > 0.0 && gate_time.is_finite()) {
            return Err(invalid(format!("gate time must be > 0, got {gate_time}")));
        }
        Ok(Self {
            detuning,
            coupling,
            gate_time,
            mean_spacing,
        })
    }

    /// `τ_g = 1`, `δ = ε`, and `J` either zero or equal to `δ`.
    pub fn from_epsilon(epsilon: f64, mode: CouplingMode) -> Result<Self> {
        let coupling = match mode {
            CouplingMode::Zero => 0.0,
            CouplingMode::EqualToDelta => epsilon,
        };
        Self::new(epsilon, coupling, 1.0, 0.0)
    }

    pub fn noiseless() -> Self {
        Self {
            detuning: 0.0,
            coupling: 0.0,
            gate_time: 1.0,
            mean_spacing: 0.0,
        }
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn gate_time(&self) -> f64 {
        self.gate_time
    }

    /// Recorded only; removed by spin echo.
    pub fn mean_spacing(&self) -> f64 {
        self.mean_spacing
    }

    /// Rescaled strength `ε = δ τ_g`.
    pub fn epsilon(&self) -> f64 {
        self.detuning * self.gate_time
    }
}

/// One frozen draw of the detunings and nearest-neighbour couplings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImperfectionRealization {
    pub detunings: Vec<f64>,
    pub couplings: Vec<f64>,
    pub seed: u64,
}

impl ImperfectionRealization {
    pub fn zero(n_qubits: usize) -> Self {
        Self {
            detunings: vec![0.0; n_qubits],
            couplings: vec![0.0; n_qubits.saturating_sub(1)],
            seed: 0,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.detunings.len()
    }

    pub fn has_couplings(&self) -> bool {
        self.couplings.iter().any(|&j| j != 0.0)
    }

    /// Phase `−τ Σ_i δ_i s_i(j)` picked up by basis state `j` during one
    /// slot of length `τ`, with `s_i = +1` for bit 0 and `−1` for bit 1.
    pub fn detuning_phases(&self, gate_time: f64) -> Vec<f64> {
        let n = self.n_qubits();
        (0..1usize << n)
            .map(|j| {
                -gate_time
                    * self
                        .detunings
                        .iter()
                        .enumerate()
                        .map(|(i, d)| if j >> (n - 1 - i) & 1 == 0 { *d } else { -*d })
                        .sum::<f64>()
            })
            .collect()
    }
}

/// Draws `δ_i ∈ [−δ/2, δ/2)` and `J_i ∈ [−J, J)` from a ChaCha stream
/// seeded with `seed`. The uniform variates do not depend on the config,
/// so equal seeds give realizations that differ only by scale.
pub fn sample_realization(
    n_qubits: usize,
    cfg: &ImperfectionConfig,
    seed: u64,
) -> ImperfectionRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let detunings = (0..n_qubits)
        .map(|_| cfg.detuning * (rng.random::<f64>() - 0.5))
        .collect();
    let couplings = (0..n_qubits.saturating_sub(1))
        .map(|_| cfg.coupling * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    ImperfectionRealization {
        detunings,
        couplings,
        seed,
    }
}

/// `exp(−iθ σ^x_i σ^x_{i+1})` on the pair of adjacent qubits `(i, i+1)`.
#[derive(Debug, Clone, Copy)]
struct PairRotation {
    low: usize,
    flip: usize,
    cos: f64,
    sin: f64,
}

impl PairRotation {
    fn new(n_qubits: usize, first: usize, angle: f64) -> Self {
        let low = 1usize << (n_qubits - 1 - first);
        let high = 1usize << (n_qubits - 2 - first);
        Self {
            low,
            flip: low | high,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn apply(&self, amps: &mut [C64]) {
        let (c, ms) = (self.cos, C64::new(0.0, -self.sin));
        for j in 0..amps.len() {
            if j & self.low == 0 {
                let p = j ^ self.flip;
                let (a, b) = (amps[j], amps[p]);
                amps[j] = a * c + ms * b;
                amps[p] = b * c + ms * a;
            }
        }
    }
}

fn coupling_layer(r: &ImperfectionRealization, duration: f64) -> Vec<PairRotation> {
    let n = r.n_qubits();
    r.couplings
        .iter()
        .enumerate()
        .map(|(i, &j)| PairRotation::new(n, i, j * duration))
        .collect()
}

/// Evolves the register for one gate interval under the static Hamiltonian.
///
/// Without couplings the evolution is an exact diagonal phase. With
/// couplings it uses the symmetric splitting half-z, xx pairs left to
/// right, half-z; the xx pair terms commute, so each is exponentiated
/// exactly.
pub fn intergate_evolution(state: &mut StateVector, r: &ImperfectionRealization, gate_time: f64) {
    assert_eq!(state.n_qubits(), r.n_qubits(), "realization size mismatch");
    let z = r.detuning_phases(gate_time);
    if !r.has_couplings() {
        state.apply_diagonal(&z).expect("dimension checked");
        return;
    }
    let half: Vec<f64> = z.iter().map(|p| p / 2.0).collect();
    state.apply_diagonal(&half).expect("dimension checked");
    for rot in coupling_layer(r, gate_time) {
        rot.apply(state.amplitudes_mut());
    }
    state.apply_diagonal(&half).expect("dimension checked");
}

/// One map iteration on imperfect hardware, slot by slot: each slot
/// applies its gate (if any) and then one interval of static evolution.
pub fn noisy_iteration(
    state: &mut StateVector,
    prog: &GateProgram,
    r: &ImperfectionRealization,
    cfg: &ImperfectionConfig,
) {
    for slot in prog.slots() {
        if let Slot::Gate(g) = slot {
            state.apply_gate(g);
        }
        intergate_evolution(state, r, cfg.gate_time());
    }
    state.scale(C64::from_polar(1.0, prog.global_phase()));
}

enum Op {
    Diagonal(Vec<C64>),
    Hadamard(usize),
    Couplings(Vec<PairRotation>),
}

/// Precompiled imperfect map iteration.
///
/// Diagonal gates commute with the detuning evolution, so every run of
/// diagonal gates and z phases between two non-diagonal operations is
/// folded into one precomputed diagonal. Equal to [`noisy_iteration`] up
/// to rounding.
pub struct NoisyMap {
    n_qubits: usize,
    ops: Vec<Op>,
}

struct DiagonalAccumulator {
    n_qubits: usize,
    phases: Vec<f64>,
    dirty: bool,
}

impl DiagonalAccumulator {
    fn add(&mut self, phases: &[f64], scale: f64) {
        self.phases
            .iter_mut()
            .zip(phases)
            .for_each(|(a, p)| *a += scale * p);
        self.dirty = true;
    }

    fn add_gate(&mut self, g: &Gate) {
        let n = self.n_qubits;
        let mask = |q: usize| 1usize << (n - 1 - q);
        let (bits, phi) = match *g {
            Gate::Phase(q, phi) => (mask(q), phi),
            Gate::ControlledPhase(a, b, phi) => (mask(a) | mask(b), phi),
            Gate::Hadamard(_) => unreachable!("not diagonal"),
        };
        for (j, p) in self.phases.iter_mut().enumerate() {
            if j & bits == bits {
                *p += phi;
            }
        }
        self.dirty = true;
    }

    fn add_constant(&mut self, phi: f64) {
        self.phases.iter_mut().for_each(|p| *p += phi);
        self.dirty = true;
    }

    fn flush(&mut self, ops: &mut Vec<Op>) {
        if self.dirty {
            ops.push(Op::Diagonal(
                self.phases
                    .iter()
                    .map(|&p| C64::from_polar(1.0, p))
                    .collect(),
            ));
            self.phases.iter_mut().for_each(|p| *p = 0.0);
            self.dirty = false;
        }
    }
}

impl NoisyMap {
    pub fn new(p: &MapParams, r: &ImperfectionRealization, cfg: &ImperfectionConfig) -> Self {
        Self::from_program(&compile_program(p), r, cfg)
    }

    /// Noiseless program with all diagonals fused.
    pub fn noiseless(p: &MapParams) -> Self {
        Self::new(
            p,
            &ImperfectionRealization::zero(p.n_qubits()),
            &ImperfectionConfig::noiseless(),
        )
    }

    pub fn from_program(
        prog: &GateProgram,
        r: &ImperfectionRealization,
        cfg: &ImperfectionConfig,
    ) -> Self {
        let n = prog.n_qubits();
        assert_eq!(n, r.n_qubits(), "realization size mismatch");
        let dim = 1usize << n;
        let z = r.detuning_phases(cfg.gate_time());
        let has_z = z.iter().any(|&p| p != 0.0);
        let couplings = r
            .has_couplings()
            .then(|| coupling_layer(r, cfg.gate_time()));
        let mut acc = DiagonalAccumulator {
            n_qubits: n,
            phases: vec![0.0; dim],
            dirty: false,
        };
        let mut ops = Vec::new();
        for slot in prog.slots() {
            match slot {
                Slot::Gate(Gate::Hadamard(q)) => {
                    acc.flush(&mut ops);
                    ops.push(Op::Hadamard(*q));
                }
                Slot::Gate(g) => acc.add_gate(g),
                Slot::Idle => {}
            }
            match &couplings {
                None => {
                    if has_z {
                        acc.add(&z, 1.0);
                    }
                }
                Some(layer) => {
                    acc.add(&z, 0.5);
                    acc.flush(&mut ops);
                    ops.push(Op::Couplings(layer.clone()));
                    acc.add(&z, 0.5);
                }
            }
        }
        if prog.global_phase() != 0.0 {
            acc.add_constant(prog.global_phase());
        }
        acc.flush(&mut ops);
        Self { n_qubits: n, ops }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn step(&self, state: &mut StateVector) {
        assert_eq!(state.n_qubits(), self.n_qubits, "state size mismatch");
        for op in &self.ops {
            match op {
                Op::Diagonal(f) => state.apply_factors(f),
                Op::Hadamard(q) => state.hadamard(*q),
                Op::Couplings(layer) => {
                    for rot in layer {
                        rot.apply(state.amplitudes_mut());
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sawtooth::ExactPropagator;
    use nalgebra::DMatrix;
    use rand::SeedableRng;

    /// Dense `H_s` on `n` qubits built from Kronecker products.
    fn dense_hamiltonian(r: &ImperfectionRealization) -> DMatrix<C64> {
        let n = r.n_qubits();
        let dim = 1 << n;
        let mut h = DMatrix::<C64>::zeros(dim, dim);
        for j in 0..dim {
            for (i, d) in r.detunings.iter().enumerate() {
                let s = if j >> (n - 1 - i) & 1 == 0 { 1.0 } else { -1.0 };
                h[(j, j)] += C64::new(d * s, 0.0);
            }
            for (i, c) in r.couplings.iter().enumerate() {
                let flip = (1 << (n - 1 - i)) | (1 << (n - 2 - i));
                h[(j ^ flip, j)] += C64::new(*c, 0.0);
            }
        }
        h
    }

    fn dense_evolution(r: &ImperfectionRealization, tau: f64) -> DMatrix<C64> {
        (dense_hamiltonian(r) * C64::new(0.0, -tau)).exp()
    }

    fn apply_dense(m: &DMatrix<C64>, s: &StateVector) -> StateVector {
        let v = nalgebra::DVector::from_column_slice(s.amplitudes());
        StateVector::from_amplitudes((m * v).iter().copied().collect()).unwrap()
    }

    #[test]
    fn zero_disorder() {
        let cfg = ImperfectionConfig::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let r = sample_realization(4, &cfg, 7);
        assert!(r.detunings.iter().chain(&r.couplings).all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = StateVector::random(4, &mut rng).unwrap();
        let mut t = s.clone();
        intergate_evolution(&mut t, &r, 1.0);
        assert_eq!(s, t);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let cfg = ImperfectionConfig::new(0.3, 0.2, 1.0, 5.0).unwrap();
        let a = sample_realization(6, &cfg, 42);
        assert_eq!(a, sample_realization(6, &cfg, 42));
        assert_ne!(a, sample_realization(6, &cfg, 43));
        assert_eq!(a.couplings.len(), 5);
        assert!(a.detunings.iter().all(|d| d.abs() <= 0.15));
        assert!(a.couplings.iter().all(|j| j.abs() <= 0.2));
    }

    #[test]
    fn detuning_sample_statistics() {
        // Uniform on [−δ/2, δ/2]: mean 0, σ = δ/√12.
        let delta = 1.0;
        let cfg = ImperfectionConfig::new(delta, 0.0, 1.0, 0.0).unwrap();
        let draws: Vec<f64> = (0..10_000u64)
            .flat_map(|s| sample_realization(1, &cfg, s).detunings)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sigma_mean = delta / 12f64.sqrt() / (draws.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean}");
        assert!(draws.iter().all(|d| d.abs() <= delta / 2.0));
    }

    #[test]
    fn single_qubit_detuning_phase() {
        let r = ImperfectionRealization {
            detunings: vec![0.37],
            couplings: vec![],
            seed: 0,
        };
        let mut s = StateVector::basis(1, 0).unwrap();
        intergate_evolution(&mut s, &r, 0.5);
        let expect = C64::from_polar(1.0, -0.37 * 0.5);
        assert!((s.amplitudes()[0] - expect).norm() < 1e-15);
    }

    #[test]
    fn splitting_matches_dense_exponential() {
        for n in [2usize, 3] {
            let cfg = ImperfectionConfig::new(0.8, 0.6, 1.0, 0.0).unwrap();
            let r = sample_realization(n, &cfg, 3 + n as u64);
            for tau in [0.01, 0.05, 0.2] {
                let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
                let s = StateVector::random(n, &mut rng).unwrap();
                let exact = apply_dense(&dense_evolution(&r, tau), &s);
                let mut split = s.clone();
                intergate_evolution(&mut split, &r, tau);
                let h = dense_hamiltonian(&r);
                let hmax = h.iter().map(|x| x.norm()).fold(0.0, f64::max);
                let bound = if n == 2 {
                    (h.norm() * tau).powi(3)
                } else {
                    10.0 * (hmax * tau).powi(3)
                };
                let err = split.max_abs_diff(&exact);
                assert!(err < bound, "n={n} tau={tau}: {err} vs {bound}");
            }
        }
    }

    #[test]
    fn split_path_at_zero_coupling_equals_fast_path() {
        let cfg = ImperfectionConfig::new(0.4, 0.0, 1.0, 0.0).unwrap();
        let r = sample_realization(4, &cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = StateVector::random(4, &mut rng).unwrap();
        let mut fast = s.clone();
        intergate_evolution(&mut fast, &r, 0.3);
        // Force the split path with an explicit zero coupling layer.
        let mut split = s.clone();
        let half: Vec<f64> = r.detuning_phases(0.3).iter().map(|p| p / 2.0).collect();
        split.apply_diagonal(&half).unwrap();
        for rot in coupling_layer(&r, 0.3) {
            rot.apply(split.amplitudes_mut());
        }
        split.apply_diagonal(&half).unwrap();
        assert!(fast.max_abs_diff(&split) < 1e-15);
    }

    #[test]
    fn noiseless_iteration_equals_program() {
        let p = MapParams::new(5, 2.0, 2f64.sqrt(), 0).unwrap();
        let prog = compile_program(&p);
        let cfg = ImperfectionConfig::from_epsilon(0.0, CouplingMode::Zero).unwrap();
        let r = sample_realization(5, &cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = StateVector::random(5, &mut rng).unwrap();
        let mut a = s.clone();
        noisy_iteration(&mut a, &prog, &r, &cfg);
        let mut b = s.clone();
        prog.apply(&mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn fused_map_equals_slot_by_slot() {
        for (mode, eps) in [
            (CouplingMode::Zero, 0.0),
            (CouplingMode::Zero, 3e-3),
            (CouplingMode::EqualToDelta, 3e-3),
        ] {
            let p = MapParams::new(5, 2.0, 2f64.sqrt(), 0).unwrap();
            let cfg = ImperfectionConfig::from_epsilon(eps, mode).unwrap();
            let r = sample_realization(5, &cfg, 77);
            let prog = compile_program(&p);
            let fused = NoisyMap::from_program(&prog, &r, &cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let s = StateVector::random(5, &mut rng).unwrap();
            let (mut a, mut b) = (s.clone(), s.clone());
            for _ in 0..3 {
                noisy_iteration(&mut a, &prog, &r, &cfg);
                fused.step(&mut b);
            }
            assert!(
                a.max_abs_diff(&b) < 1e-12,
                "{mode:?} {eps}: {}",
                a.max_abs_diff(&b)
            );
        }
    }

    #[test]
    fn noisy_evolution_stays_unitary() {
        let p = MapParams::new(6, 2.0, 2f64.sqrt(), 0).unwrap();
        let cfg = ImperfectionConfig::from_epsilon(1e-2, CouplingMode::EqualToDelta).unwrap();
        let r = sample_realization(6, &cfg, 5);
        let map = NoisyMap::new(&p, &r, &cfg);
        let mut s = p.initial_state();
        for _ in 0..300 {
            map.step(&mut s);
        }
        assert!((s.norm_sqr() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn fidelity_loss_grows_quadratically_in_epsilon() {
        // 1 − F ≈ C ε² for small ε; check the ratio over one decade.
        let p = MapParams::new(6, 2.0, 2f64.sqrt(), 0).unwrap();
        let t = 20;
        let mut clean = p.initial_state();
        let mut prop = ExactPropagator::new(&p);
        for _ in 0..t {
            prop.step(&mut clean);
        }
        let infidelity = |eps: f64| {
            let cfg = ImperfectionConfig::from_epsilon(eps, CouplingMode::Zero).unwrap();
            let r = sample_realization(6, &cfg, 12);
            let map = NoisyMap::new(&p, &r, &cfg);
            let mut s = p.initial_state();
            for _ in 0..t {
                map.step(&mut s);
            }
            1.0 - clean.inner(&s).norm_sqr()
        };
        let losses: Vec<f64> = [1e-6, 3e-6, 1e-5].iter().map(|&e| infidelity(e)).collect();
        assert!(losses.windows(2).all(|w| w[1] > w[0]), "{losses:?}");
        let ratio = losses[2] / losses[0];
        assert!((ratio / 100.0 - 1.0).abs() < 0.05, "ratio {ratio}");
        let ng = crate::sawtooth::slots_per_iteration(6) as f64;
        let c = losses[2] / (1e-10 * ng * t as f64);
        assert!(c > 0.0 && c.is_finite());
    }
}
