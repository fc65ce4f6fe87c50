//! State vectors of an `n`-qubit register and the elementary gate kernels.
//!
//! Qubit 0 is the most significant bit of the basis index, so the bit mask
//! of qubit `q` is `1 << (n - 1 - q)`. All kernels act in place and cost
//! O(N) per gate.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{invalid, Result};

/// Largest register the dense state representation accepts.
pub const MAX_QUBITS: usize = 26;

/// Pure state of an `n`-qubit register in the computational (momentum) basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl StateVector {
    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(invalid(format!(
                "basis index {index} out of range for {n_qubits} qubits (dimension {dim})"
            )));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the
    /// amplitudes are taken as given (no normalization).
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let dim = amps.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(invalid(format!(
                "amplitude count {dim} is not a power of two >= 2"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_qubits(n_qubits)?;
        Ok(Self { n_qubits, amps })
    }

    /// Equal superposition of all basis states.
    pub fn uniform(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let dim = 1usize << n_qubits;
        let a = C64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Ok(Self {
            n_qubits,
            amps: vec![a; dim],
        })
    }

    /// Normalized state with independent Gaussian real and imaginary parts.
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<Self> {
        check_qubits(n_qubits)?;
        let dim = 1usize << n_qubits;
        let mut amps: Vec<C64> = (0..dim)
            .map(|_| C64::new(gaussian(rng), gaussian(rng)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Hilbert-space dimension `N = 2^n`.
    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Largest per-amplitude deviation `max_j |a_j − b_j|`.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Probabilities `|a_j|²` in basis-index order.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub(crate) fn mask(&self, qubit: usize) -> usize {
        1usize << (self.n_qubits - 1 - qubit)
    }

    /// Applies an elementary gate in place.
    ///
    /// Panics if a qubit index is out of range; use [`Gate::validate`] to
    /// check untrusted gates first.
    pub fn apply_gate(&mut self, gate: &Gate) {
        match *gate {
            Gate::Hadamard(q) => self.hadamard(q),
            Gate::Phase(q, phi) => self.phase(q, C64::from_polar(1.0, phi)),
            Gate::ControlledPhase(a, b, phi) => {
                self.controlled_phase(a, b, C64::from_polar(1.0, phi))
            }
        }
    }

    pub(crate) fn hadamard(&mut self, q: usize) {
        let m = self.mask(q);
        let dim = self.amps.len();
        let s = FRAC_1_SQRT_2;
        let mut base = 0;
        while base < dim {
            let (lo, hi) = self.amps[base..base + 2 * m].split_at_mut(m);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = (x + y) * s;
                *b = (x - y) * s;
            }
            base += 2 * m;
        }
    }

    pub(crate) fn phase(&mut self, q: usize, factor: C64) {
        let m = self.mask(q);
        let dim = self.amps.len();
        let mut base = m;
        while base < dim {
            self.amps[base..base + m]
                .iter_mut()
                .for_each(|a| *a *= factor);
            base += 2 * m;
        }
    }

    pub(crate) fn controlled_phase(&mut self, a: usize, b: usize, factor: C64) {
        assert_ne!(a, b, "controlled phase needs two distinct qubits");
        let both = self.mask(a) | self.mask(b);
        for (j, amp) in self.amps.iter_mut().enumerate() {
            if j & both == both {
                *amp *= factor;
            }
        }
    }

    /// Multiplies amplitude `j` by `exp(i·phases[j])`.
    pub fn apply_diagonal(&mut self, phases: &[f64]) -> Result<()> {
        if phases.len() != self.amps.len() {
            return Err(invalid(format!(
                "diagonal of length {} applied to state of dimension {}",
                phases.len(),
                self.amps.len()
            )));
        }
        for (a, &p) in self.amps.iter_mut().zip(phases) {
            *a *= C64::from_polar(1.0, p);
        }
        Ok(())
    }

    /// Multiplies amplitude `j` by a precomputed unit-modulus factor.
    pub fn apply_factors(&mut self, factors: &[C64]) {
        debug_assert_eq!(factors.len(), self.amps.len());
        for (a, f) in self.amps.iter_mut().zip(factors) {
            *a *= f;
        }
    }

    pub fn scale(&mut self, factor: C64) {
        self.amps.iter_mut().for_each(|a| *a *= factor);
    }
}

fn check_qubits(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(invalid(format!(
            "qubit count {n_qubits} outside [1, {MAX_QUBITS}]"
        )));
    }
    Ok(())
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; one variate per call is enough here.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Elementary gates of the sawtooth-map circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Hadamard(usize),
    /// Multiplies amplitudes whose bit `q` is set by `exp(iφ)`.
    Phase(usize, f64),
    /// Multiplies amplitudes with both bits set by `exp(iφ)`.
    ControlledPhase(usize, usize, f64),
}

impl Gate {
    pub fn adjoint(&self) -> Gate {
        match *self {
            Gate::Hadamard(q) => Gate::Hadamard(q),
            Gate::Phase(q, phi) => Gate::Phase(q, -phi),
            Gate::ControlledPhase(a, b, phi) => Gate::ControlledPhase(a, b, -phi),
        }
    }

    /// True for gates that are diagonal in the computational basis.
    pub fn is_diagonal(&self) -> bool {
        !matches!(self, Gate::Hadamard(_))
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let ok = |q: usize| q < n_qubits;
        let valid = match *self {
            Gate::Hadamard(q) | Gate::Phase(q, _) => ok(q),
            Gate::ControlledPhase(a, b, _) => ok(a) && ok(b) && a != b,
        };
        if valid {
            Ok(())
        } else {
            Err(invalid(format!(
                "{self:?} is not valid on {n_qubits} qubits"
            )))
        }
    }
}

/// Direction of the discrete Fourier transform.
///
/// `Forward` maps `a_j → N^{-1/2} Σ_m e^{+2πi jm/N} a_m` (momentum to
/// angle); `Inverse` is its adjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourierDirection {
    Forward,
    Inverse,
}

impl FourierDirection {
    pub(crate) fn sign(self) -> f64 {
        match self {
            FourierDirection::Forward => 1.0,
            FourierDirection::Inverse => -1.0,
        }
    }
}

/// Dense O(N²) discrete Fourier transform, used as a reference for the
/// FFT- and gate-based transforms.
pub fn dft_oracle(state: &StateVector, direction: FourierDirection) -> StateVector {
    let dim = state.dim();
    let norm = 1.0 / (dim as f64).sqrt();
    let sign = direction.sign();
    // Twiddles indexed by (j·m) mod N keep the phase argument exact.
    let twiddle: Vec<C64> = (0..dim)
        .map(|r| C64::from_polar(norm, sign * 2.0 * PI * r as f64 / dim as f64))
        .collect();
    let amps = (0..dim)
        .map(|j| {
            state
                .amps
                .iter()
                .enumerate()
                .map(|(m, a)| twiddle[(j * m) % dim] * a)
                .sum()
        })
        .collect();
    StateVector {
        n_qubits: state.n_qubits,
        amps,
    }
}
