//! The sawtooth map: parameters, the exact one-period Floquet step, the
//! gate program realizing one iteration on the register, and the classical
//! reference map.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::fit::{origin_line, FitResult};
use crate::state::{Gate, StateVector};

/// Parameters of one quantum sawtooth map instance.
///
/// The map is `ψ → exp(−i T n̂²/2) exp(i k (θ̂ − π)²/2) ψ` on `N = 2^n`
/// momentum levels `−N/2 ≤ n < N/2`. `kick` is `k`, `rotation` is `T` and
/// `chaos` is the classical parameter `K = kT`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapParams {
    n_qubits: usize,
    kick: f64,
    chaos: f64,
    rotation: f64,
    initial_momentum: i64,
}

impl MapParams {
    /// Parameters at fixed `k` and `K`; the rotation is `T = K / k`.
    pub fn new(n_qubits: usize, kick: f64, chaos: f64, initial_momentum: i64) -> Result<Self> {
        if !(kick > 0.0 && kick.is_finite()) {
            return Err(invalid(format!(
                "kick strength must be positive, got {kick}"
            )));
        }
        if !chaos.is_finite() {
            return Err(invalid("chaos parameter must be finite"));
        }
        Self::checked(n_qubits, kick, chaos, chaos / kick, initial_momentum)
    }

    /// Parameters from `k` and `T` directly; allows the degenerate `k = 0`.
    pub fn with_rotation(
        n_qubits: usize,
        kick: f64,
        rotation: f64,
        initial_momentum: i64,
    ) -> Result<Self> {
        if !(kick >= 0.0 && kick.is_finite() && rotation.is_finite()) {
            return Err(invalid(format!(
                "kick {kick} must be non-negative and rotation {rotation} finite"
            )));
        }
        Self::checked(n_qubits, kick, kick * rotation, rotation, initial_momentum)
    }

    fn checked(n_qubits: usize, kick: f64, chaos: f64, rotation: f64, n0: i64) -> Result<Self> {
        if n_qubits == 0 || n_qubits > crate::state::MAX_QUBITS {
            return Err(invalid(format!("unsupported qubit count {n_qubits}")));
        }
        let half = 1i64 << (n_qubits - 1);
        if !(-half..half).contains(&n0) {
            return Err(invalid(format!(
                "initial momentum {n0} outside [{}, {half})",
                -half
            )));
        }
        Ok(Self {
            n_qubits,
            kick,
            chaos,
            rotation,
            initial_momentum: n0,
        })
    }

    /// Same map started from a different momentum level.
    pub fn with_initial_momentum(&self, n0: i64) -> Result<Self> {
        Self::checked(self.n_qubits, self.kick, self.chaos, self.rotation, n0)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Number of momentum levels `N = 2^n`.
    pub fn levels(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn kick(&self) -> f64 {
        self.kick
    }

    pub fn chaos(&self) -> f64 {
        self.chaos
    }

    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    /// Number of classical cells `L = T N / 2π`; not rounded.
    pub fn cells(&self) -> f64 {
        self.rotation * self.levels() as f64 / (2.0 * PI)
    }

    pub fn initial_momentum(&self) -> i64 {
        self.initial_momentum
    }

    /// Register state holding the initial momentum eigenstate.
    pub fn initial_state(&self) -> StateVector {
        StateVector::basis(
            self.n_qubits,
            momentum_index(self.initial_momentum, self.levels()),
        )
        .expect("initial momentum validated at construction")
    }
}

/// Signed momentum of basis index `index`: `m` below `N/2`, `m − N` above.
pub fn signed_momentum(index: usize, levels: usize) -> i64 {
    if index < levels / 2 {
        index as i64
    } else {
        index as i64 - levels as i64
    }
}

/// Basis index of signed momentum `n`, wrapping modulo `N`.
pub fn momentum_index(n: i64, levels: usize) -> usize {
    n.rem_euclid(levels as i64) as usize
}

/// Kick phases `k (θ_j − π)² / 2` on the angle grid `θ_j = 2πj/N`.
pub fn kick_phases(p: &MapParams) -> Vec<f64> {
    let dim = p.levels();
    (0..dim)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / dim as f64;
            p.kick * (theta - PI).powi(2) / 2.0
        })
        .collect()
}

/// Free-rotation phases `−T n(m)² / 2` in momentum-index order.
pub fn rotation_phases(p: &MapParams) -> Vec<f64> {
    let dim = p.levels();
    (0..dim)
        .map(|m| {
            let n = signed_momentum(m, dim) as f64;
            -p.rotation * n * n / 2.0
        })
        .collect()
}

/// FFT-based split-operator propagator for the noiseless map.
pub struct ExactPropagator {
    to_angle: Arc<dyn Fft<f64>>,
    to_momentum: Arc<dyn Fft<f64>>,
    kick: Vec<C64>,
    rotation: Vec<C64>,
    scratch: Vec<C64>,
}

impl ExactPropagator {
    pub fn new(p: &MapParams) -> Self {
        let dim = p.levels();
        let mut planner = FftPlanner::new();
        // rustfft's inverse carries e^{+2πi jm/N}, which is our forward direction.
        let to_angle = planner.plan_fft_inverse(dim);
        let to_momentum = planner.plan_fft_forward(dim);
        let scratch_len = to_angle
            .get_inplace_scratch_len()
            .max(to_momentum.get_inplace_scratch_len());
        let kick = kick_phases(p)
            .into_iter()
            .map(|x| C64::from_polar(1.0, x))
            .collect();
        // Both unnormalized transforms together contribute a factor N.
        let norm = 1.0 / dim as f64;
        let rotation = rotation_phases(p)
            .into_iter()
            .map(|x| C64::from_polar(norm, x))
            .collect();
        Self {
            to_angle,
            to_momentum,
            kick,
            rotation,
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
        }
    }

    /// One map iteration `ψ → U ψ`.
    pub fn step(&mut self, state: &mut StateVector) {
        assert_eq!(state.dim(), self.kick.len(), "state dimension mismatch");
        let amps = state.amplitudes_mut();
        self.to_angle.process_with_scratch(amps, &mut self.scratch);
        amps.iter_mut().zip(&self.kick).for_each(|(a, f)| *a *= f);
        self.to_momentum
            .process_with_scratch(amps, &mut self.scratch);
        amps.iter_mut()
            .zip(&self.rotation)
            .for_each(|(a, f)| *a *= f);
    }

    /// One iteration of the inverse map `ψ → U† ψ`.
    pub fn step_back(&mut self, state: &mut StateVector) {
        let dim = self.kick.len() as f64;
        let amps = state.amplitudes_mut();
        amps.iter_mut()
            .zip(&self.rotation)
            .for_each(|(a, f)| *a *= f.conj() * dim);
        self.to_angle.process_with_scratch(amps, &mut self.scratch);
        amps.iter_mut()
            .zip(&self.kick)
            .for_each(|(a, f)| *a *= f.conj());
        self.to_momentum
            .process_with_scratch(amps, &mut self.scratch);
        amps.iter_mut().for_each(|a| *a /= dim);
    }
}

/// Applies one exact map iteration. Builds a fresh propagator; reuse an
/// [`ExactPropagator`] when iterating.
pub fn exact_step(state: &mut StateVector, p: &MapParams) {
    ExactPropagator::new(p).step(state);
}

/// One time slot of the gate program. `Idle` slots emit no gate but still
/// take one gate time on the hardware.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Gate(Gate),
    Idle,
}

/// Gate sequence realizing one map iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GateProgram {
    n_qubits: usize,
    slots: Vec<Slot>,
    global_phase: f64,
}

impl GateProgram {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Slots per iteration, `n_g = 3n² + n`.
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.slots.iter().filter_map(|s| match s {
            Slot::Gate(g) => Some(g),
            Slot::Idle => None,
        })
    }

    /// Constant phase of the iteration that no gate carries.
    pub fn global_phase(&self) -> f64 {
        self.global_phase
    }

    /// Applies the program without imperfections.
    pub fn apply(&self, state: &mut StateVector) {
        for g in self.gates() {
            state.apply_gate(g);
        }
        state.scale(C64::from_polar(1.0, self.global_phase));
    }
}

/// Slot count per map iteration, `3n² + n`.
pub fn slots_per_iteration(n_qubits: usize) -> usize {
    3 * n_qubits * n_qubits + n_qubits
}

/// Gate-level Fourier transform in the forward direction. The output is
/// left in bit-reversed order (no swap network).
pub fn qft_gates(n_qubits: usize) -> Vec<Gate> {
    let mut gates = Vec::with_capacity(n_qubits * (n_qubits + 1) / 2);
    for q in 0..n_qubits {
        gates.push(Gate::Hadamard(q));
        for r in q + 1..n_qubits {
            let phi = 2.0 * PI / (1u64 << (r - q + 1)) as f64;
            gates.push(Gate::ControlledPhase(q, r, phi));
        }
    }
    gates
}

/// Adjoint of [`qft_gates`]: takes bit-reversed input to natural order.
pub fn inverse_qft_gates(n_qubits: usize) -> Vec<Gate> {
    qft_gates(n_qubits)
        .iter()
        .rev()
        .map(Gate::adjoint)
        .collect()
}

/// Expands `Σ_j c·(Σ_q w_q x_q + offset)² ` over bits `x_q` into single-qubit
/// and pairwise phase gates; returns the gates and the constant part.
fn quadratic_phase_gates(coeff: f64, weights: &[f64], offset: f64) -> (Vec<Gate>, f64) {
    let n = weights.len();
    let mut gates = Vec::with_capacity(n * (n + 1) / 2);
    for (q, &w) in weights.iter().enumerate() {
        // x² = x for a bit.
        gates.push(Gate::Phase(q, coeff * (w * w + 2.0 * offset * w)));
    }
    for q in 0..n {
        for r in q + 1..n {
            gates.push(Gate::ControlledPhase(
                q,
                r,
                2.0 * coeff * weights[q] * weights[r],
            ));
        }
    }
    (gates, coeff * offset * offset)
}

/// Compiles one map iteration into elementary gates.
///
/// Order: forward QFT (output bit-reversed), kick phases addressed through
/// the bit reversal, half the idle padding, inverse QFT, rotation phases,
/// remaining idle padding. Emitted gates number `2n² + 2n`; `n² − n` idle
/// slots bring the slot count to `3n² + n`.
pub fn compile_program(p: &MapParams) -> GateProgram {
    let n = p.n_qubits;
    let dim = p.levels() as f64;
    let mut slots: Vec<Slot> = Vec::with_capacity(slots_per_iteration(n));
    let idle = n * n - n;

    slots.extend(qft_gates(n).into_iter().map(Slot::Gate));

    // After the unswapped QFT, qubit q carries the bit of weight 2^q of the
    // angle index j, so θ_j − π = Σ_q (2π 2^q / N) x_q − π.
    let angle_weights: Vec<f64> = (0..n)
        .map(|q| 2.0 * PI * (1u64 << q) as f64 / dim)
        .collect();
    let (kick_gates, kick_const) = quadratic_phase_gates(p.kick / 2.0, &angle_weights, -PI);
    slots.extend(kick_gates.into_iter().map(Slot::Gate));
    slots.extend(std::iter::repeat_n(Slot::Idle, idle / 2));

    slots.extend(inverse_qft_gates(n).into_iter().map(Slot::Gate));

    // Two's complement: qubit 0 carries −N/2, qubit q ≥ 1 carries 2^{n−1−q}.
    let momentum_weights: Vec<f64> = (0..n)
        .map(|q| {
            let w = (1u64 << (n - 1 - q)) as f64;
            if q == 0 {
                -w
            } else {
                w
            }
        })
        .collect();
    let (rot_gates, rot_const) = quadratic_phase_gates(-p.rotation / 2.0, &momentum_weights, 0.0);
    slots.extend(rot_gates.into_iter().map(Slot::Gate));
    slots.extend(std::iter::repeat_n(Slot::Idle, idle - idle / 2));

    debug_assert_eq!(slots.len(), slots_per_iteration(n));
    GateProgram {
        n_qubits: n,
        slots,
        global_phase: kick_const + rot_const,
    }
}

/// Point of the classical phase space: action `n` and angle `θ ∈ [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalState {
    pub action: f64,
    pub angle: f64,
}

impl ClassicalState {
    pub fn new(action: f64, angle: f64) -> Self {
        Self {
            action,
            angle: angle.rem_euclid(2.0 * PI),
        }
    }
}

/// `n̄ = n + k(θ − π)`, `θ̄ = θ + T n̄ (mod 2π)`.
pub fn classical_step(s: ClassicalState, kick: f64, rotation: f64) -> ClassicalState {
    let action = s.action + kick * (s.angle - PI);
    ClassicalState::new(action, s.angle + rotation * action)
}

/// Ensemble spreading of the classical map and its fitted diffusion
/// coefficient (levels² per iteration).
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalDiffusion {
    /// `(t, ⟨(Δn)²⟩)` for `t = 1..=t_max`.
    pub series: Vec<(usize, f64)>,
    pub fit: FitResult,
}

/// Evolves `n_traj` trajectories from `n = 0` with uniformly random angles
/// and fits `⟨(Δn)²⟩ = D t` through the origin over `t ∈ [1, t_max]`.
pub fn classical_diffusion<R: Rng + ?Sized>(
    chaos: f64,
    kick: f64,
    n_traj: usize,
    t_max: usize,
    rng: &mut R,
) -> Result<ClassicalDiffusion> {
    if t_max < 2 {
        return Err(invalid(format!("t_max = {t_max} leaves nothing to fit")));
    }
    if n_traj == 0 {
        return Err(invalid("need at least one trajectory"));
    }
    let rotation = if kick > 0.0 { chaos / kick } else { 0.0 };
    let mut sums = vec![0.0; t_max];
    for _ in 0..n_traj {
        let mut s = ClassicalState::new(0.0, rng.random::<f64>() * 2.0 * PI);
        for slot in sums.iter_mut() {
            s = classical_step(s, kick, rotation);
            *slot += s.action * s.action;
        }
    }
    let series: Vec<(usize, f64)> = sums
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s / n_traj as f64))
        .collect();
    let ts: Vec<f64> = series.iter().map(|&(t, _)| t as f64).collect();
    let m2: Vec<f64> = series.iter().map(|&(_, m)| m).collect();
    let line = origin_line(&ts, &m2)?;
    Ok(ClassicalDiffusion {
        fit: FitResult {
            value: line.slope,
            stderr: line.slope_se,
            window: (1.0, t_max as f64),
            residual: line.rms,
            points: series.len(),
        },
        series,
    })
}
