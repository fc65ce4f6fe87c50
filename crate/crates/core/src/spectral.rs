//! Floquet spectra of the perturbed map and level-spacing statistics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64 as C64;
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{invalid, Error, Result};
use crate::imperfections::{ImperfectionConfig, ImperfectionRealization, NoisyMap};
use crate::sawtooth::{ExactPropagator, MapParams};
use crate::state::StateVector;

/// Largest dimension diagonalized by default.
pub const DEFAULT_DENSE_CAP: usize = 1 << 11;

/// One-period evolution operator in the momentum basis.
#[derive(Debug, Clone)]
pub struct FloquetMatrix {
    matrix: DMatrix<C64>,
    pub params: MapParams,
    pub epsilon: f64,
    pub seed: u64,
}

impl FloquetMatrix {
    pub fn from_matrix(matrix: DMatrix<C64>, params: MapParams) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() != params.levels() {
            return Err(invalid(format!(
                "matrix is {}x{}, expected {n}x{n}",
                matrix.nrows(),
                matrix.ncols(),
                n = params.levels()
            )));
        }
        Ok(Self {
            matrix,
            params,
            epsilon: 0.0,
            seed: 0,
        })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max |U†U − I|`.
    pub fn unitarity_error(&self) -> f64 {
        let g = self.matrix.adjoint() * &self.matrix;
        g.iter()
            .enumerate()
            .map(|(k, z)| {
                let (i, j) = (k % g.nrows(), k / g.nrows());
                (if i == j { z - C64::new(1.0, 0.0) } else { *z }).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `e^{iχ} U`.
    pub fn phase_shifted(&self, chi: f64) -> Self {
        let mut out = self.clone();
        out.matrix *= C64::from_polar(1.0, chi);
        out
    }

    fn provenance(&self) -> String {
        format!(
            "n_q={} k={} K={} eps={} seed={}",
            self.params.n_qubits(),
            self.params.kick(),
            self.params.chaos(),
            self.epsilon,
            self.seed
        )
    }
}

/// Builds `U_ε` column by column: column `m` is one noisy iteration of
/// basis state `m`. At zero imperfection strength the exact propagator is
/// used.
pub fn build_floquet_matrix(
    p: &MapParams,
    r: &ImperfectionRealization,
    cfg: &ImperfectionConfig,
    cap: usize,
) -> Result<FloquetMatrix> {
    let dim = p.levels();
    if dim > cap {
        return Err(Error::Resource(format!(
            "{dim} levels exceed the dense diagonalization cap of {cap}"
        )));
    }
    if r.n_qubits() != p.n_qubits() {
        return Err(invalid("realization and map sizes differ"));
    }
    let noiseless = cfg.epsilon() == 0.0 && cfg.coupling() == 0.0;
    let mut exact = ExactPropagator::new(p);
    let noisy = (!noiseless).then(|| NoisyMap::new(p, r, cfg));
    let mut matrix = DMatrix::<C64>::zeros(dim, dim);
    for m in 0..dim {
        let mut s = StateVector::basis(p.n_qubits(), m)?;
        match &noisy {
            Some(map) => map.step(&mut s),
            None => exact.step(&mut s),
        }
        matrix.column_mut(m).copy_from_slice(s.amplitudes());
    }
    Ok(FloquetMatrix {
        matrix,
        params: *p,
        epsilon: cfg.epsilon(),
        seed: r.seed,
    })
}

/// Sorted quasienergies in `(−π, π]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloquetSpectrum {
    phases: Vec<f64>,
    /// Largest `| |λ| − 1 |` before projection onto the unit circle.
    pub modulus_deviation: f64,
}

impl FloquetSpectrum {
    /// Wraps phases into `(−π, π]` and sorts them.
    pub fn from_phases(phases: impl IntoIterator<Item = f64>) -> Self {
        let mut phases: Vec<f64> = phases.into_iter().map(wrap_phase).collect();
        phases.sort_by(f64::total_cmp);
        Self {
            phases,
            modulus_deviation: 0.0,
        }
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

const SCHUR_TOLERANCE: f64 = 1e-14;
const SCHUR_MAX_ITERATIONS: usize = 0;

/// Eigenphases of a Floquet matrix from its complex Schur form.
pub fn eigenphases(u: &FloquetMatrix) -> Result<FloquetSpectrum> {
    let schur = Schur::try_new(u.matrix.clone(), SCHUR_TOLERANCE, SCHUR_MAX_ITERATIONS)
        .ok_or_else(|| {
            Error::Numeric(format!(
                "Schur iteration did not converge ({})",
                u.provenance()
            ))
        })?;
    let values = schur.eigenvalues().ok_or_else(|| {
        Error::Numeric(format!("Schur form is not triangular ({})", u.provenance()))
    })?;
    let modulus_deviation = values
        .iter()
        .map(|z| (z.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut spec = FloquetSpectrum::from_phases(values.iter().map(|z| z.arg()));
    spec.modulus_deviation = modulus_deviation;
    Ok(spec)
}

/// Nearest-neighbour gaps in units of the mean spacing `2π/N`, including
/// the gap that closes the circle.
pub fn spacings(spec: &FloquetSpectrum) -> Result<Vec<f64>> {
    let n = spec.len();
    if n < 2 {
        return Err(invalid("at least two levels are needed"));
    }
    let scale = n as f64 / (2.0 * PI);
    let ph = spec.phases();
    let mut s: Vec<f64> = ph.windows(2).map(|w| (w[1] - w[0]) * scale).collect();
    s.push((ph[0] + 2.0 * PI - ph[n - 1]) * scale);
    Ok(s)
}

fn non_negative(s: f64) -> Result<()> {
    if s >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("spacing must be non-negative, got {s}")))
    }
}

/// `P(s) = e^{−s}`.
pub fn poisson_pdf(s: f64) -> Result<f64> {
    non_negative(s)?;
    Ok((-s).exp())
}

/// `P(s) = (32 s²/π²) e^{−4s²/π}`.
pub fn wigner_dyson_pdf(s: f64) -> Result<f64> {
    non_negative(s)?;
    Ok(32.0 * s * s / (PI * PI) * (-4.0 * s * s / PI).exp())
}

fn poisson_cdf(s: f64) -> f64 {
    1.0 - (-s).exp()
}

fn wigner_dyson_cdf(s: f64) -> f64 {
    let a = 2.0 * s / PI.sqrt();
    erf(a) - 4.0 * s / PI * (-a * a).exp()
}

/// Normalized spacing histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingHistogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub samples: usize,
}

pub const HISTOGRAM_BINS: usize = 40;
pub const HISTOGRAM_MAX: f64 = 4.0;
pub const MIN_SPACINGS: usize = 1000;

/// Density histogram on `[0, max)`; samples beyond the range count towards
/// the normalization only.
pub fn histogram(samples: &[f64], bins: usize, max: f64) -> SpacingHistogram {
    let width = max / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let k = (s / width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        }
    }
    let norm = samples.len() as f64 * width;
    SpacingHistogram {
        edges: (0..=bins).map(|k| k as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 / norm).collect(),
        samples: samples.len(),
    }
}

/// Outcome of [`statistics_test`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingStatistics {
    pub histogram: SpacingHistogram,
    /// Kolmogorov–Smirnov distance to the Poisson law.
    pub d_poisson: f64,
    /// Kolmogorov–Smirnov distance to the Wigner-Dyson surmise.
    pub d_wigner_dyson: f64,
}

impl SpacingStatistics {
    pub fn prefers_poisson(&self) -> bool {
        self.d_poisson < self.d_wigner_dyson
    }
}

/// Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

pub fn ks_distance_poisson(samples: &[f64]) -> f64 {
    ks_distance(samples, poisson_cdf)
}

pub fn ks_distance_wigner_dyson(samples: &[f64]) -> f64 {
    ks_distance(samples, wigner_dyson_cdf)
}

/// Compares pooled spacings with the Poisson and Wigner-Dyson laws.
pub fn statistics_test(samples: &[f64]) -> Result<SpacingStatistics> {
    if samples.len() < MIN_SPACINGS {
        return Err(invalid(format!(
            "{} spacings; at least {MIN_SPACINGS} are needed",
            samples.len()
        )));
    }
    if let Some(&s) = samples.iter().find(|&&s| s.is_nan() || s < 0.0) {
        return Err(invalid(format!("invalid spacing {s}")));
    }
    Ok(SpacingStatistics {
        histogram: histogram(samples, HISTOGRAM_BINS, HISTOGRAM_MAX),
        d_poisson: ks_distance_poisson(samples),
        d_wigner_dyson: ks_distance_wigner_dyson(samples),
    })
}
