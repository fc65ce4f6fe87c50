//! Momentum-space diagnostics: distributions, moments, inverse
//! participation ratio, localization and tail fits, diffusion fits, closed
//! form estimates, and the coarse-grained measurement protocol.

use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
pub use crate::fit::FitResult;
use crate::fit::{line, origin_line};
use crate::sawtooth::{momentum_index, signed_momentum};
use crate::state::StateVector;

/// Probability distribution over signed momenta `−N/2 ≤ n < N/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentumDistribution {
    /// `probs[i]` is `W_n` for `n = i − N/2`.
    probs: Vec<f64>,
    /// Inclusive iteration range the distribution was averaged over.
    window: Option<(usize, usize)>,
}

impl MomentumDistribution {
    pub fn from_state(state: &StateVector) -> Self {
        let dim = state.dim();
        let amps = state.amplitudes();
        let probs = (0..dim)
            .map(|i| amps[momentum_index(i as i64 - dim as i64 / 2, dim)].norm_sqr())
            .collect();
        Self {
            probs,
            window: None,
        }
    }

    /// Builds a distribution from `W_n` listed from `n = −N/2` upwards.
    pub fn from_probabilities(probs: Vec<f64>) -> Result<Self> {
        let dim = probs.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(invalid(format!("{dim} levels is not a power of two >= 2")));
        }
        if probs.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(invalid("probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            probs,
            window: None,
        })
    }

    /// Arithmetic mean of distributions over the same number of levels.
    pub fn average(dists: &[MomentumDistribution]) -> Result<Self> {
        let first = dists.first().ok_or_else(|| invalid("nothing to average"))?;
        let dim = first.levels();
        if dists.iter().any(|d| d.levels() != dim) {
            return Err(invalid("distributions have different sizes"));
        }
        let mut probs = vec![0.0; dim];
        for d in dists {
            probs.iter_mut().zip(&d.probs).for_each(|(a, p)| *a += p);
        }
        let k = dists.len() as f64;
        probs.iter_mut().for_each(|p| *p /= k);
        Ok(Self {
            probs,
            window: first.window,
        })
    }

    pub fn with_window(mut self, window: (usize, usize)) -> Self {
        self.window = Some(window);
        self
    }

    pub fn window(&self) -> Option<(usize, usize)> {
        self.window
    }

    pub fn levels(&self) -> usize {
        self.probs.len()
    }

    /// `W_n`, with `n` taken modulo `N`.
    pub fn get(&self, n: i64) -> f64 {
        let dim = self.levels();
        let half = dim as i64 / 2;
        self.probs[(n + half).rem_euclid(dim as i64) as usize]
    }

    /// `(n, W_n)` pairs from `n = −N/2` upwards.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let half = self.levels() as i64 / 2;
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (i as i64 - half, p))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Cyclic shift that moves momentum `n0` to the origin.
    pub fn recentered(&self, n0: i64) -> Self {
        let dim = self.levels() as i64;
        let shift = n0.rem_euclid(dim) as usize;
        let mut probs = self.probs.clone();
        probs.rotate_left(shift);
        Self {
            probs,
            window: self.window,
        }
    }
}

/// `W_n = |ψ(n)|²` indexed by signed momentum.
pub fn distribution(state: &StateVector) -> MomentumDistribution {
    MomentumDistribution::from_state(state)
}

/// Running sum of distributions over an iteration window.
#[derive(Debug, Clone)]
pub struct WindowAverage {
    window: (usize, usize),
    sum: Vec<f64>,
    count: usize,
}

impl WindowAverage {
    pub fn new(window: (usize, usize), levels: usize) -> Self {
        Self {
            window,
            sum: vec![0.0; levels],
            count: 0,
        }
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    /// Adds `state` if `t` lies in the window.
    pub fn record(&mut self, t: usize, state: &StateVector) {
        if t >= self.window.0 && t <= self.window.1 {
            let d = MomentumDistribution::from_state(state);
            self.sum.iter_mut().zip(&d.probs).for_each(|(a, p)| *a += p);
            self.count += 1;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Option<MomentumDistribution> {
        (self.count > 0).then(|| MomentumDistribution {
            probs: self.sum.iter().map(|s| s / self.count as f64).collect(),
            window: Some(self.window),
        })
    }
}

/// `⟨(n − n0)²⟩ = Σ_n (n − n0)² W_n`.
pub fn second_moment(w: &MomentumDistribution, n0: i64) -> f64 {
    w.iter().map(|(n, p)| ((n - n0) as f64).powi(2) * p).sum()
}

/// Inverse participation ratio `ξ = 1 / Σ_n W_n²`.
pub fn ipr(w: &MomentumDistribution) -> f64 {
    1.0 / w.probs.iter().map(|p| p * p).sum::<f64>()
}

/// Crossover between exponential and power-law decay of a localized
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossover {
    /// `n_c = (3/2) ℓ ln ℓ`.
    pub distance: f64,
    /// `W_c = 1 / (ℓ⁴ ln ℓ)`.
    pub probability: f64,
}

pub fn crossover_estimate(ell: f64) -> Result<Crossover> {
    if !(ell > 1.0 && ell.is_finite()) {
        return Err(invalid(format!("crossover needs ℓ > 1, got {ell}")));
    }
    let ln = ell.ln();
    Ok(Crossover {
        distance: 1.5 * ell * ln,
        probability: 1.0 / (ell.powi(4) * ln),
    })
}

/// Fits `ln W_n = a − 2|n − n0|/ℓ` over `lo ≤ |n − n0| ≤ hi`.
pub fn fit_exponential_window(
    w: &MomentumDistribution,
    n0: i64,
    lo: f64,
    hi: f64,
) -> Result<FitResult> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = w
        .iter()
        .filter(|&(_, p)| p > 0.0)
        .map(|(n, p)| (((n - n0) as f64).abs(), p.ln()))
        .filter(|&(d, _)| d >= lo && d <= hi)
        .unzip();
    if xs.len() < 3 {
        return Err(Error::FitFailure(format!(
            "only {} populated levels in [{lo}, {hi}]",
            xs.len()
        )));
    }
    let l = line(&xs, &ys)?;
    if l.slope.is_nan() || l.slope >= 0.0 {
        return Err(Error::FitFailure(format!(
            "distribution does not decay (slope {})",
            l.slope
        )));
    }
    Ok(FitResult {
        value: -2.0 / l.slope,
        stderr: 2.0 * l.slope_se / (l.slope * l.slope),
        window: (lo, hi),
        residual: l.rms,
        points: xs.len(),
    })
}

/// Iterations of the self-consistent fit window.
const WINDOW_ITERATIONS: usize = 20;
/// Window of the first pass, before any estimate of ℓ is available.
const INITIAL_WINDOW: f64 = 8.0;
/// Fit window in units of ℓ.
const CORE_WIDTH: f64 = 2.0;

/// Upper end of the localization fit window for a given ℓ:
/// `min(2ℓ, n_c(ℓ), N/2)`.
pub fn localization_window(ell: f64, levels: usize) -> f64 {
    let half = (levels / 2) as f64;
    match crossover_estimate(ell) {
        Ok(c) => (CORE_WIDTH * ell).min(c.distance).min(half),
        Err(_) => INITIAL_WINDOW.min(half),
    }
}

/// Localization length from the exponential decay around `n0`.
///
/// The window `[0, localization_window(ℓ)]` is refined self-consistently
/// from a first pass over `|n − n0| ≤ 8` until it stops changing.
pub fn fit_localization_length(w: &MomentumDistribution, n0: i64) -> Result<FitResult> {
    let mut hi = INITIAL_WINDOW.min((w.levels() / 2) as f64);
    let mut fit = fit_exponential_window(w, n0, 0.0, hi)?;
    for _ in 0..WINDOW_ITERATIONS {
        let next = localization_window(fit.value, w.levels());
        if next.floor() == hi.floor() {
            break;
        }
        hi = next;
        fit = fit_exponential_window(w, n0, 0.0, hi)?;
    }
    Ok(fit)
}

/// Power-law tail fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    /// Decay exponent `α` in `W ∝ d^{−α}`.
    pub fit: FitResult,
    /// RMS residual of `ln W` against a straight line in `|n − n0|` over
    /// the same window.
    pub exponential_residual: f64,
    /// Set when an exponential describes the window at least as well as the
    /// power law.
    pub contaminated: bool,
}

/// Momentum distance on the `N`-level circle, `(N/π) sin(π |n|/N)`. Equals
/// `|n|` for `|n| ≪ N`; a kink in the kick potential makes the one-step
/// matrix elements decay as the inverse square of this distance.
pub fn chord_distance(n: i64, levels: usize) -> f64 {
    let dim = levels as f64;
    dim / PI * (PI * (n as f64).abs() / dim).sin()
}

/// Fits the power-law tail `W_n ∝ d^{−α}` over `2 n_c ≤ |n − n0| ≤ N/2`,
/// where `d` is the chord distance and `n_c` comes from the fitted
/// localization length.
pub fn fit_tail_exponent(w: &MomentumDistribution, n0: i64) -> Result<TailFit> {
    let ell = fit_localization_length(w, n0)?.value;
    let nc = crossover_estimate(ell)?.distance;
    fit_power_law_window(w, n0, 2.0 * nc, (w.levels() / 2) as f64)
}

/// Log-log fit of `W` against chord distance over `lo ≤ |n − n0| ≤ hi`.
pub fn fit_power_law_window(
    w: &MomentumDistribution,
    n0: i64,
    lo: f64,
    hi: f64,
) -> Result<TailFit> {
    let dim = w.levels();
    let pts: Vec<(f64, f64, f64)> = w
        .iter()
        .filter(|&(_, p)| p > 0.0)
        .filter(|&(n, _)| {
            let d = ((n - n0) as f64).abs();
            d >= lo && d <= hi && d > 0.0
        })
        .map(|(n, p)| {
            let d = ((n - n0) as f64).abs();
            (chord_distance(n - n0, dim).ln(), d, p.ln())
        })
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ds: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.2).collect();
    if xs.len() < 3 {
        return Err(Error::FitFailure(format!(
            "tail window [{lo:.1}, {hi:.1}] holds {} levels",
            xs.len()
        )));
    }
    let l = line(&xs, &ys)?;
    let e = line(&ds, &ys)?;
    Ok(TailFit {
        fit: FitResult {
            value: -l.slope,
            stderr: l.slope_se,
            window: (lo, hi),
            residual: l.rms,
            points: xs.len(),
        },
        exponential_residual: e.rms,
        contaminated: e.rms <= l.rms,
    })
}

/// Averaged second moment versus time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSeries {
    points: Vec<(usize, f64)>,
    pub realizations: usize,
    pub initial_conditions: usize,
}

impl DiffusionSeries {
    pub fn new(
        points: Vec<(usize, f64)>,
        realizations: usize,
        initial_conditions: usize,
    ) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("iterations must be strictly increasing"));
        }
        if points.iter().any(|&(_, m)| m.is_nan() || m < 0.0) {
            return Err(invalid("second moments must be non-negative"));
        }
        Ok(Self {
            points,
            realizations,
            initial_conditions,
        })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }
}

/// Last iteration used by [`fit_diffusion`] for kick strength `k`:
/// `min(10, ⌊t*/2⌋)` with `t* = (π²/3) k²`, and at least 3.
pub fn diffusion_fit_horizon(kick: f64) -> usize {
    let half_break = (theory::break_time(kick).unwrap_or(0.0) / 2.0).floor() as usize;
    half_break.clamp(3, 10)
}

/// Fits `⟨(Δn)²⟩ = D t` through the origin over `1 ≤ t ≤ until`.
pub fn fit_diffusion(series: &DiffusionSeries, until: usize) -> Result<FitResult> {
    if series.points.len() < 3 {
        return Err(invalid(format!(
            "diffusion fit needs at least 3 iterations, series has {}",
            series.points.len()
        )));
    }
    let (ts, m2): (Vec<f64>, Vec<f64>) = series
        .points
        .iter()
        .filter(|&&(t, _)| t >= 1 && t <= until)
        .map(|&(t, m)| (t as f64, m))
        .unzip();
    if ts.len() < 2 {
        return Err(invalid(format!("fewer than 2 points in t ∈ [1, {until}]")));
    }
    let l = origin_line(&ts, &m2)?;
    Ok(FitResult {
        value: l.slope,
        stderr: l.slope_se,
        window: (1.0, until as f64),
        residual: l.rms,
        points: ts.len(),
    })
}

/// Closed-form estimates.
pub mod theory {
    use std::f64::consts::PI;

    use crate::error::{invalid, Result};

    fn positive(name: &str, x: f64) -> Result<()> {
        if x > 0.0 && x.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("{name} must be positive, got {x}")))
        }
    }

    /// Break time `t* ≈ D_n ≈ (π²/3) k²`.
    pub fn break_time(kick: f64) -> Result<f64> {
        positive("kick", kick)?;
        Ok(PI * PI / 3.0 * kick * kick)
    }

    /// Localization length estimate `ℓ ≈ D_n ≈ (π²/3) k²`.
    pub fn ell_estimate(kick: f64) -> Result<f64> {
        break_time(kick)
    }

    /// Imperfection-induced diffusion `ε² n⁴ N²` (up to an O(1) factor).
    pub fn dbar_epsilon(epsilon: f64, n_qubits: usize, levels: usize) -> Result<f64> {
        positive("epsilon", epsilon)?;
        positive("n_qubits", n_qubits as f64)?;
        positive("levels", levels as f64)?;
        Ok(epsilon.powi(2) * (n_qubits as f64).powi(4) * (levels as f64).powi(2))
    }

    /// `ε_D = B √D0 / (n² N)`.
    pub fn epsilon_d(d0: f64, n_qubits: usize, levels: usize, b: f64) -> Result<f64> {
        positive("D0", d0)?;
        positive("B", b)?;
        positive("n_qubits", n_qubits as f64)?;
        positive("levels", levels as f64)?;
        Ok(b * d0.sqrt() / ((n_qubits as f64).powi(2) * levels as f64))
    }

    /// `ε_ξE = A / (n^{5/2} √ℓ)`.
    pub fn epsilon_xi_e(n_qubits: usize, ell: f64, a: f64) -> Result<f64> {
        positive("ell", ell)?;
        Ok(epsilon_xi_e_fixed_ell(n_qubits, a)? / ell.sqrt())
    }

    /// `ε_ξE = A n^{−5/2}` with `√ℓ` absorbed into `A`.
    pub fn epsilon_xi_e_fixed_ell(n_qubits: usize, a: f64) -> Result<f64> {
        positive("A", a)?;
        positive("n_qubits", n_qubits as f64)?;
        Ok(a * (n_qubits as f64).powf(-2.5))
    }
}

/// Projective measurement in the momentum basis; returns the signed
/// momentum of the outcome.
pub fn sample_measurement<R: Rng + ?Sized>(state: &StateVector, rng: &mut R) -> i64 {
    let u: f64 = rng.random::<f64>() * state.norm_sqr();
    let mut acc = 0.0;
    let amps = state.amplitudes();
    for (j, a) in amps.iter().enumerate() {
        acc += a.norm_sqr();
        if u < acc {
            return signed_momentum(j, amps.len());
        }
    }
    // Rounding can leave u just above the final partial sum.
    let last = amps.iter().rposition(|a| a.norm_sqr() > 0.0).unwrap_or(0);
    signed_momentum(last, amps.len())
}

/// Repeated-measurement sampler over a fixed outcome distribution.
#[derive(Debug, Clone)]
pub struct MeasurementSampler {
    cumulative: Vec<f64>,
    levels: usize,
}

impl MeasurementSampler {
    pub fn new(w: &MomentumDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = w
            .probabilities()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            cumulative,
            levels: w.levels(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let u: f64 = rng.random::<f64>() * total;
        let i = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.levels - 1);
        i as i64 - self.levels as i64 / 2
    }
}

/// Outcomes of repeated runs, to be histogrammed in bins of `bin_width`
/// levels (equivalent to reading only the most significant qubits).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementRecord {
    pub samples: Vec<i64>,
    pub bin_width: usize,
    pub runs: usize,
    pub levels: usize,
    /// Momentum the distances are measured from.
    pub origin: i64,
}

impl MeasurementRecord {
    pub fn new(samples: Vec<i64>, bin_width: usize, levels: usize, origin: i64) -> Result<Self> {
        if !bin_width.is_power_of_two() || bin_width > levels {
            return Err(invalid(format!(
                "bin width {bin_width} must be a power of two no larger than {levels}"
            )));
        }
        let half = levels as i64 / 2;
        if samples.iter().any(|s| !(-half..half).contains(s)) {
            return Err(invalid("sample outside the momentum range"));
        }
        Ok(Self {
            runs: samples.len(),
            samples,
            bin_width,
            levels,
            origin,
        })
    }

    /// Number of low-order qubits left unread at this bin width.
    pub fn ignored_qubits(&self) -> u32 {
        self.bin_width.trailing_zeros()
    }
}

/// Bin width for a coarse measurement: the power of two nearest to `ℓ/4`
/// (on a log scale), at least 1 and at most `N/2`.
pub fn coarse_bin_width(ell_guess: f64, levels: usize) -> usize {
    let target = (ell_guess / 4.0).max(1.0);
    let exp = target.log2().round().max(0.0) as u32;
    (1usize << exp).min(levels / 2).max(1)
}

/// Minimum number of runs for a coarse-grained estimate.
pub const MIN_RUNS: usize = 100;

/// Localization length from a coarse-grained histogram of measured
/// momenta.
///
/// Bin counts are fitted as `ln c = a − 2 d / ℓ` against the distance `d`
/// of bin centres from the origin by ordinary least squares, the same loss
/// as [`fit_localization_length`], so both estimate the same quantity as
/// runs grow. The window `d ≤ localization_window(ℓ)` starts from
/// `ℓ_guess` and is refined self-consistently. The reported standard
/// error propagates the Poisson variance `1/c` of each `ln c`, so it falls
/// as `1/√runs`.
pub fn estimate_ell_from_samples(record: &MeasurementRecord, ell_guess: f64) -> Result<FitResult> {
    if record.runs < MIN_RUNS {
        return Err(Error::FitFailure(format!(
            "{} runs; at least {MIN_RUNS} are needed",
            record.runs
        )));
    }
    let b = record.bin_width as i64;
    let half = record.levels as i64 / 2;
    let mut counts = vec![0usize; record.levels / record.bin_width];
    for &s in &record.samples {
        counts[((s + half) / b) as usize] += 1;
    }
    let bins: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .map(|(k, &c)| {
            let centre = (k as i64 * b - half) as f64 + (b as f64 - 1.0) / 2.0;
            ((centre - record.origin as f64).abs(), c as f64)
        })
        .collect();
    let fit_within = |limit: f64| -> Result<FitResult> {
        let inside: Vec<&(f64, f64)> = bins.iter().filter(|(d, _)| *d <= limit).collect();
        if inside.len() < 3 {
            return Err(Error::FitFailure(format!(
                "{} populated bins inside the fit window",
                inside.len()
            )));
        }
        let xs: Vec<f64> = inside.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = inside.iter().map(|p| p.1.ln()).collect();
        let l = line(&xs, &ys)?;
        if l.slope.is_nan() || l.slope >= 0.0 {
            return Err(Error::FitFailure(format!(
                "coarse histogram does not decay (slope {})",
                l.slope
            )));
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sxx: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let slope_var: f64 = inside
            .iter()
            .map(|(d, c)| ((d - mean) / sxx).powi(2) / c)
            .sum();
        Ok(FitResult {
            value: -2.0 / l.slope,
            stderr: 2.0 * slope_var.sqrt() / (l.slope * l.slope),
            window: (0.0, limit),
            residual: l.rms,
            points: xs.len(),
        })
    };
    let mut limit = localization_window(ell_guess, record.levels);
    let mut fit = fit_within(limit)?;
    for _ in 0..WINDOW_ITERATIONS {
        let next = localization_window(fit.value, record.levels);
        if next.floor() == limit.floor() {
            break;
        }
        limit = next;
        fit = fit_within(limit)?;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `W_n ∝ exp(−2|n − n0|/ℓ)`, normalized over `N` levels.
    fn exponential(levels: usize, ell: f64, n0: i64) -> MomentumDistribution {
        let half = levels as i64 / 2;
        let raw: Vec<f64> = (-half..half)
            .map(|n| (-2.0 * ((n - n0) as f64).abs() / ell).exp())
            .collect();
        normalized(raw)
    }

    fn normalized(raw: Vec<f64>) -> MomentumDistribution {
        let total: f64 = raw.iter().sum();
        MomentumDistribution::from_probabilities(raw.iter().map(|x| x / total).collect()).unwrap()
    }

    fn delta(levels: usize, n: i64) -> MomentumDistribution {
        let mut raw = vec![0.0; levels];
        raw[(n + levels as i64 / 2) as usize] = 1.0;
        normalized(raw)
    }

    #[test]
    fn distribution_of_states() {
        let s = StateVector::basis(5, momentum_index(-3, 32)).unwrap();
        let w = distribution(&s);
        assert_eq!(w.get(-3), 1.0);
        assert_eq!(w.iter().filter(|&(_, p)| p > 0.0).count(), 1);
        let u = distribution(&StateVector::uniform(5).unwrap());
        assert!(u.iter().all(|(_, p)| (p - 1.0 / 32.0).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = distribution(&StateVector::random(7, &mut rng).unwrap());
        assert!((r.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments() {
        assert_eq!(second_moment(&delta(64, 4), 4), 0.0);
        let mut raw = vec![0.0; 64];
        raw[32 + 2 + 5] = 0.5;
        raw[32 + 2 - 5] = 0.5;
        assert!((second_moment(&normalized(raw), 2) - 25.0).abs() < 1e-12);
        // Direct summation for ℓ = 12 on a wide lattice: ≈ ℓ²/2 for ℓ ≫ 1.
        let w = exponential(4096, 12.0, 0);
        let m2 = second_moment(&w, 0);
        let oracle: f64 = {
            let z: f64 = (-2048..2048)
                .map(|n: i64| (-2.0 * (n as f64).abs() / 12.0).exp())
                .sum();
            (-2048..2048)
                .map(|n: i64| (n as f64).powi(2) * (-2.0 * (n as f64).abs() / 12.0).exp() / z)
                .sum()
        };
        assert!((m2 - oracle).abs() < 1e-9);
        assert!((m2 - 72.0).abs() / 72.0 < 0.01, "m2 = {m2}");
    }

    #[test]
    fn ipr_cases() {
        assert_eq!(ipr(&delta(16, 0)), 1.0);
        let u = normalized(vec![1.0; 16]);
        assert!((ipr(&u) - 16.0).abs() < 1e-12);
        let mut raw = vec![0.0; 16];
        raw[3] = 1.0;
        raw[11] = 1.0;
        assert!((ipr(&normalized(raw)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn recentering_moves_n0_to_origin() {
        let w = exponential(64, 6.0, 5);
        let c = w.recentered(5);
        for n in -10..10 {
            assert_eq!(c.get(n), w.get(n + 5));
        }
    }

    #[test]
    fn localization_fit_exact_on_model() {
        let w = exponential(1024, 10.0, 0);
        let f = fit_localization_length(&w, 0).unwrap();
        assert!((f.value - 10.0).abs() < 1e-6, "{f:?}");
        let w = exponential(2048, 15.0, -3);
        let f = fit_localization_length(&w, -3).unwrap();
        assert!((f.value - 15.0).abs() / 15.0 < 1e-6);
    }

    #[test]
    fn localization_fit_rejects_growth() {
        let raw: Vec<f64> = (0..64)
            .map(|i| ((i as f64 - 32.0).abs() * 0.1).exp())
            .collect();
        let err = fit_localization_length(&normalized(raw), 0).unwrap_err();
        assert!(matches!(err, Error::FitFailure(_)));
    }

    #[test]
    fn crossover_values() {
        let c = crossover_estimate(std::f64::consts::E).unwrap();
        assert!((c.distance - 1.5 * std::f64::consts::E).abs() < 1e-12);
        assert!((crossover_estimate(12.0).unwrap().distance - 44.7).abs() < 0.05);
        let c15 = crossover_estimate(15.0).unwrap().distance;
        assert!((c15 - 60.9).abs() < 0.05 && c15 < 1024.0);
        assert!(crossover_estimate(1.0).is_err());
        assert!(crossover_estimate(0.5).is_err());
    }

    /// `W ∝ d^{−4}` in chord distance, with the exponential core replaced
    /// by a plateau so the localization fit stays finite.
    fn power_law(levels: usize) -> MomentumDistribution {
        let half = levels as i64 / 2;
        let raw = (-half..half)
            .map(|n| chord_distance(n, levels).max(1.0).powi(-4))
            .collect();
        normalized(raw)
    }

    #[test]
    fn tail_fit_exact_on_power_law() {
        let w = power_law(2048);
        let t = fit_power_law_window(&w, 0, 100.0, 1024.0).unwrap();
        assert!((t.fit.value - 4.0).abs() < 1e-6, "{t:?}");
        assert!(!t.contaminated);
    }

    #[test]
    fn tail_fit_flags_exponential_window() {
        let w = exponential(2048, 15.0, 0);
        let t = fit_power_law_window(&w, 0, 122.0, 1024.0).unwrap();
        assert!(t.contaminated, "residual {}", t.fit.residual);
        // Exponential core still dominating the window.
        let half = 1024i64;
        let mixed: Vec<f64> = (-half..half)
            .map(|n| {
                let d = (n as f64).abs();
                (-2.0 * d / 15.0).exp() / 15.0 + 1e-12 * chord_distance(n, 2048).max(1.0).powi(-4)
            })
            .collect();
        let t = fit_power_law_window(&normalized(mixed), 0, 60.0, 200.0).unwrap();
        assert!(t.contaminated);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<f64> = (-half..half)
            .map(|n| {
                chord_distance(n, 2048).max(1.0).powi(-4)
                    * (1.0 + 0.4 * (rng.random::<f64>() - 0.5))
            })
            .collect();
        let t = fit_power_law_window(&normalized(noisy), 0, 122.0, 1024.0).unwrap();
        assert!(!t.contaminated, "residual {}", t.fit.residual);
        assert!((t.fit.value - 4.0).abs() < 0.05);
        // Speckle-like noise: exponentially distributed intensities.
        let speckle: Vec<f64> = (-half..half)
            .map(|n| {
                let u: f64 = rng.random::<f64>();
                -chord_distance(n, 2048).max(1.0).powi(-4) * (1.0 - u).ln()
            })
            .collect();
        let t = fit_power_law_window(&normalized(speckle), 0, 122.0, 1024.0).unwrap();
        assert!(!t.contaminated, "residual {}", t.fit.residual);
    }

    #[test]
    fn tail_fit_needs_room() {
        // ℓ = 30 on 64 levels: 2 n_c far exceeds N/2.
        let w = exponential(64, 30.0, 0);
        assert!(matches!(
            fit_tail_exponent(&w, 0),
            Err(Error::FitFailure(_))
        ));
    }

    #[test]
    fn diffusion_fits() {
        let pts: Vec<(usize, f64)> = (0..=20).map(|t| (t, 13.0 * t as f64)).collect();
        let s = DiffusionSeries::new(pts, 1, 1).unwrap();
        let f = fit_diffusion(&s, 10).unwrap();
        assert!((f.value - 13.0).abs() < 1e-9);
        let short = DiffusionSeries::new(vec![(1, 1.0), (2, 2.0)], 1, 1).unwrap();
        assert!(fit_diffusion(&short, 10).is_err());
        assert!(DiffusionSeries::new(vec![(2, 1.0), (1, 2.0)], 1, 1).is_err());
        assert!(DiffusionSeries::new(vec![(1, -1.0)], 1, 1).is_err());
        assert_eq!(diffusion_fit_horizon(2.0), 6);
        assert_eq!(diffusion_fit_horizon(10.0), 10);
    }

    #[test]
    fn theory_values() {
        let bt = theory::break_time(3f64.sqrt()).unwrap();
        assert!((bt - PI * PI).abs() < 1e-12);
        assert!((bt - 10.0).abs() < 0.5);
        let l2 = theory::ell_estimate(2.0).unwrap();
        assert!((l2 - 13.16).abs() < 0.01);
        let ed = theory::epsilon_d(16.0, 6, 64, 3.6).unwrap();
        assert!((ed - 6.25e-3).abs() < 1e-15);
        assert!(
            (theory::dbar_epsilon(1e-3, 10, 1024).unwrap() - 1e-6 * 1e4 * 1024.0 * 1024.0).abs()
                < 1e-6
        );
        let a = theory::epsilon_xi_e_fixed_ell(8, 0.5).unwrap();
        assert!((a - 0.5 * 8f64.powf(-2.5)).abs() < 1e-15);
        assert!((theory::epsilon_xi_e(8, 4.0, 0.5).unwrap() - a / 2.0).abs() < 1e-15);
        assert!(theory::break_time(0.0).is_err());
        assert!(theory::epsilon_d(-1.0, 6, 64, 3.6).is_err());
    }

    #[test]
    fn measurement_of_basis_and_uniform_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = StateVector::basis(4, 5).unwrap();
        assert!((0..100).all(|_| sample_measurement(&s, &mut rng) == 5));
        let u = StateVector::uniform(2).unwrap();
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[momentum_index(sample_measurement(&u, &mut rng), 4)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn sampler_converges_to_distribution() {
        let p = crate::sawtooth::MapParams::new(6, 3f64.sqrt(), 2f64.sqrt(), 0).unwrap();
        let mut prop = crate::sawtooth::ExactPropagator::new(&p);
        let mut s = p.initial_state();
        for _ in 0..15 {
            prop.step(&mut s);
        }
        let w = distribution(&s);
        let sampler = MeasurementSampler::new(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0usize; 64];
        let draws = 100_000;
        for _ in 0..draws {
            counts[(sampler.sample(&mut rng) + 32) as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(w.probabilities())
            .map(|(&c, p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
        // Both samplers agree in distribution on a basis state.
        let b = StateVector::basis(6, 9).unwrap();
        let sb = MeasurementSampler::new(&distribution(&b));
        assert_eq!(sb.sample(&mut rng), 9);
    }

    fn synthetic_record(ell: f64, runs: usize, seed: u64) -> MeasurementRecord {
        let w = exponential(512, ell, 0);
        let sampler = MeasurementSampler::new(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..runs).map(|_| sampler.sample(&mut rng)).collect();
        MeasurementRecord::new(samples, coarse_bin_width(ell, 512), 512, 0).unwrap()
    }

    #[test]
    fn coarse_estimate_recovers_ell() {
        let rec = synthetic_record(12.0, 4000, 1);
        assert_eq!(rec.bin_width, 4);
        let f = estimate_ell_from_samples(&rec, 12.0).unwrap();
        assert!((f.value - 12.0).abs() < 3.0 * f.stderr, "{f:?}");
        let big = synthetic_record(12.0, 100_000, 2);
        let f = estimate_ell_from_samples(&big, 12.0).unwrap();
        assert!((f.value - 12.0).abs() / 12.0 < 0.05, "{f:?}");
    }

    #[test]
    fn coarse_error_scales_as_inverse_sqrt_runs() {
        let a = estimate_ell_from_samples(&synthetic_record(12.0, 1000, 5), 12.0).unwrap();
        let b = estimate_ell_from_samples(&synthetic_record(12.0, 4000, 6), 12.0).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((ratio - 2.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn coarse_estimate_degenerate_inputs() {
        let rec = MeasurementRecord::new(vec![0], 4, 512, 0).unwrap();
        assert!(matches!(
            estimate_ell_from_samples(&rec, 12.0),
            Err(Error::FitFailure(_))
        ));
        let rec = MeasurementRecord::new(vec![0; 500], 4, 512, 0).unwrap();
        assert!(matches!(
            estimate_ell_from_samples(&rec, 12.0),
            Err(Error::FitFailure(_))
        ));
        assert!(MeasurementRecord::new(vec![0], 3, 512, 0).is_err());
        assert!(MeasurementRecord::new(vec![256], 4, 512, 0).is_err());
    }

    #[test]
    fn bin_width_choice() {
        assert_eq!(coarse_bin_width(12.0, 64), 4);
        assert_eq!(coarse_bin_width(15.0, 2048), 4);
        assert_eq!(coarse_bin_width(40.0, 2048), 8);
        assert_eq!(coarse_bin_width(1.0, 64), 1);
        assert_eq!(coarse_bin_width(1e6, 64), 32);
    }

    proptest! {
        #[test]
        fn ipr_bounds(raw in prop::collection::vec(0.0f64..1.0, 64)) {
            prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let w = normalized(raw);
            let x = ipr(&w);
            prop_assert!((1.0 - 1e-12..=64.0 + 1e-9).contains(&x));
        }

        #[test]
        fn localization_fit_exact_for_any_length(ell in 2.0f64..128.0) {
            let w = exponential(1024, ell, 0);
            let f = fit_localization_length(&w, 0).unwrap();
            prop_assert!((f.value - ell).abs() / ell < 1e-6, "{} vs {}", f.value, ell);
        }
    }
}
