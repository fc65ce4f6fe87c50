//! Experiment pipelines over averaged ensembles.
//!
//! Every pipeline is a pure function of an [`ExperimentConfig`]. Runs are
//! indexed by `(realization, initial momentum)`, executed in parallel, and
//! reduced in index order, so results do not depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::line;
use crate::imperfections::{
    sample_realization, CouplingMode, ImperfectionConfig, ImperfectionRealization, NoisyMap,
};
use crate::observables::{
    coarse_bin_width, diffusion_fit_horizon, distribution, estimate_ell_from_samples,
    fit_diffusion, fit_localization_length, second_moment, theory, DiffusionSeries, FitResult,
    MeasurementRecord, MeasurementSampler, MomentumDistribution, WindowAverage,
};
use crate::sawtooth::{classical_diffusion, ClassicalDiffusion, ExactPropagator, MapParams};
use crate::spectral::{
    build_floquet_matrix, eigenphases, histogram, ks_distance_poisson, ks_distance_wigner_dyson,
    spacings, statistics_test, SpacingStatistics, HISTOGRAM_BINS, HISTOGRAM_MAX, MIN_SPACINGS,
};
use crate::state::{StateVector, MAX_QUBITS};

/// Parameters shared by all commands. Keys mirror the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_qubits: Vec<usize>,
    /// Kick strength `k`.
    pub kick: f64,
    /// Chaos parameter `K = kT`.
    pub chaos: f64,
    /// Centre of the initial-momentum range.
    pub initial_momentum: i64,
    /// Number of initial momenta, `n0 ∈ [c − m/2, c − m/2 + m)`.
    pub initial_conditions: usize,
    /// Imperfection strengths; empty selects the command default.
    pub epsilons: Vec<f64>,
    pub couplings: Vec<CouplingMode>,
    pub iterations: usize,
    pub realizations: usize,
    /// Inclusive iteration windows for averaged distributions.
    pub windows: Vec<[usize; 2]>,
    /// Run counts for the measurement protocol.
    pub runs: Vec<usize>,
    pub dense_cap: usize,
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_qubits: vec![6],
            kick: 3f64.sqrt(),
            chaos: 2f64.sqrt(),
            initial_momentum: 0,
            initial_conditions: 1,
            epsilons: Vec::new(),
            couplings: vec![CouplingMode::Zero],
            iterations: 300,
            realizations: 1,
            windows: Vec::new(),
            runs: vec![250, 1000, 4000],
            dense_cap: crate::spectral::DEFAULT_DENSE_CAP,
            trajectories: 10_000,
            seed: 0,
        }
    }
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Names of the shipped presets.
pub const PRESETS: [&str; 8] = [
    "fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8",
];

/// Strengths per decade in the default sweep grid.
pub const GRID_PER_DECADE: usize = 8;
pub const GRID_RANGE: (f64, f64) = (1e-5, 1e-1);

/// `per_decade` logarithmically spaced points per decade from `lo` to `hi`
/// inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round() as usize;
    (0..=n)
        .map(|i| lo * 10f64.powf(i as f64 / per_decade as f64))
        .collect()
}

pub fn default_grid() -> Vec<f64> {
    log_grid(GRID_RANGE.0, GRID_RANGE.1, GRID_PER_DECADE)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            config_error(&field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "fig1" => include_str!("../presets/fig1.toml"),
            "fig2" => include_str!("../presets/fig2.toml"),
            "fig3" => include_str!("../presets/fig3.toml"),
            "fig4" => include_str!("../presets/fig4.toml"),
            "fig5" => include_str!("../presets/fig5.toml"),
            "fig6" => include_str!("../presets/fig6.toml"),
            "fig7" => include_str!("../presets/fig7.toml"),
            "fig8" => include_str!("../presets/fig8.toml"),
            _ => {
                return Err(config_error(
                    "preset",
                    format!(
                        "unknown preset `{name}`; expected one of {}",
                        PRESETS.join(", ")
                    ),
                ))
            }
        };
        Self::from_toml(text)
    }

    /// Replaces one field; `value` is a TOML value (`6`, `[6, 8]`, `"zero"`).
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        if !table.contains_key(key) {
            return Err(config_error(key, "unknown field"));
        }
        let parsed: toml::Value = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| config_error(key, e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits.is_empty() {
            return Err(config_error(
                "n_qubits",
                "at least one register size is needed",
            ));
        }
        if let Some(n) = self.n_qubits.iter().find(|&&n| n == 0 || n > MAX_QUBITS) {
            return Err(config_error(
                "n_qubits",
                format!("{n} is outside 1..={MAX_QUBITS}"),
            ));
        }
        if !(self.kick >= 0.0 && self.kick.is_finite()) {
            return Err(config_error(
                "kick",
                format!("must be finite and >= 0, got {}", self.kick),
            ));
        }
        if !(self.chaos >= 0.0 && self.chaos.is_finite()) {
            return Err(config_error(
                "chaos",
                format!("must be finite and >= 0, got {}", self.chaos),
            ));
        }
        if self.initial_conditions == 0 {
            return Err(config_error("initial_conditions", "must be at least 1"));
        }
        if let Some(e) = self
            .epsilons
            .iter()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return Err(config_error(
                "epsilons",
                format!("{e} is not a finite value >= 0"),
            ));
        }
        if self.epsilons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_error(
                "epsilons",
                "values must be strictly increasing",
            ));
        }
        if self.couplings.is_empty() {
            return Err(config_error(
                "couplings",
                "at least one coupling mode is needed",
            ));
        }
        if self.realizations == 0 {
            return Err(config_error("realizations", "must be at least 1"));
        }
        if let Some(w) = self.windows.iter().find(|w| w[0] > w[1]) {
            return Err(config_error(
                "windows",
                format!("window [{}, {}] is reversed", w[0], w[1]),
            ));
        }
        if let Some(w) = self.windows.iter().find(|w| w[1] > self.iterations) {
            return Err(config_error(
                "windows",
                format!(
                    "window ends at {} beyond iterations = {}",
                    w[1], self.iterations
                ),
            ));
        }
        if self.runs.is_empty() || self.runs.contains(&0) {
            return Err(config_error("runs", "run counts must be positive"));
        }
        if !self.dense_cap.is_power_of_two() || self.dense_cap < 2 {
            return Err(config_error("dense_cap", "must be a power of two >= 2"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(config_error("seed", "must fit in 63 bits"));
        }
        if self.trajectories == 0 {
            return Err(config_error("trajectories", "must be at least 1"));
        }
        Ok(())
    }

    /// `n0 ∈ [c − m/2, c − m/2 + m)`.
    pub fn initial_momenta(&self) -> Vec<i64> {
        let m = self.initial_conditions as i64;
        let start = self.initial_momentum - m / 2;
        (start..start + m).collect()
    }

    fn params(&self, n_qubits: usize) -> Result<MapParams> {
        if self.kick > 0.0 {
            MapParams::new(n_qubits, self.kick, self.chaos, self.initial_momentum)
        } else {
            MapParams::with_rotation(n_qubits, 0.0, 0.0, self.initial_momentum)
        }
    }
}

/// Seed of realization `index` for a register of `n_qubits`: word
/// `index` of the ChaCha stream `n_qubits` keyed by the master seed.
pub fn realization_seed(master: u64, n_qubits: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(n_qubits as u64);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// RNG for auxiliary draws (measurement, classical ensembles), on streams
/// disjoint from the realization streams.
pub fn auxiliary_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((1 << 32) + stream);
    rng
}

enum Stepper {
    Exact(ExactPropagator),
    Noisy(NoisyMap),
}

impl Stepper {
    fn new(p: &MapParams, r: &ImperfectionRealization, cfg: &ImperfectionConfig) -> Self {
        if cfg.epsilon() == 0.0 && cfg.coupling() == 0.0 {
            Stepper::Exact(ExactPropagator::new(p))
        } else {
            Stepper::Noisy(NoisyMap::new(p, r, cfg))
        }
    }

    fn step(&mut self, s: &mut StateVector) {
        match self {
            Stepper::Exact(e) => e.step(s),
            Stepper::Noisy(m) => m.step(s),
        }
    }
}

/// Accumulated observables of one or more runs.
#[derive(Debug, Clone)]
struct RunSums {
    /// `Σ (n − n0)²` per iteration `0..=t`.
    m2: Vec<f64>,
    /// `Σ Σ_n W_n²` per iteration.
    p2: Vec<f64>,
    /// `Σ 1/Σ_n W_n²` per iteration.
    xi: Vec<f64>,
    /// Distributions relative to `n0`, summed over each window's iterations.
    windows: Vec<Vec<f64>>,
    runs: usize,
}

impl RunSums {
    fn add(mut self, other: &RunSums) -> RunSums {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.m2, &other.m2);
        add(&mut self.p2, &other.p2);
        add(&mut self.xi, &other.xi);
        for (a, b) in self.windows.iter_mut().zip(&other.windows) {
            add(a, b);
        }
        self.runs += other.runs;
        self
    }
}

fn single_run(
    p: &MapParams,
    r: &ImperfectionRealization,
    cfg: &ImperfectionConfig,
    iterations: usize,
    windows: &[[usize; 2]],
) -> RunSums {
    let n0 = p.initial_momentum();
    let mut stepper = Stepper::new(p, r, cfg);
    let mut s = p.initial_state();
    let mut out = RunSums {
        m2: vec![0.0; iterations + 1],
        p2: vec![0.0; iterations + 1],
        xi: vec![0.0; iterations + 1],
        windows: vec![vec![0.0; p.levels()]; windows.len()],
        runs: 1,
    };
    for t in 0..=iterations {
        if t > 0 {
            stepper.step(&mut s);
        }
        let w = distribution(&s);
        let p2: f64 = w.probabilities().iter().map(|x| x * x).sum();
        out.m2[t] = second_moment(&w, n0);
        out.p2[t] = p2;
        out.xi[t] = 1.0 / p2;
        for (acc, win) in out.windows.iter_mut().zip(windows) {
            if t >= win[0] && t <= win[1] {
                let rel = w.recentered(n0);
                acc.iter_mut()
                    .zip(rel.probabilities())
                    .for_each(|(a, x)| *a += x);
            }
        }
    }
    out
}

/// Averaged time series point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvolvePoint {
    pub t: usize,
    /// `⟨(n − n0)²⟩`.
    pub m2: f64,
    /// Ensemble inverse participation ratio `1/⟨Σ W_n²⟩`.
    pub xi: f64,
    /// Mean of the per-run ratios `⟨1/Σ W_n²⟩`.
    pub xi_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvolveResult {
    pub n_qubits: usize,
    pub epsilon: f64,
    pub coupling: CouplingMode,
    pub runs: usize,
    pub series: Vec<EvolvePoint>,
    /// Averaged distributions, indexed by `n − n0`.
    pub windows: Vec<MomentumDistribution>,
}

impl EvolveResult {
    /// `ξ_∞`: `1/⟨Σ W²⟩` averaged over the final 20% of the iterations, and
    /// the corresponding mean of per-run ratios.
    pub fn saturation(&self) -> (f64, f64) {
        let t_max = self.series.last().map_or(0, |p| p.t);
        let from = t_max - t_max / 5;
        let tail: Vec<&EvolvePoint> = self.series.iter().filter(|p| p.t >= from).collect();
        let k = tail.len() as f64;
        let p2 = tail.iter().map(|p| 1.0 / p.xi).sum::<f64>() / k;
        let mean = tail.iter().map(|p| p.xi_mean).sum::<f64>() / k;
        (1.0 / p2, mean)
    }

    pub fn diffusion_series(&self) -> Result<DiffusionSeries> {
        DiffusionSeries::new(
            self.series.iter().map(|p| (p.t, p.m2)).collect(),
            self.runs,
            1,
        )
    }
}

/// Averaged evolution of one register size, strength and coupling mode.
///
/// At zero strength with no couplings every realization is the same map,
/// so a single realization is run.
pub fn evolve(
    cfg: &ExperimentConfig,
    n_qubits: usize,
    epsilon: f64,
    coupling: CouplingMode,
) -> Result<EvolveResult> {
    cfg.validate()?;
    evolve_with(
        cfg,
        n_qubits,
        epsilon,
        coupling,
        cfg.iterations,
        cfg.realizations,
    )
}

fn evolve_with(
    cfg: &ExperimentConfig,
    n_qubits: usize,
    epsilon: f64,
    coupling: CouplingMode,
    iterations: usize,
    realizations: usize,
) -> Result<EvolveResult> {
    let base = cfg.params(n_qubits)?;
    let icfg = ImperfectionConfig::from_epsilon(epsilon, coupling)?;
    let realizations = if epsilon == 0.0 { 1 } else { realizations };
    let tasks: Vec<(usize, i64)> = (0..realizations)
        .flat_map(|r| cfg.initial_momenta().into_iter().map(move |n0| (r, n0)))
        .collect();
    let reals: Vec<ImperfectionRealization> = (0..realizations)
        .map(|r| sample_realization(n_qubits, &icfg, realization_seed(cfg.seed, n_qubits, r)))
        .collect();
    let windows = cfg.windows.clone();
    let runs: Vec<RunSums> = tasks
        .par_iter()
        .map(|&(r, n0)| {
            let p = base.with_initial_momentum(n0)?;
            Ok(single_run(&p, &reals[r], &icfg, iterations, &windows))
        })
        .collect::<Result<_>>()?;
    let mut iter = runs.into_iter();
    let first = iter.next().expect("at least one run");
    let total = iter.fold(first, |acc, r| acc.add(&r));
    let k = total.runs as f64;
    let series = (0..=iterations)
        .map(|t| EvolvePoint {
            t,
            m2: total.m2[t] / k,
            xi: k / total.p2[t],
            xi_mean: total.xi[t] / k,
        })
        .collect();
    let windows = total
        .windows
        .iter()
        .zip(&cfg.windows)
        .map(|(sum, w)| {
            let count = (w[1] - w[0] + 1) as f64 * k;
            MomentumDistribution::from_probabilities(sum.iter().map(|x| x / count).collect())
                .map(|d| d.with_window((w[0], w[1])))
        })
        .collect::<Result<_>>()?;
    Ok(EvolveResult {
        n_qubits,
        epsilon,
        coupling,
        runs: total.runs,
        series,
        windows,
    })
}

/// Evolution for every configured size, strength and coupling mode.
pub fn run_evolve(cfg: &ExperimentConfig) -> Result<Vec<EvolveResult>> {
    cfg.validate()?;
    let eps = if cfg.epsilons.is_empty() {
        vec![0.0]
    } else {
        cfg.epsilons.clone()
    };
    let mut out = Vec::new();
    for &n in &cfg.n_qubits {
        for &mode in &cfg.couplings {
            for &e in &eps {
                out.push(evolve(cfg, n, e, mode)?);
            }
        }
    }
    Ok(out)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n_qubits: usize,
    pub epsilon: f64,
    pub coupling: CouplingMode,
    pub diffusion: FitResult,
    /// `ξ_∞` from `1/⟨Σ W²⟩`.
    pub xi_inf: f64,
    /// `ξ_∞` from `⟨1/Σ W²⟩`.
    pub xi_inf_mean: f64,
    /// Whether the run length exceeded `ξ_∞`.
    pub saturated: bool,
}

/// Strength at which an observable first reaches a target value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub target: f64,
    /// Log-log interpolated strength; `None` when the grid does not bracket
    /// the target.
    pub value: Option<f64>,
    pub bracket: Option<(f64, f64)>,
}

/// First upward crossing of `target` along `(ε, f)` sorted by `ε`,
/// interpolated linearly in `(ln ε, ln f)`.
pub fn interpolate_threshold(points: &[(f64, f64)], target: f64) -> Threshold {
    let found = points.windows(2).find_map(|w| {
        let ((e0, f0), (e1, f1)) = (w[0], w[1]);
        (f0 < target && f1 >= target && e0 > 0.0 && f0 > 0.0).then(|| {
            let x = (target.ln() - f0.ln()) / (f1.ln() - f0.ln());
            ((e0.ln() + x * (e1.ln() - e0.ln())).exp(), (e0, e1))
        })
    });
    Threshold {
        target,
        value: found.map(|f| f.0),
        bracket: found.map(|f| f.1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub n_qubits: usize,
    pub coupling: CouplingMode,
    pub d0: f64,
    pub xi0: f64,
    /// `D(ε_D) = 2 D(0)`.
    pub epsilon_d: Threshold,
    /// `ξ_∞(ε_ξ) = 2 ξ_∞(0)`.
    pub epsilon_xi: Threshold,
    /// `ξ_∞(ε_ξE) = N/4`.
    pub epsilon_xi_e: Threshold,
    /// Set when both are present and `ε_ξ > ε_ξE`.
    pub ordering_violated: bool,
}

/// Power-law fit `ε = C n^p` across register sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub prefactor: f64,
    pub points: usize,
}

fn power_fit(points: &[(f64, f64)]) -> Option<PowerFit> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let l = line(&xs, &ys).ok()?;
    Some(PowerFit {
        exponent: l.slope,
        exponent_stderr: l.slope_se,
        prefactor: l.intercept.exp(),
        points: points.len(),
    })
}

fn geometric_mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp())
}

/// Scaling of the thresholds with register size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    /// Free fit `ε_ξE = C n^p`.
    pub xi_e_power: Option<PowerFit>,
    /// `A` in `ε_ξE = A n^{−5/2}`.
    pub a: Option<f64>,
    /// `A'` in `ε_ξE = A' n^{−5/2} ℓ^{−1/2}` with `ℓ = (π²/3) k²`.
    pub a_with_ell: Option<f64>,
    /// Free fit `ε_ξ = C n^p`.
    pub xi_power: Option<PowerFit>,
    /// `B` in `ε_D = B √D(0) 2^{−n} n^{−2}`.
    pub b: Option<f64>,
    /// Per-size values of `B`.
    pub b_values: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub thresholds: Vec<ThresholdResult>,
    /// Scaling across sizes for each coupling mode.
    pub scaling: Vec<(CouplingMode, ScalingSummary)>,
}

fn sweep_point(
    cfg: &ExperimentConfig,
    n_qubits: usize,
    epsilon: f64,
    coupling: CouplingMode,
) -> Result<SweepPoint> {
    let horizon = diffusion_fit_horizon(cfg.kick);
    if cfg.iterations < horizon {
        return Err(config_error(
            "iterations",
            format!("the diffusion fit needs at least {horizon} iterations"),
        ));
    }
    let res = evolve_with(
        cfg,
        n_qubits,
        epsilon,
        coupling,
        cfg.iterations,
        cfg.realizations,
    )?;
    let diffusion = fit_diffusion(&res.diffusion_series()?, horizon)?;
    let (xi_inf, xi_inf_mean) = res.saturation();
    Ok(SweepPoint {
        n_qubits,
        epsilon,
        coupling,
        diffusion,
        xi_inf,
        xi_inf_mean,
        saturated: cfg.iterations as f64 > xi_inf,
    })
}

/// `D(ε)` and `ξ_∞(ε)` over the grid (plus the `ε = 0` reference) for
/// every size and coupling mode, with thresholds and scaling fits.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let grid: Vec<f64> = if cfg.epsilons.iter().any(|&e| e > 0.0) {
        cfg.epsilons.iter().copied().filter(|&e| e > 0.0).collect()
    } else {
        default_grid()
    };
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    for &mode in &cfg.couplings {
        for &n in &cfg.n_qubits {
            let reference = sweep_point(cfg, n, 0.0, mode)?;
            let curve: Vec<SweepPoint> = grid
                .iter()
                .map(|&e| sweep_point(cfg, n, e, mode))
                .collect::<Result<_>>()?;
            let d: Vec<(f64, f64)> = curve
                .iter()
                .map(|p| (p.epsilon, p.diffusion.value))
                .collect();
            let xi: Vec<(f64, f64)> = curve.iter().map(|p| (p.epsilon, p.xi_inf)).collect();
            let d0 = reference.diffusion.value;
            let xi0 = reference.xi_inf;
            let epsilon_d = interpolate_threshold(&d, 2.0 * d0);
            let epsilon_xi = interpolate_threshold(&xi, 2.0 * xi0);
            let epsilon_xi_e = interpolate_threshold(&xi, (1usize << n) as f64 / 4.0);
            let ordering_violated = matches!(
                (epsilon_xi.value, epsilon_xi_e.value),
                (Some(a), Some(b)) if a > b
            );
            thresholds.push(ThresholdResult {
                n_qubits: n,
                coupling: mode,
                d0,
                xi0,
                epsilon_d,
                epsilon_xi,
                epsilon_xi_e,
                ordering_violated,
            });
            points.push(reference);
            points.extend(curve);
        }
    }
    let scaling = cfg
        .couplings
        .iter()
        .map(|&mode| {
            let rows: Vec<&ThresholdResult> =
                thresholds.iter().filter(|t| t.coupling == mode).collect();
            (mode, scaling_summary(&rows, cfg.kick))
        })
        .collect();
    Ok(SweepResult {
        points,
        thresholds,
        scaling,
    })
}

pub fn scaling_summary(rows: &[&ThresholdResult], kick: f64) -> ScalingSummary {
    let xe: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|t| t.epsilon_xi_e.value.map(|v| (t.n_qubits as f64, v)))
        .collect();
    let xq: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|t| t.epsilon_xi.value.map(|v| (t.n_qubits as f64, v)))
        .collect();
    let a = geometric_mean(&xe.iter().map(|(n, e)| e * n.powf(2.5)).collect::<Vec<_>>());
    let ell = theory::ell_estimate(kick).ok();
    let b_values: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|t| {
            let n = t.n_qubits;
            t.epsilon_d
                .value
                .filter(|_| t.d0 > 0.0)
                .map(|e| (n, e * (n * n) as f64 * (1usize << n) as f64 / t.d0.sqrt()))
        })
        .collect();
    ScalingSummary {
        xi_e_power: power_fit(&xe),
        a,
        a_with_ell: a.zip(ell).map(|(a, l)| a * l.sqrt()),
        xi_power: power_fit(&xq),
        b: geometric_mean(&b_values.iter().map(|b| b.1).collect::<Vec<_>>()),
        b_values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralResult {
    pub n_qubits: usize,
    pub epsilon: f64,
    pub coupling: CouplingMode,
    pub realizations: usize,
    pub statistics: SpacingStatistics,
    /// Fewer pooled spacings than a reliable comparison needs.
    pub low_statistics: bool,
    /// Largest deviation of an eigenvalue modulus from 1.
    pub modulus_deviation: f64,
}

/// Pooled level-spacing statistics of `U_ε` over realizations.
pub fn spectral(
    cfg: &ExperimentConfig,
    n_qubits: usize,
    epsilon: f64,
    coupling: CouplingMode,
) -> Result<SpectralResult> {
    let levels = 1usize << n_qubits;
    if levels > cfg.dense_cap {
        return Err(Error::Resource(format!(
            "{levels} levels exceed dense_cap = {}",
            cfg.dense_cap
        )));
    }
    let p = cfg.params(n_qubits)?;
    let icfg = ImperfectionConfig::from_epsilon(epsilon, coupling)?;
    let spectra: Vec<(Vec<f64>, f64)> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| {
            let real = sample_realization(n_qubits, &icfg, realization_seed(cfg.seed, n_qubits, r));
            let u = build_floquet_matrix(&p, &real, &icfg, cfg.dense_cap)?;
            let spec = eigenphases(&u)?;
            Ok((spacings(&spec)?, spec.modulus_deviation))
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<f64> = spectra.iter().flat_map(|s| s.0.iter().copied()).collect();
    let modulus_deviation = spectra.iter().map(|s| s.1).fold(0.0, f64::max);
    let low_statistics = pooled.len() < MIN_SPACINGS;
    let statistics = if low_statistics {
        SpacingStatistics {
            histogram: histogram(&pooled, HISTOGRAM_BINS, HISTOGRAM_MAX),
            d_poisson: ks_distance_poisson(&pooled),
            d_wigner_dyson: ks_distance_wigner_dyson(&pooled),
        }
    } else {
        statistics_test(&pooled)?
    };
    Ok(SpectralResult {
        n_qubits,
        epsilon,
        coupling,
        realizations: cfg.realizations,
        statistics,
        low_statistics,
        modulus_deviation,
    })
}

pub fn run_spectral(cfg: &ExperimentConfig) -> Result<Vec<SpectralResult>> {
    cfg.validate()?;
    let eps = if cfg.epsilons.is_empty() {
        vec![0.0]
    } else {
        cfg.epsilons.clone()
    };
    let mut out = Vec::new();
    for &n in &cfg.n_qubits {
        for &mode in &cfg.couplings {
            for &e in &eps {
                out.push(spectral(cfg, n, e, mode)?);
            }
        }
    }
    Ok(out)
}

/// Estimate from one run count of the measurement protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurePoint {
    pub runs: usize,
    pub estimate: Option<FitResult>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureResult {
    pub n_qubits: usize,
    pub epsilon: f64,
    pub iterations: usize,
    /// Fit of the exact distribution at the measurement time.
    pub direct: FitResult,
    pub ell_guess: f64,
    pub bin_width: usize,
    pub points: Vec<MeasurePoint>,
}

/// Coarse-grained measurement protocol.
///
/// The hardware imperfections are static, so every run of a given device
/// evolves the same state. Each run stops at a time drawn uniformly from
/// the last configured window (or at `iterations` when there is none) and
/// contributes one projective measurement, so outcomes follow the
/// window-averaged distribution, which is also the direct-fit reference.
/// Bins follow the estimate `ℓ ≈ (π²/3) k²`.
pub fn run_measure(cfg: &ExperimentConfig) -> Result<MeasureResult> {
    cfg.validate()?;
    let n_qubits = cfg.n_qubits[0];
    let epsilon = cfg.epsilons.first().copied().unwrap_or(0.0);
    let coupling = cfg.couplings[0];
    let p = cfg.params(n_qubits)?;
    let icfg = ImperfectionConfig::from_epsilon(epsilon, coupling)?;
    let real = sample_realization(n_qubits, &icfg, realization_seed(cfg.seed, n_qubits, 0));
    let mut stepper = Stepper::new(&p, &real, &icfg);
    let mut s = p.initial_state();
    let mut avg = cfg
        .windows
        .last()
        .map(|w| WindowAverage::new((w[0], w[1]), p.levels()));
    for t in 0..=cfg.iterations {
        if t > 0 {
            stepper.step(&mut s);
        }
        if let Some(a) = avg.as_mut() {
            a.record(t, &s);
        }
    }
    let w = match avg.and_then(|a| a.finish()) {
        Some(w) => w,
        None => distribution(&s),
    };
    let n0 = p.initial_momentum();
    let direct = fit_localization_length(&w, n0)?;
    let ell_guess = theory::ell_estimate(cfg.kick)?;
    let bin_width = coarse_bin_width(ell_guess, p.levels());
    let sampler = MeasurementSampler::new(&w);
    let points = cfg
        .runs
        .iter()
        .enumerate()
        .map(|(i, &runs)| {
            let mut rng = auxiliary_rng(cfg.seed, i as u64);
            let samples = (0..runs).map(|_| sampler.sample(&mut rng)).collect();
            let outcome = MeasurementRecord::new(samples, bin_width, p.levels(), n0)
                .and_then(|rec| estimate_ell_from_samples(&rec, ell_guess));
            match outcome {
                Ok(f) => MeasurePoint {
                    runs,
                    estimate: Some(f),
                    failure: None,
                },
                Err(e) => MeasurePoint {
                    runs,
                    estimate: None,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(MeasureResult {
        n_qubits,
        epsilon,
        iterations: cfg.iterations,
        direct,
        ell_guess,
        bin_width,
        points,
    })
}

/// Classical ensemble spreading with the configured `k`, `K`.
pub fn run_classical(cfg: &ExperimentConfig) -> Result<ClassicalDiffusion> {
    cfg.validate()?;
    let mut rng = auxiliary_rng(cfg.seed, u32::MAX as u64);
    classical_diffusion(
        cfg.chaos,
        cfg.kick,
        cfg.trajectories,
        cfg.iterations,
        &mut rng,
    )
}
