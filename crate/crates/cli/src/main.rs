use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sawtooth::experiment::{self, ExperimentConfig};

mod output;

#[derive(Parser)]
#[command(
    name = "sawtooth-cli",
    version,
    about = "Quantum sawtooth map experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Averaged evolution: second moment, IPR and windowed distributions.
    Evolve(Common),
    /// D(ε) and ξ_∞(ε) over a strength grid, with thresholds.
    Sweep(Common),
    /// Level-spacing statistics of the perturbed Floquet operator.
    Spectral(Common),
    /// Coarse-grained measurement estimate of the localization length.
    Measure(Common),
    /// Classical ensemble diffusion.
    Classical(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; keys are the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (fig1 … fig8).
    #[arg(long)]
    preset: Option<String>,
    /// Field override, `key=value` with a TOML value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Desk-scale substitutions (spectral runs at n_q = 9).
    #[arg(long)]
    fast: bool,
}

const FAST_SPECTRAL_QUBITS: usize = 9;

impl Common {
    fn resolve(&self, name: &str) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => bail!("--preset and --config are mutually exclusive"),
            (Some(p), None) => ExperimentConfig::preset(p)?,
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            (None, None) => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override `{o}` is not key=value"))?;
            cfg = cfg.with_override(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg = cfg.with_override("seed", &seed.to_string())?;
        }
        if self.fast {
            if name == "spectral" {
                cfg = cfg.with_override("n_qubits", &format!("[{FAST_SPECTRAL_QUBITS}]"))?;
            } else {
                eprintln!("warning: --fast has no effect on `{name}`");
            }
        }
        Ok(cfg)
    }
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    notes: &[String],
) -> Result<()> {
    let mut text = format!(
        "command = {command}\nversion = {}\nseed = {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.seed
    );
    for n in notes {
        text.push_str(&format!("note = {n}\n"));
    }
    text.push_str("\n[config]\n");
    text.push_str(&cfg.to_toml());
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Evolve(c) => ("evolve", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Spectral(c) => ("spectral", c),
        Command::Measure(c) => ("measure", c),
        Command::Classical(c) => ("classical", c),
    };
    let cfg = common.resolve(name)?;
    let dir = &common.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut notes = Vec::new();
    match cli.command {
        Command::Evolve(_) => {
            let results = experiment::run_evolve(&cfg)?;
            output::evolve(dir, &results)?;
        }
        Command::Sweep(_) => {
            if !cfg.epsilons.iter().any(|&e| e > 0.0) {
                notes.push(format!(
                    "default strength grid: {} points per decade over [{:e}, {:e}]",
                    experiment::GRID_PER_DECADE,
                    experiment::GRID_RANGE.0,
                    experiment::GRID_RANGE.1
                ));
            }
            let result = experiment::run_sweep(&cfg)?;
            for t in &result.thresholds {
                for (label, th) in [
                    ("epsilon_d", &t.epsilon_d),
                    ("epsilon_xi", &t.epsilon_xi),
                    ("epsilon_xi_e", &t.epsilon_xi_e),
                ] {
                    if th.value.is_none() {
                        let msg = format!(
                            "{label} not bracketed by the grid for n_qubits = {}",
                            t.n_qubits
                        );
                        eprintln!("warning: {msg}");
                        notes.push(msg);
                    }
                }
                if t.ordering_violated {
                    eprintln!(
                        "warning: epsilon_xi > epsilon_xi_e for n_qubits = {}",
                        t.n_qubits
                    );
                }
            }
            output::sweep(dir, &result)?;
        }
        Command::Spectral(_) => {
            let results = experiment::run_spectral(&cfg)?;
            for r in results.iter().filter(|r| r.low_statistics) {
                let msg = format!(
                    "only {} spacings for n_qubits = {}, epsilon = {:e}; distances are unreliable",
                    r.statistics.histogram.samples, r.n_qubits, r.epsilon
                );
                eprintln!("warning: {msg}");
                notes.push(msg);
            }
            output::spectral(dir, &results)?;
        }
        Command::Measure(_) => {
            let result = experiment::run_measure(&cfg)?;
            for p in &result.points {
                if let Some(f) = &p.failure {
                    eprintln!("warning: {} runs: {f}", p.runs);
                }
            }
            output::measure(dir, &result)?;
        }
        Command::Classical(_) => {
            let result = experiment::run_classical(&cfg)?;
            output::classical(dir, &result)?;
        }
    }
    write_manifest(dir, name, &cfg, &notes)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
