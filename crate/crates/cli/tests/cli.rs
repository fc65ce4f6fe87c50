use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sawtooth::experiment::{run_evolve, ExperimentConfig};

fn cli(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sawtooth-cli"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> Output {
    let o = cli(args, out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

const SMALL: [&str; 10] = [
    "--set",
    "n_qubits=[5]",
    "--set",
    "iterations=30",
    "--set",
    "epsilons=[0.0, 1e-3]",
    "--set",
    "realizations=2",
    "--set",
    "windows=[[20, 30]]",
];

#[test]
fn evolve_is_bit_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut args = vec!["evolve", "--seed", "17"];
    args.extend(SMALL);
    ok(&args, a.path());
    ok(&args, b.path());
    for f in [
        "evolve_series.csv",
        "evolve_distributions.csv",
        "manifest.txt",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
    let c = tempfile::tempdir().unwrap();
    let mut other = vec!["evolve", "--seed", "18"];
    other.extend(SMALL);
    ok(&other, c.path());
    assert_ne!(
        fs::read(a.path().join("evolve_series.csv")).unwrap(),
        fs::read(c.path().join("evolve_series.csv")).unwrap()
    );
}

#[test]
fn csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["evolve", "--seed", "3"];
    args.extend(SMALL);
    ok(&args, dir.path());
    let mut cfg = ExperimentConfig::default();
    for pair in SMALL.chunks(2) {
        let (k, v) = pair[1].split_once('=').unwrap();
        cfg = cfg.with_override(k, v).unwrap();
    }
    cfg = cfg.with_override("seed", "3").unwrap();
    let results = run_evolve(&cfg).unwrap();
    let parsed = rows(&dir.path().join("evolve_series.csv"));
    let expected: Vec<_> = results.iter().flat_map(|r| r.series.iter()).collect();
    assert_eq!(parsed.len(), expected.len());
    for (row, p) in parsed.iter().zip(expected) {
        assert_eq!(row[3].parse::<usize>().unwrap(), p.t);
        assert_eq!(row[4].parse::<f64>().unwrap(), p.m2);
        assert_eq!(row[5].parse::<f64>().unwrap(), p.xi);
        assert_eq!(row[6].parse::<f64>().unwrap(), p.xi_mean);
    }
    let dist = rows(&dir.path().join("evolve_distributions.csv"));
    let w = &results[1].windows[0];
    assert_eq!(dist.len(), 2 * w.levels());
    for (row, (n, p)) in dist.iter().skip(w.levels()).zip(w.iter()) {
        assert_eq!(&row[3], "20-30");
        assert_eq!(row[4].parse::<i64>().unwrap(), n);
        assert_eq!(row[5].parse::<f64>().unwrap(), p);
    }
}

#[test]
fn zero_iterations_emit_the_initial_delta() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "evolve",
            "--set",
            "iterations=0",
            "--set",
            "windows=[[0, 0]]",
        ],
        dir.path(),
    );
    assert_eq!(rows(&dir.path().join("evolve_series.csv")).len(), 1);
    let d = rows(&dir.path().join("evolve_distributions.csv"));
    let nonzero: Vec<_> = d
        .iter()
        .filter(|r| r[5].parse::<f64>().unwrap() > 0.0)
        .collect();
    assert_eq!(nonzero.len(), 1);
    assert_eq!(&nonzero[0][4], "0");
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["evolve", "--set", "iterations=-3"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("iterations"));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n_qubits = [6]\nrealisations = 3\n").unwrap();
    let o = cli(&["evolve", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("realisations"));
    let o = cli(&["evolve", "--preset", "fig0"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn config_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "n_qubits = [4]\nkick = 2.0\niterations = 12\nseed = 9\n",
    )
    .unwrap();
    ok(
        &["classical", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = classical"));
    assert!(manifest.contains("seed = 9"));
    assert!(manifest.contains(env!("CARGO_PKG_VERSION")));
    let fit = rows(&dir.path().join("classical_fit.csv"));
    let d: f64 = fit[0][0].parse().unwrap();
    assert!((d - 13.16).abs() / 13.16 < 0.1, "D = {d}");
}

#[test]
fn measure_flags_a_single_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "measure",
            "--preset",
            "fig1",
            "--set",
            "runs=[1, 1000]",
            "--set",
            "windows=[]",
            "--set",
            "iterations=30",
        ],
        dir.path(),
    );
    let r = rows(&dir.path().join("measure.csv"));
    assert!(r[0][1].is_empty() && !r[0][6].is_empty());
    assert!(!r[1][1].is_empty() && r[1][6].is_empty());
}

#[test]
fn small_spectral_run_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(
        &[
            "spectral",
            "--set",
            "n_qubits=[4]",
            "--set",
            "kick=2.0",
            "--set",
            "epsilons=[1e-3]",
        ],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("unreliable"));
    let d = rows(&dir.path().join("spectral_distances.csv"));
    assert_eq!(&d[0][8], "true");
    let h = rows(&dir.path().join("spectral_histogram.csv"));
    assert_eq!(h.len(), 40);
}

#[test]
fn spectral_cap_is_a_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(
        &[
            "spectral",
            "--set",
            "n_qubits=[6]",
            "--set",
            "dense_cap=32",
            "--set",
            "epsilons=[1e-3]",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dense_cap"));
}

#[test]
fn sweep_reports_missing_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(
        &[
            "sweep",
            "--set",
            "n_qubits=[4]",
            "--set",
            "kick=2.0",
            "--set",
            "iterations=20",
            "--set",
            "epsilons=[1e-7, 2e-7]",
        ],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("not bracketed"));
    let t = rows(&dir.path().join("thresholds.csv"));
    assert!(t[0][5].is_empty());
    assert_eq!(rows(&dir.path().join("sweep.csv")).len(), 3);
}

#[test]
fn fast_flag_shrinks_spectral_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "spectral",
            "--preset",
            "fig8",
            "--fast",
            "--set",
            "realizations=1",
            "--set",
            "epsilons=[1e-3]",
        ],
        dir.path(),
    );
    let d = rows(&dir.path().join("spectral_distances.csv"));
    assert_eq!(&d[0][0], "9");
    assert_eq!(&d[0][4], "512");
}
