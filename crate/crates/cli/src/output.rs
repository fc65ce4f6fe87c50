//! CSV files. Reals are written with 17 significant digits, so parsing a
//! field gives back the exact value; absent values are empty fields.

use std::path::Path;

use anyhow::Result;
use csv::Writer;
use sawtooth::experiment::{EvolveResult, MeasureResult, SpectralResult, SweepResult, Threshold};
use sawtooth::imperfections::CouplingMode;
use sawtooth::sawtooth::ClassicalDiffusion;

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn mode(m: CouplingMode) -> &'static str {
    match m {
        CouplingMode::Zero => "zero",
        CouplingMode::EqualToDelta => "equal-to-delta",
    }
}

fn writer<S: AsRef<str>>(dir: &Path, name: &str, header: &[S]) -> Result<Writer<std::fs::File>> {
    let mut w = Writer::from_path(dir.join(name))?;
    w.write_record(header.iter().map(|s| s.as_ref()))?;
    Ok(w)
}

pub fn evolve(dir: &Path, results: &[EvolveResult]) -> Result<()> {
    let mut series = writer(
        dir,
        "evolve_series.csv",
        &[
            "n_qubits", "epsilon", "coupling", "t", "m2", "xi", "xi_mean",
        ],
    )?;
    let mut dists = writer(
        dir,
        "evolve_distributions.csv",
        &["n_qubits", "epsilon", "coupling", "t_window", "n", "W"],
    )?;
    for r in results {
        let head = [
            r.n_qubits.to_string(),
            real(r.epsilon),
            mode(r.coupling).to_string(),
        ];
        for p in &r.series {
            let mut row = head.to_vec();
            row.extend([p.t.to_string(), real(p.m2), real(p.xi), real(p.xi_mean)]);
            series.write_record(&row)?;
        }
        for w in &r.windows {
            let (a, b) = w.window().unwrap_or((0, 0));
            for (n, p) in w.iter() {
                let mut row = head.to_vec();
                row.extend([format!("{a}-{b}"), n.to_string(), real(p)]);
                dists.write_record(&row)?;
            }
        }
    }
    series.flush()?;
    dists.flush()?;
    Ok(())
}

fn threshold_fields(t: &Threshold) -> [String; 4] {
    [
        real(t.target),
        opt(t.value),
        opt(t.bracket.map(|b| b.0)),
        opt(t.bracket.map(|b| b.1)),
    ]
}

pub fn sweep(dir: &Path, s: &SweepResult) -> Result<()> {
    let mut pts = writer(
        dir,
        "sweep.csv",
        &[
            "n_qubits",
            "epsilon",
            "coupling",
            "D_n",
            "D_n_stderr",
            "xi_inf",
            "xi_inf_mean",
            "saturated",
        ],
    )?;
    for p in &s.points {
        pts.write_record([
            p.n_qubits.to_string(),
            real(p.epsilon),
            mode(p.coupling).to_string(),
            real(p.diffusion.value),
            real(p.diffusion.stderr),
            real(p.xi_inf),
            real(p.xi_inf_mean),
            p.saturated.to_string(),
        ])?;
    }
    pts.flush()?;
    let mut header: Vec<String> = ["n_qubits", "coupling", "d0", "xi0"]
        .map(String::from)
        .to_vec();
    for name in ["epsilon_d", "epsilon_xi", "epsilon_xi_e"] {
        header.extend(["target", "value", "lo", "hi"].map(|s| format!("{name}_{s}")));
    }
    header.push("ordering_violated".into());
    let mut th = writer(dir, "thresholds.csv", &header)?;
    for t in &s.thresholds {
        let mut row = vec![
            t.n_qubits.to_string(),
            mode(t.coupling).to_string(),
            real(t.d0),
            real(t.xi0),
        ];
        for x in [&t.epsilon_d, &t.epsilon_xi, &t.epsilon_xi_e] {
            row.extend(threshold_fields(x));
        }
        row.push(t.ordering_violated.to_string());
        th.write_record(&row)?;
    }
    th.flush()?;
    let mut sc = writer(
        dir,
        "scaling.csv",
        &["coupling", "quantity", "value", "stderr"],
    )?;
    for (m, summary) in &s.scaling {
        let m = mode(*m);
        let mut put =
            |q: &str, v: Option<f64>, e: Option<f64>| sc.write_record([m, q, &opt(v), &opt(e)]);
        put(
            "xi_e_exponent",
            summary.xi_e_power.as_ref().map(|p| p.exponent),
            summary.xi_e_power.as_ref().map(|p| p.exponent_stderr),
        )?;
        put("A", summary.a, None)?;
        put("A_with_ell", summary.a_with_ell, None)?;
        put(
            "xi_exponent",
            summary.xi_power.as_ref().map(|p| p.exponent),
            summary.xi_power.as_ref().map(|p| p.exponent_stderr),
        )?;
        put("B", summary.b, None)?;
    }
    sc.flush()?;
    Ok(())
}

pub fn spectral(dir: &Path, results: &[SpectralResult]) -> Result<()> {
    let mut hist = writer(
        dir,
        "spectral_histogram.csv",
        &["n_qubits", "epsilon", "coupling", "s_lo", "s_hi", "density"],
    )?;
    let mut dist = writer(
        dir,
        "spectral_distances.csv",
        &[
            "n_qubits",
            "epsilon",
            "coupling",
            "realizations",
            "spacings",
            "d_P",
            "d_WD",
            "preferred",
            "low_statistics",
        ],
    )?;
    for r in results {
        let h = &r.statistics.histogram;
        for (k, d) in h.density.iter().enumerate() {
            hist.write_record([
                r.n_qubits.to_string(),
                real(r.epsilon),
                mode(r.coupling).to_string(),
                real(h.edges[k]),
                real(h.edges[k + 1]),
                real(*d),
            ])?;
        }
        dist.write_record([
            r.n_qubits.to_string(),
            real(r.epsilon),
            mode(r.coupling).to_string(),
            r.realizations.to_string(),
            h.samples.to_string(),
            real(r.statistics.d_poisson),
            real(r.statistics.d_wigner_dyson),
            if r.statistics.prefers_poisson() {
                "poisson"
            } else {
                "wigner-dyson"
            }
            .to_string(),
            r.low_statistics.to_string(),
        ])?;
    }
    hist.flush()?;
    dist.flush()?;
    Ok(())
}

pub fn measure(dir: &Path, m: &MeasureResult) -> Result<()> {
    let mut w = writer(
        dir,
        "measure.csv",
        &[
            "runs",
            "ell",
            "nu",
            "direct_ell",
            "direct_stderr",
            "bin_width",
            "failure",
        ],
    )?;
    for p in &m.points {
        w.write_record([
            p.runs.to_string(),
            opt(p.estimate.as_ref().map(|f| f.value)),
            opt(p.estimate.as_ref().map(|f| f.stderr)),
            real(m.direct.value),
            real(m.direct.stderr),
            m.bin_width.to_string(),
            p.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn classical(dir: &Path, c: &ClassicalDiffusion) -> Result<()> {
    let mut w = writer(dir, "classical.csv", &["t", "m2"])?;
    for &(t, m) in &c.series {
        w.write_record([t.to_string(), real(m)])?;
    }
    w.flush()?;
    let mut f = writer(dir, "classical_fit.csv", &["D_n", "stderr", "t_lo", "t_hi"])?;
    f.write_record([
        real(c.fit.value),
        real(c.fit.stderr),
        real(c.fit.window.0),
        real(c.fit.window.1),
    ])?;
    f.flush()?;
    Ok(())
}
