//! Least-squares line fits shared by the diagnostics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Outcome of a one-parameter fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub value: f64,
    /// Standard error of `value`; always non-negative.
    pub stderr: f64,
    /// Range of the abscissa (distance, time, ...) that entered the fit.
    pub window: (f64, f64),
    /// Root-mean-square residual of the fitted line.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Line {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub rms: f64,
}

/// Ordinary least squares `y = a + b x`. The slope standard error uses the
/// residual variance with `n − 2` degrees of freedom.
pub(crate) fn line(xs: &[f64], ys: &[f64]) -> Result<Line> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::FitFailure(format!(
            "need at least 2 points, got {n}"
        )));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::FitFailure("abscissa has zero spread".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_se = if n > 2 {
        (ssr / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Line {
        slope,
        intercept,
        slope_se,
        rms: (ssr / n as f64).sqrt(),
    })
}

/// Least squares through the origin `y = b x`.
pub(crate) fn origin_line(xs: &[f64], ys: &[f64]) -> Result<Line> {
    let n = xs.len();
    if n < 1 || ys.len() != n {
        return Err(Error::FitFailure("no points to fit".into()));
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if sxx <= 0.0 {
        return Err(Error::FitFailure("abscissa is identically zero".into()));
    }
    let slope = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x).powi(2))
        .sum();
    let slope_se = if n > 1 {
        (ssr / (n - 1) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Line {
        slope,
        intercept: 0.0,
        slope_se,
        rms: (ssr / n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lines() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let l = line(&xs, &ys).unwrap();
        assert!((l.slope + 0.5).abs() < 1e-14 && (l.intercept - 2.0).abs() < 1e-14);
        assert!(l.slope_se < 1e-14);
        let o = origin_line(&xs, &[3.0, 6.0, 9.0, 12.0]).unwrap();
        assert!((o.slope - 3.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(line(&[1.0], &[1.0]).is_err());
        assert!(line(&[2.0, 2.0], &[1.0, 3.0]).is_err());
        assert!(origin_line(&[0.0], &[1.0]).is_err());
    }
}
