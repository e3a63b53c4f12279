//! Least-squares fits and sequence extrapolation.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        points: n,
    })
}

/// Slope of `log y` against `log x`; non-positive entries are skipped.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    linear_fit(&lx, &ly)
}

/// Aitken Δ² acceleration of the last three terms.
pub fn aitken(s: &[f64]) -> Option<f64> {
    if s.len() < 3 {
        return None;
    }
    let (a, b, c) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let d = (c - b) - (b - a);
    if d.abs() < 1e-300 {
        return Some(c);
    }
    Some(c - (c - b).powi(2) / d)
}

/// Richardson extrapolation of `f(μ)` sampled on a geometric sequence of
/// `μ` with ratio `q`, assuming `f(μ) = L + K μ^p + …`.
pub fn richardson(values: &[f64], q: f64, p: f64) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let (a, b) = (values[values.len() - 2], values[values.len() - 1]);
    let r = q.powf(p);
    Some((b - r * a) / (1.0 - r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn power_law_slope() {
        let x = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 5.0 * v.powf(-0.25)).collect();
        assert!((loglog_fit(&x, &y).unwrap().slope + 0.25).abs() < 1e-12);
    }

    #[test]
    fn extrapolation() {
        // f(μ) = 0.5 + μ^{1/3} at μ = 8^{-k}
        let mus = [1.0, 0.125, 0.015625];
        let vals: Vec<f64> = mus.iter().map(|m: &f64| 0.5 + m.powf(1.0 / 3.0)).collect();
        assert!((richardson(&vals, 0.125, 1.0 / 3.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((aitken(&vals).unwrap() - 0.5).abs() < 1e-12);
    }
}
