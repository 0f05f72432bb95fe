use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{self, seeded_rng};

/// `E[max(V, 0)]` for `V ~ N(0, c^2)`, i.e. `c / sqrt(2 pi)`.
pub fn rectified_gaussian_mean(c: f64) -> f64 {
    c / (2.0 * PI).sqrt()
}

/// An estimate next to its analytic counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct StatReport {
    pub label: String,
    pub estimate: Vec<f64>,
    pub analytic: Vec<f64>,
    pub n_samples: usize,
    pub standard_error: Vec<f64>,
    /// Every component satisfies `|estimate - analytic| <= tol * max(1, |analytic|)`.
    pub pass: bool,
}

impl StatReport {
    pub fn compare(
        label: impl Into<String>,
        estimate: Vec<f64>,
        analytic: Vec<f64>,
        n_samples: usize,
        standard_error: Vec<f64>,
        tol: f64,
    ) -> Self {
        let pass = estimate.len() == analytic.len()
            && estimate
                .iter()
                .zip(&analytic)
                .all(|(e, a)| (e - a).abs() <= tol * a.abs().max(1.0));
        StatReport {
            label: label.into(),
            estimate,
            analytic,
            n_samples,
            standard_error,
            pass,
        }
    }

    /// True when every component is within `k` standard errors of the analytic value.
    pub fn within_standard_errors(&self, k: f64) -> bool {
        self.estimate
            .iter()
            .zip(&self.analytic)
            .zip(&self.standard_error)
            .all(|((e, a), se)| (e - a).abs() <= k * se)
    }

    pub const CSV_HEADER: &'static str = "label,component,estimate,analytic,n_samples,standard_error,pass";

    /// One row per component, fields in declaration order.
    pub fn write_csv_rows(&self, mut w: impl Write) -> std::io::Result<()> {
        for (i, (e, a)) in self.estimate.iter().zip(&self.analytic).enumerate() {
            let se = self.standard_error.get(i).copied().unwrap_or(f64::NAN);
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                self.label, i, e, a, self.n_samples, se, self.pass
            )?;
        }
        Ok(())
    }
}

/// Monte-Carlo estimate of `E[w I(w^T y > 0)]` for `w ~ N(0, c^2 I)` against
/// the analytic `c / sqrt(2 pi) * y / |y|`.
pub fn expected_rectified_direction(y: &[f64], c: f64, n_samples: usize, seed: u64, tol: f64) -> Result<StatReport> {
    let norm = tensor::l2_norm(y);
    if norm == 0.0 {
        return Err(Error::InvalidArgument("direction vector must be non-zero".into()));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10^4 samples, got {n_samples}"
        )));
    }
    let p = y.len();
    let mut rng = seeded_rng(seed);
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    let mut w = vec![0.0; p];
    for _ in 0..n_samples {
        for v in w.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = c * z;
        }
        if tensor::dot(&w, y) > 0.0 {
            for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&w) {
                *s += v;
                *q += v * v;
            }
        }
    }
    let n = n_samples as f64;
    let estimate: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let standard_error = estimate
        .iter()
        .zip(&sum_sq)
        .map(|(m, q)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let scale = rectified_gaussian_mean(c) / norm;
    let analytic = y.iter().map(|v| v * scale).collect();
    Ok(StatReport::compare(
        "expected_rectified_direction",
        estimate,
        analytic,
        n_samples,
        standard_error,
        tol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectified_mean_against_monte_carlo() {
        // Independent oracle: mean of max(Z, 0) over 10^7 standard normals.
        let mut rng = seeded_rng(2024);
        let n = 10_000_000;
        let (mut s, mut q) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let r = z.max(0.0);
            s += r;
            q += r * r;
        }
        let mean = s / n as f64;
        let se = ((q / n as f64 - mean * mean) / n as f64).sqrt();
        let analytic = rectified_gaussian_mean(1.0);
        assert!((analytic - 0.3989422804).abs() < 1e-10);
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "mc {mean} analytic {analytic} se {se}"
        );
        assert!((rectified_gaussian_mean(0.1) - 0.03989422804).abs() < 1e-11);
        assert_eq!(rectified_gaussian_mean(2.0 * 0.37), 2.0 * rectified_gaussian_mean(0.37));
    }

    #[test]
    fn direction_along_axis() {
        let mut y = vec![0.0; 5];
        y[0] = 1.0;
        let r = expected_rectified_direction(&y, 1.0, 1_000_000, 7, 0.01).unwrap();
        assert!((r.analytic[0] - 0.3989422804).abs() < 1e-9);
        assert!(r.analytic[1..].iter().all(|&v| v == 0.0));
        assert!(r.within_standard_errors(4.0), "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn analytic_is_scale_invariant_and_rotates() {
        let y = [0.3, -1.2, 0.5];
        let a = expected_rectified_direction(&y, 0.5, 10_000, 1, 1.0).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let b = expected_rectified_direction(&y2, 0.5, 10_000, 1, 1.0).unwrap();
        for (u, v) in a.analytic.iter().zip(&b.analytic) {
            assert!((u - v).abs() < 1e-15);
        }
        // A coordinate permutation of y permutes the analytic mean.
        let yp = [y[2], y[0], y[1]];
        let c = expected_rectified_direction(&yp, 0.5, 10_000, 1, 1.0).unwrap();
        assert_eq!(c.analytic, vec![a.analytic[2], a.analytic[0], a.analytic[1]]);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(expected_rectified_direction(&[0.0, 0.0], 1.0, 10_000, 0, 0.1).is_err());
        assert!(expected_rectified_direction(&[1.0], 1.0, 10, 0, 0.1).is_err());
    }

    #[test]
    fn pass_rule_and_csv() {
        let r = StatReport::compare("x", vec![1.04, 10.4], vec![1.0, 10.0], 100, vec![0.1, 0.1], 0.05);
        assert!(r.pass);
        let r2 = StatReport::compare("x", vec![1.06, 10.0], vec![1.0, 10.0], 100, vec![0.1, 0.1], 0.05);
        assert!(!r2.pass);
        let mut out = Vec::new();
        r.write_csv_rows(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x,0,1.04,1,100,0.1,true");
    }
}
