use crate::error::{Error, Result};

/// Sample moments; variance is the population (`1/n`) estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(xs: &[f64]) -> Result<Moments> {
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("moments need at least two samples".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::InvalidArgument("moments of a constant sample".into()));
    }
    Ok(Moments {
        n: xs.len(),
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("median of an empty sample".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("median of a sample containing NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(
            "log-log fit needs two or more paired points".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("log-log fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample, RngSpec};

    #[test]
    fn hand_moments() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.variance, 1.25);
        assert!(m.skewness.abs() < 1e-15);
        // Fourth central moment: (2*1.5^4 + 2*0.5^4)/4 = 2.5625.
        assert!((m.excess_kurtosis - (2.5625 / 1.5625 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_moments_near_zero() {
        let xs = sample(&RngSpec::gaussian(3, 0.0, 2.0), [200_000]).unwrap();
        let m = moments(xs.data()).unwrap();
        assert!(m.skewness.abs() < 0.03);
        assert!(m.excess_kurtosis.abs() < 0.06);
        assert!((m.variance - 4.0).abs() < 0.05);
    }

    #[test]
    fn skewed_sample() {
        let m = moments(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(m.skewness > 1.0);
        assert!(moments(&[1.0, 1.0]).is_err());
        assert!(moments(&[1.0]).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        assert!(median(&[f64::NAN]).is_err());
    }

    #[test]
    fn power_law_slope() {
        let x = [8.0, 16.0, 32.0, 64.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(log_log_slope(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
