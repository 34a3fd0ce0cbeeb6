//! Small statistics toolkit: moments, weighted log-log regression, goodness of fit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Sample skewness (moment estimator).
pub fn skewness(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Sample excess kurtosis (moment estimator).
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_std_error(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    ((m4 - m2 * m2) / n).sqrt()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Weighted least squares of y on x with weights 1/var.
///
/// The slope standard error is inflated by the reduced chi-square when the
/// points scatter more than their own error bars allow.
pub fn weighted_line(x: &[f64], y: &[f64], var: &[f64]) -> SlopeFit {
    let w: Vec<f64> = var.iter().map(|v| 1.0 / v.max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let swx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let swy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let swxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let swxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * swxx - swx * swx;
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swy - slope * swx) / sw;
    let ybar = swy / sw;
    let ss_res: f64 = (0..x.len()).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let ss_tot: f64 = (0..x.len()).map(|i| w[i] * (y[i] - ybar).powi(2)).sum();
    let dof = x.len().saturating_sub(2).max(1) as f64;
    let inflate = (ss_res / dof).max(1.0);
    let slope_se = (sw / det * inflate).sqrt();
    let z = normal_quantile(0.975);
    SlopeFit {
        slope,
        intercept,
        slope_se,
        ci_low: slope - z * slope_se,
        ci_high: slope + z * slope_se,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        points: x.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of `counts` to `probs`; bins with fewer than five
/// expected counts are pooled into their neighbour.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> ChiSquareTest {
    let total: u64 = counts.iter().sum();
    let psum: f64 = probs.iter().sum();
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(probs) {
        o += *c as f64;
        e += p / psum * total as f64;
        if e >= 5.0 {
            obs.push(o);
            exp.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match (obs.last_mut(), exp.last_mut()) {
            (Some(lo), Some(le)) => {
                *lo += o;
                *le += e;
            }
            _ => {
                obs.push(o);
                exp.push(e);
            }
        }
    }
    let statistic: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = obs.len().saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic);
    ChiSquareTest { statistic, dof, p_value }
}

/// Elementary symmetric polynomial e_k of `values`, divided by C(len, k).
///
/// This is the U-statistic average of the product over all k-subsets.
pub fn mean_k_product(values: impl IntoIterator<Item = f64>, len: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if len < k {
        return 0.0;
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for v in values {
        for j in (1..=k).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e[k] / binomial(len, k)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_through_exact_points() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 0.75 * v).collect();
        let f = weighted_line(&x, &y, &[1.0, 2.0, 1.0, 4.0]);
        assert!((f.slope + 0.75).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_mean_matches_brute_force() {
        let v = [0.0, 2.0, 1.0, 3.0, 0.5];
        let mut brute = 0.0;
        let mut count = 0.0;
        for i in 0..5 {
            for j in i + 1..5 {
                brute += v[i] * v[j];
                count += 1.0;
            }
        }
        let u = mean_k_product(v.iter().copied(), 5, 2);
        assert!((u - brute / count).abs() < 1e-14);
        // zeros may be left out of the iterator
        let u2 = mean_k_product([2.0, 1.0, 3.0, 0.5], 5, 2);
        assert!((u2 - u).abs() < 1e-14);
    }

    #[test]
    fn chi_square_of_perfect_fit() {
        let t = chi_square_gof(&[100, 200, 300, 400], &[0.1, 0.2, 0.3, 0.4]);
        assert!(t.statistic.abs() < 1e-12);
        assert_eq!(t.dof, 3);
        assert!(t.p_value > 0.999);
    }

    #[test]
    fn moments_of_symmetric_sample() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!(skewness(&x).abs() < 1e-15);
        assert!((variance(&x) - 2.5).abs() < 1e-15);
        assert!((excess_kurtosis(&x) + 1.3).abs() < 1e-12);
    }
}
