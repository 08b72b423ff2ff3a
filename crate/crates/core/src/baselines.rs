//! Fourier-coefficient no-effect tests used as baselines.
//!
//! Both statistics are asymptotically standard normal under `f = 0` and reject
//! at level `alpha` when they exceed the normal `(1 - alpha)` quantile.
//!
//! Writing `A_j = n |a_j|^2 + n |a_{-j}|^2` for the two-sided coefficient
//! energy at frequency `j > 0` (with `E[A_j] = 2 sigma^2` under the null), the
//! statistics are
//!
//! ```text
//! EL1(m)      = (sum_{j=1}^{m} A_j - 2 m sigma^2) / (2 sigma^2 sqrt(m))
//! EL2(lambda) = (sum_{j=1}^{J} w_j A_j - 2 sigma^2 sum_j w_j) / (2 sigma^2 sqrt(sum_j w_j^2))
//! ```
//!
//! with `w_j = (1 + lambda (2 pi j)^4)^-2` and `J = floor((n - 1) / 2)`. EL1 is
//! EL2 with indicator weights `w_j = 1{j <= m}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

/// Sample Fourier coefficients `a_j = (1/n) sum_i y_i exp(-2 pi i j (i-1) / n)`
/// for `|j| <= (n - 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    max_freq: usize,
    /// Index `j + max_freq` holds `a_j`.
    values: Vec<Complex64>,
}

impl FourierCoefficients {
    /// Largest frequency `floor((n - 1) / 2)`.
    pub fn max_freq(&self) -> usize {
        self.max_freq
    }

    pub fn get(&self, j: i64) -> Complex64 {
        let idx = j + self.max_freq as i64;
        assert!(
            idx >= 0 && (idx as usize) < self.values.len(),
            "frequency {j} outside +-{}",
            self.max_freq
        );
        self.values[idx as usize]
    }

    /// `(j, a_j)` for `j = -max_freq..=max_freq`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let off = self.max_freq as i64;
        self.values.iter().enumerate().map(move |(i, c)| (i as i64 - off, *c))
    }
}

pub fn fourier_coeffs(y: &[f64]) -> Result<FourierCoefficients> {
    let n = y.len();
    if n < 2 {
        return Err(Error::SampleTooSmall { got: n, min: 2 });
    }
    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let max_freq = (n - 1) / 2;
    let scale = 1.0 / n as f64;
    let values = (-(max_freq as i64)..=max_freq as i64)
        .map(|j| buf[j.rem_euclid(n as i64) as usize] * scale)
        .collect();
    Ok(FourierCoefficients { max_freq, values })
}

/// Which baseline produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineName {
    EL1,
    EL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStat {
    pub name: BaselineName,
    pub value: f64,
    /// `m` for EL1, `lambda` for EL2.
    pub parameter: f64,
    pub sigma_sq_used: f64,
}

impl BaselineStat {
    /// One-sided asymptotic test at level `alpha`.
    pub fn rejects(&self, alpha: f64) -> Result<bool> {
        Ok(self.value > normal_upper_quantile(alpha)?)
    }
}

/// `z_{1 - alpha}` of the standard normal.
pub fn normal_upper_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        if alpha == 1.0 {
            return Ok(f64::NEG_INFINITY);
        }
        return Err(invalid(format!("alpha = {alpha} outside (0, 1]")));
    }
    Ok(Normal::standard().inverse_cdf(1.0 - alpha))
}

fn check_sigma(sigma_sq: f64) -> Result<()> {
    if sigma_sq > 0.0 && sigma_sq.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("sigma^2 = {sigma_sq} must be positive")))
    }
}

/// Two-sided energies `A_j = n (|a_j|^2 + |a_-j|^2)`, `j = 1..=max_freq`.
fn energies(y: &[f64]) -> Result<Vec<f64>> {
    let a = fourier_coeffs(y)?;
    let n = y.len() as f64;
    Ok((1..=a.max_freq() as i64)
        .map(|j| n * (a.get(j).norm_sqr() + a.get(-j).norm_sqr()))
        .collect())
}

/// Truncated-series statistic with `m` frequencies.
pub fn el1_stat(y: &[f64], m: usize, sigma_sq: f64) -> Result<BaselineStat> {
    check_sigma(sigma_sq)?;
    let max_freq = y.len().saturating_sub(1) / 2;
    if m == 0 || m > max_freq {
        return Err(invalid(format!("EL1 needs 1 <= m <= {max_freq}, got m = {m}")));
    }
    let e = energies(y)?;
    let mf = m as f64;
    let sum: f64 = e[..m].iter().sum();
    Ok(BaselineStat {
        name: BaselineName::EL1,
        value: (sum - 2.0 * mf * sigma_sq) / (2.0 * sigma_sq * mf.sqrt()),
        parameter: mf,
        sigma_sq_used: sigma_sq,
    })
}

/// Smoothing-spline-weighted statistic with penalty `lambda`.
///
/// Weights are normalised by `w_1` before summing; the statistic is invariant
/// to that scaling and stays finite when `lambda` is huge.
pub fn el2_stat(y: &[f64], lambda: f64, sigma_sq: f64) -> Result<BaselineStat> {
    check_sigma(sigma_sq)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("EL2 needs lambda > 0, got {lambda}")));
    }
    let e = energies(y)?;
    if e.is_empty() {
        return Err(Error::SampleTooSmall { got: y.len(), min: 3 });
    }
    let inv = 1.0 / lambda;
    let c1 = (2.0 * PI).powi(4);
    let weights: Vec<f64> = (1..=e.len())
        .map(|j| {
            let cj = (2.0 * PI * j as f64).powi(4);
            let r = (inv + c1) / (inv + cj);
            r * r
        })
        .collect();
    let weighted: f64 = weights.iter().zip(&e).map(|(w, a)| w * a).sum();
    let sum_w: f64 = weights.iter().sum();
    let sum_w2: f64 = weights.iter().map(|w| w * w).sum();
    Ok(BaselineStat {
        name: BaselineName::EL2,
        value: (weighted - 2.0 * sigma_sq * sum_w) / (2.0 * sigma_sq * sum_w2.sqrt()),
        parameter: lambda,
        sigma_sq_used: sigma_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    /// Direct O(n^2) DFT.
    fn dft(y: &[f64], j: i64) -> Complex64 {
        let n = y.len() as f64;
        y.iter()
            .enumerate()
            .map(|(i, v)| Complex64::from_polar(*v, -2.0 * PI * j as f64 * i as f64 / n))
            .sum::<Complex64>()
            / n
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn coefficients_match_direct_dft() {
        for n in [2usize, 7, 10, 100] {
            let y = normals(n, n as u64);
            let a = fourier_coeffs(&y).unwrap();
            assert_eq!(a.max_freq(), (n - 1) / 2);
            for (j, c) in a.iter() {
                let d = dft(&y, j);
                assert!((c - d).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_and_cosine_inputs() {
        let a = fourier_coeffs(&[2.5; 12]).unwrap();
        assert!((a.get(0).re - 2.5).abs() < 1e-12);
        for (j, c) in a.iter() {
            if j != 0 {
                assert!(c.norm() < 1e-12);
            }
        }
        let n = 16;
        let y: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let a = fourier_coeffs(&y).unwrap();
        for (j, c) in a.iter() {
            let expected = if j.abs() == 1 { 0.5 } else { 0.0 };
            assert!((c - Complex64::new(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn conjugate_symmetry_and_parseval() {
        for n in [9usize, 10, 101] {
            let y = normals(n, 3);
            let a = fourier_coeffs(&y).unwrap();
            for j in 1..=a.max_freq() as i64 {
                assert!((a.get(-j) - a.get(j).conj()).norm() < 1e-10);
            }
            let mean = y.iter().sum::<f64>() / n as f64;
            assert!((a.get(0).re - mean).abs() < 1e-12);
            // the retained band is the full spectrum for odd n; for even n add
            // the Nyquist term
            let mut energy: f64 = a.iter().map(|(_, c)| c.norm_sqr()).sum();
            if n % 2 == 0 {
                energy += dft(&y, n as i64 / 2).norm_sqr();
            }
            let rhs = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
            assert!((energy - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn el1_constant_signal() {
        for m in [1usize, 3, 5] {
            let s = el1_stat(&[1.7; 100], m, 0.8).unwrap();
            assert_relative_eq!(s.value, -(m as f64).sqrt(), max_relative = 1e-10);
        }
    }

    /// The display evaluated term by term from the coefficients.
    fn el1_oracle(y: &[f64], m: usize, s2: f64) -> f64 {
        let n = y.len() as f64;
        let mut sum = 0.0;
        for j in 1..=m as i64 {
            sum += dft(y, j).norm_sqr() + dft(y, -j).norm_sqr();
        }
        (n * sum - 2.0 * m as f64 * s2) / (2.0 * s2 * (m as f64).sqrt())
    }

    fn el2_oracle(y: &[f64], lambda: f64, s2: f64) -> f64 {
        let n = y.len() as f64;
        let top = (y.len() as i64 - 1) / 2;
        let (mut num, mut pen, mut var) = (0.0, 0.0, 0.0);
        for j in 1..=top {
            let w = (1.0 + lambda * (2.0 * PI * j as f64).powi(4)).powi(-2);
            num += w * n * (dft(y, j).norm_sqr() + dft(y, -j).norm_sqr());
            pen += w;
            var += w * w;
        }
        (num - 2.0 * s2 * pen) / (2.0 * s2 * var.sqrt())
    }

    #[test]
    fn el1_single_frequency() {
        let n = 50;
        let y: Vec<f64> = (0..n).map(|i| 0.9 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let s2 = 1.3;
        // n (|a_1|^2 + |a_-1|^2) = n * 2 * (0.45)^2
        let energy = n as f64 * 2.0 * 0.45f64.powi(2);
        let s = el1_stat(&y, 1, s2).unwrap();
        assert_relative_eq!(s.value, (energy - 2.0 * s2) / (2.0 * s2), max_relative = 1e-10);
        for m in [1, 4, 24] {
            let noisy = normals(n, m as u64);
            assert_relative_eq!(el1_stat(&noisy, m, s2).unwrap().value, el1_oracle(&noisy, m, s2), max_relative = 1e-9);
        }
        assert!(el1_stat(&y, 0, s2).is_err());
        assert!(el1_stat(&y, 25, s2).is_err());
        assert!(el1_stat(&y, 1, 0.0).is_err());
    }

    #[test]
    fn el2_closed_forms() {
        let lambda = 1e-4;
        let n = 100;
        let s = el2_stat(&[3.0; 100], lambda, 2.0).unwrap();
        let w: Vec<f64> = (1..=(n - 1) / 2)
            .map(|j| (1.0 + lambda * (2.0 * PI * j as f64).powi(4)).powi(-2))
            .collect();
        let expected = -w.iter().sum::<f64>() / w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(s.value, expected, max_relative = 1e-10);

        for (seed, lambda) in [(1u64, 1e-6), (2, 1e-4), (3, 1e-1), (4, 10.0)] {
            let y = normals(n, seed);
            assert_relative_eq!(el2_stat(&y, lambda, 1.1).unwrap().value, el2_oracle(&y, lambda, 1.1), max_relative = 1e-8);
        }
        assert!(el2_stat(&[1.0; 10], 0.0, 1.0).is_err());
        assert!(el2_stat(&[1.0; 10], -1.0, 1.0).is_err());
    }

    #[test]
    fn el2_large_lambda_limit() {
        let y = normals(64, 9);
        let s = el2_stat(&y, 1e300, 1.0).unwrap();
        assert!(s.value.is_finite());
        // weights tend to j^-8, i.e. effectively the j = 1 term
        let e = energies(&y).unwrap();
        let w: Vec<f64> = (1..=e.len()).map(|j| (j as f64).powi(-8)).collect();
        let num: f64 = w.iter().zip(&e).map(|(w, a)| w * a).sum::<f64>() - 2.0 * w.iter().sum::<f64>();
        let den = 2.0 * w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(s.value, num / den, max_relative = 1e-9);
        assert_relative_eq!(s.value, el2_oracle(&y, 1e6, 1.0), max_relative = 1e-3);
    }

    fn null_mean_within(stat: impl Fn(&[f64]) -> f64) {
        let reps = 10_000;
        let vals: Vec<f64> = (0..reps).map(|r| stat(&normals(100, 10_000 + r))).collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        assert!(mean.abs() < 5.0 * se, "mean {mean} se {se}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn el1_null_mean_is_zero() {
        null_mean_within(|y| el1_stat(y, 5, 1.0).unwrap().value);
    }

    #[test]
    fn el2_null_mean_is_zero() {
        null_mean_within(|y| el2_stat(y, 1e-4, 1.0).unwrap().value);
    }

    #[test]
    fn normal_quantile() {
        assert_relative_eq!(normal_upper_quantile(0.05).unwrap(), 1.6448536, max_relative = 1e-6);
        assert!(normal_upper_quantile(0.0).is_err());
    }
}
