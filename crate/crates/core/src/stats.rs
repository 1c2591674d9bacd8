//! Summary statistics for Monte Carlo replicates.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (divisor `len - 1`). Two-pass.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Sample variance and its standard error by batch means.
///
/// Replicates are split into `min(batches, len / 2)` contiguous batches; the
/// standard error is the spread of the per-batch variances over `sqrt(B)`.
/// With fewer than two usable batches it falls back to the fourth-moment
/// formula of [`variance_stderr`].
pub fn batch_variance(xs: &[f64], batches: usize) -> (f64, f64) {
    let var = sample_variance(xs);
    let b = batches.min(xs.len() / 2);
    if b < 2 {
        return (var, variance_stderr(xs));
    }
    let size = xs.len() / b;
    let per_batch: Vec<f64> = xs.chunks(size).take(b).map(sample_variance).collect();
    (var, mean_stderr(&per_batch))
}

/// Asymptotic standard error of the sample variance, `sqrt((m4 - s^4) / n)`.
pub fn variance_stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
    ((m4 - m2 * m2).max(0.0) / n as f64).sqrt()
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn iqr(xs: &[f64]) -> f64 {
    quantile(xs, 0.75) - quantile(xs, 0.25)
}

/// Anderson-Darling `A^2` for normality with estimated mean and variance,
/// with the Stephens small-sample correction `A^2 (1 + 0.75/n + 2.25/n^2)`.
///
/// The 5% critical value of the corrected statistic is about 0.752.
pub fn anderson_darling_normal(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return f64::NAN;
    }
    let m = mean(xs);
    let sd = sample_variance(xs).sqrt();
    if sd == 0.0 {
        return f64::INFINITY;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut z: Vec<f64> = xs.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let tail = |p: f64| p.clamp(1e-300, 1.0 - 1e-16);
    let s: f64 = (0..n)
        .map(|i| {
            let fi = tail(normal.cdf(z[i]));
            let fj = tail(normal.cdf(z[n - 1 - i]));
            (2 * i + 1) as f64 * (fi.ln() + (1.0 - fj).ln())
        })
        .sum();
    let a2 = -nf - s / nf;
    a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::RandomStream;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_variance(&[3.0]), 0.0);
    }

    #[test]
    fn quantiles() {
        let xs = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(iqr(&xs), 2.0);
    }

    #[test]
    fn batch_variance_constant_data() {
        let (v, se) = batch_variance(&[2.0; 1000], 100);
        assert_eq!(v, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn batch_stderr_close_to_normal_theory() {
        let mut rng = RandomStream::new(5, 0).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (v, se) = batch_variance(&xs, 100);
        assert!((v - 1.0).abs() < 4.0 * se);
        let theory = (2.0f64 / 100_000.0).sqrt();
        assert!((se / theory - 1.0).abs() < 0.35, "se {se} theory {theory}");
    }

    #[test]
    fn anderson_darling_separates_normal_from_uniform() {
        let mut rng = RandomStream::new(6, 0).rng();
        let normal: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let uniform = crate::stream::uniform_draws(&RandomStream::new(6, 1), 500);
        assert!(anderson_darling_normal(&normal) < 1.0);
        assert!(anderson_darling_normal(&uniform) > 2.0);
    }
}
