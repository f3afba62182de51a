//! Small statistics helpers: Wilson intervals, percentiles, trimming,
//! t-based mean intervals and percentile bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Nearest-rank percentile of an ascending slice, `p` in (0, 1].
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Sorts and drops `floor(frac * n)` samples from each end.
pub fn trim_symmetric(samples: &[f64], frac: f64) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = (frac * v.len() as f64).floor() as usize;
    if 2 * cut >= v.len() {
        return v;
    }
    v[cut..v.len() - cut].to_vec()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean with a two-sided Student-t interval at confidence `conf`.
pub fn mean_ci(xs: &[f64], conf: f64) -> (f64, f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, m, m);
    }
    let df = (xs.len() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df)
        .expect("df positive")
        .inverse_cdf(1.0 - (1.0 - conf) / 2.0);
    let half = t * std_dev(xs) / (xs.len() as f64).sqrt();
    (m, m - half, m + half)
}

/// Percentile bootstrap interval of `stat` over resamples of `data`.
pub fn bootstrap_ci<T: Clone, F: Fn(&[T]) -> f64>(
    data: &[T],
    stat: F,
    resamples: usize,
    conf: f64,
    seed: u64,
) -> (f64, f64) {
    if data.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::with_capacity(data.len());
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            buf.clear();
            buf.extend((0..data.len()).map(|_| data[rng.random_range(0..data.len())].clone()));
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - conf) / 2.0;
    let lo = nearest_rank(&stats, alpha.max(1.0 / resamples as f64)).unwrap();
    let hi = nearest_rank(&stats, 1.0 - alpha).unwrap();
    (lo, hi)
}

/// Pearson correlation; NaN when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(&xs[..n]), mean(&ys[..n]));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let (dx, dy) = (xs[i] - mx, ys[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Ordinary least squares slope and intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        let (lo, hi) = wilson(5, 10, Z95);
        assert!((lo - 0.2366).abs() < 1e-4 && (hi - 0.7634).abs() < 1e-4);
        let n = 30_000.0;
        let (lo, hi) = wilson(0, 30_000, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - Z95 * Z95 / (n + Z95 * Z95)).abs() < 1e-12);
        let (lo, hi) = wilson(10, 10, Z95);
        assert_eq!(hi, 1.0);
        assert!(lo > 0.69 && lo < 0.73);
    }

    #[test]
    fn nearest_rank_reference() {
        let v = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(nearest_rank(&v, 0.05), Some(15.0));
        assert_eq!(nearest_rank(&v, 0.30), Some(20.0));
        assert_eq!(nearest_rank(&v, 0.40), Some(20.0));
        assert_eq!(nearest_rank(&v, 0.50), Some(35.0));
        assert_eq!(nearest_rank(&v, 1.0), Some(50.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }

    #[test]
    fn trimming_is_symmetric() {
        let v: Vec<f64> = (0..200).rev().map(f64::from).collect();
        let t = trim_symmetric(&v, 0.01);
        assert_eq!(t.len(), 196);
        assert_eq!(t[0], 2.0);
        assert_eq!(*t.last().unwrap(), 197.0);
        assert_eq!(trim_symmetric(&[1.0, 2.0], 0.01).len(), 2);
    }

    #[test]
    fn t_interval() {
        let xs: Vec<f64> = (0..30).map(f64::from).collect();
        let (m, lo, hi) = mean_ci(&xs, 0.95);
        assert_eq!(m, 14.5);
        // t(0.975, 29) = 2.04523
        let half = 2.045_229_6 * std_dev(&xs) / 30f64.sqrt();
        assert!((hi - m - half).abs() < 1e-5 && (m - lo - half).abs() < 1e-5);
    }

    #[test]
    fn bootstrap_brackets_mean() {
        let data: Vec<f64> = (0..500).map(|i| (i % 10) as f64).collect();
        let (lo, hi) = bootstrap_ci(&data, mean, 1000, 0.95, 1);
        assert!(lo < 4.5 && hi > 4.5);
        assert!(hi - lo < 1.0);
        assert_eq!(bootstrap_ci(&data, mean, 200, 0.95, 7), bootstrap_ci(&data, mean, 200, 0.95, 7));
    }

    #[test]
    fn correlation_and_fit() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        assert!((pearson(&xs, &ys) - 1.0).abs() < 1e-12);
        assert_eq!(linear_fit(&xs, &ys), (2.0, 1.0));
    }
}
