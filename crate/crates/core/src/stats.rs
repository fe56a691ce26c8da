//! Descriptive statistics, normality testing, autocorrelation, correlation
//! matrices and the empirical distribution function.
//!
//! Conventions: the standalone standard deviation uses the `n - 1` divisor;
//! skewness and kurtosis are simple moment ratios of `1/n` central moments.
//! Kurtosis is reported raw, so a normal sample sits near 3.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::ingest::Panel;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {required} observations, got {got}")]
    TooFew { required: usize, got: usize },
    #[error("zero variance: moments beyond the mean are undefined")]
    ZeroVariance,
    #[error("column `{0}` has zero variance")]
    ZeroVarianceColumn(String),
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptiveStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub skewness: f64,
    /// Raw (not excess) kurtosis.
    pub kurtosis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JarqueBeraResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor.
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Central moments m2, m3, m4 with the `1/n` divisor.
fn central_moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

pub fn describe(x: &[f64]) -> Result<DescriptiveStats, StatsError> {
    if x.len() < 4 {
        return Err(StatsError::TooFew { required: 4, got: x.len() });
    }
    let (m2, m3, m4) = central_moments(x);
    if m2.is_nan() || m2 <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(DescriptiveStats {
        n: x.len(),
        mean: mean(x),
        median: median(x),
        std_dev: std_dev(x),
        skewness: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
    })
}

/// Upper tail of the χ² distribution with two degrees of freedom.
pub fn chi2_2_sf(q: f64) -> f64 {
    if q <= 0.0 {
        1.0
    } else {
        (-q / 2.0).exp()
    }
}

/// JB statistic `n/6 * (S^2 + (K - 3)^2 / 4)` from raw kurtosis `k`.
pub fn jarque_bera_from_moments(n: usize, skewness: f64, kurtosis: f64) -> JarqueBeraResult {
    let excess = kurtosis - 3.0;
    let statistic = n as f64 / 6.0 * (skewness * skewness + excess * excess / 4.0);
    JarqueBeraResult { statistic, p_value: chi2_2_sf(statistic) }
}

pub fn jarque_bera(x: &[f64]) -> Result<JarqueBeraResult, StatsError> {
    if x.len() < 8 {
        return Err(StatsError::TooFew { required: 8, got: x.len() });
    }
    let d = describe(x)?;
    Ok(jarque_bera_from_moments(d.n, d.skewness, d.kurtosis))
}

/// First-order sample autocorrelation.
pub fn autocorr1(x: &[f64]) -> Result<f64, StatsError> {
    if x.len() < 3 {
        return Err(StatsError::TooFew { required: 3, got: x.len() });
    }
    let m = mean(x);
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if den.is_nan() || den <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let num: f64 = x.windows(2).map(|w| (w[1] - m) * (w[0] - m)).sum();
    Ok(num / den)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFew { required: 2, got: a.len() });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation matrix of the panel columns.
pub fn corr_matrix(p: &Panel) -> Result<DMatrix<f64>, StatsError> {
    let n = p.ncols();
    for j in 0..n {
        if std_dev(p.column(j)).is_nan() || std_dev(p.column(j)) <= 0.0 {
            return Err(StatsError::ZeroVarianceColumn(p.ids()[j].clone()));
        }
    }
    let mut c = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = pearson(p.column(i), p.column(j))?;
            c[(i, j)] = r;
            c[(j, i)] = r;
        }
    }
    Ok(c)
}

/// `F_n(at) = (1/n) #{k : x_k < at}`, with a strict inequality, so the
/// sample minimum maps to 0.
pub fn empirical_cdf(x: &[f64], at: f64) -> f64 {
    x.iter().filter(|&&v| v < at).count() as f64 / x.len() as f64
}

/// [`empirical_cdf`] evaluated at every sample point, in `O(n log n)`.
pub fn empirical_cdf_at_samples(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter().map(|&v| sorted.partition_point(|&s| s < v) as f64 / n).collect()
}

/// Sample quantile by linear interpolation between order statistics
/// (position `(n - 1) p` in the sorted sample).
pub fn sample_quantile(x: &[f64], p: f64) -> f64 {
    assert!(!x.is_empty(), "quantile of an empty sample");
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Month;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn describe_symmetric() {
        assert!(matches!(describe(&[-1.0, 0.0, 1.0]), Err(StatsError::TooFew { .. })));
        let d = describe(&[-1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.mean, 0.0);
        assert_eq!(d.median, 0.0);
        assert_eq!(d.skewness, 0.0);
    }

    #[test]
    fn describe_hand_moments() {
        // Deviations {-1/4 x3, 3/4}: m2 = 3/16, m3 = 3/32, m4 = 21/256.
        let d = describe(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(d.mean, 0.25);
        assert_eq!(d.median, 0.0);
        assert_abs_diff_eq!(d.skewness, 2.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(d.kurtosis, 7.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.std_dev, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn describe_zero_variance() {
        assert_eq!(describe(&[2.0; 5]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn jarque_bera_examples() {
        let r = jarque_bera_from_moments(201, 0.0, 3.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);

        let r = jarque_bera_from_moments(201, 0.330977, 3.216635);
        assert!((r.statistic - 4.057).abs() <= 0.01, "{}", r.statistic);

        assert!(matches!(jarque_bera(&[1.0, 2.0, 3.0, 4.0]), Err(StatsError::TooFew { .. })));
        assert_eq!(jarque_bera(&[1.0; 10]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn chi2_closed_form() {
        // 5.991465 is the 95% point of χ²₂.
        assert_abs_diff_eq!(chi2_2_sf(5.991464547107979), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn autocorr_alternating() {
        let x: Vec<f64> = (0..100).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        // Mean zero; the lag-one cross products sum to -99 over a total of 100.
        assert_abs_diff_eq!(autocorr1(&x).unwrap(), -0.99, epsilon = 1e-15);
        assert_eq!(autocorr1(&[3.0; 5]), Err(StatsError::ZeroVariance));
        assert!(autocorr1(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn autocorr_ar1_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = vec![0.0f64; 5000];
        for t in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[t] = 0.8 * x[t - 1] + e;
        }
        let rho = autocorr1(&x).unwrap();
        assert!((0.75..=0.85).contains(&rho), "{rho}");
    }

    fn panel(cols: &[Vec<f64>]) -> Panel {
        let t = cols[0].len();
        let dates = (0..t as i64).map(|k| Month::new(2000, 1).unwrap().offset(k)).collect();
        Panel::new(
            (0..cols.len()).map(|j| format!("s{j}")).collect(),
            dates,
            DMatrix::from_column_slice(t, cols.len(), &cols.concat()),
        )
        .unwrap()
    }

    #[test]
    fn corr_examples() {
        let a = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let c = corr_matrix(&panel(&[a.clone(), a.clone(), neg])).unwrap();
        assert_abs_diff_eq!(c[(0, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(0, 2)], -1.0, epsilon = 1e-15);
        assert_eq!(c[(1, 1)], 1.0);
        assert_eq!(corr_matrix(&panel(&[a, vec![1.0; 5]])), Err(StatsError::ZeroVarianceColumn("s1".into())));
    }

    #[test]
    fn ecdf_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(empirical_cdf(&x, 1.0), 0.0);
        assert_eq!(empirical_cdf(&x, 3.0), 2.0 / 3.0);
        assert_eq!(empirical_cdf(&[5.0], 10.0), 1.0);
        assert_eq!(empirical_cdf_at_samples(&[3.0, 1.0, 2.0, 1.0]), vec![0.75, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn quantile_interpolates() {
        let x = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(sample_quantile(&x, 0.0), 1.0);
        assert_eq!(sample_quantile(&x, 1.0), 4.0);
        assert_eq!(sample_quantile(&x, 0.5), 2.5);
        assert_abs_diff_eq!(sample_quantile(&x, 0.1), 1.3, epsilon = 1e-15);
    }

    #[test]
    fn normal_helpers() {
        assert_abs_diff_eq!(normal_pdf(0.0), 0.3989422804014327, epsilon = 1e-16);
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-14);
        assert_abs_diff_eq!(normal_two_sided_p(1.959963984540054), 0.05, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn ecdf_is_monotone_and_reaches_one(x in prop::collection::vec(-10.0f64..10.0, 1..40), a in -12.0f64..12.0, b in -12.0f64..12.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(empirical_cdf(&x, lo) <= empirical_cdf(&x, hi));
            let max = x.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(empirical_cdf(&x, max + 1e-9), 1.0);
            let fast = empirical_cdf_at_samples(&x);
            for (v, f) in x.iter().zip(fast) {
                prop_assert_eq!(empirical_cdf(&x, *v), f);
            }
        }

        #[test]
        fn jb_affine_invariant(x in prop::collection::vec(-5.0f64..5.0, 10..60), a in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0], b in -10.0f64..10.0) {
            if let Ok(r) = jarque_bera(&x) {
                let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let s = jarque_bera(&y).unwrap();
                prop_assert!((r.statistic - s.statistic).abs() <= 1e-10 * (1.0 + r.statistic));
            }
        }

        #[test]
        fn negation_flips_skew_keeps_kurtosis(x in prop::collection::vec(-5.0f64..5.0, 4..60)) {
            if let Ok(d) = describe(&x) {
                let y: Vec<f64> = x.iter().map(|v| -v).collect();
                let e = describe(&y).unwrap();
                prop_assert!((d.skewness + e.skewness).abs() < 1e-10);
                prop_assert!((d.kurtosis - e.kurtosis).abs() < 1e-10);
            }
        }

        #[test]
        fn corr_matrix_is_psd(cols in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 20), 2..6)) {
            if let Ok(c) = corr_matrix(&panel(&cols)) {
                for i in 0..c.nrows() {
                    for j in 0..c.ncols() {
                        prop_assert!((c[(i, j)] - c[(j, i)]).abs() < 1e-12);
                    }
                }
                let eig = c.symmetric_eigen().eigenvalues;
                prop_assert!(eig.iter().all(|&l| l >= -1e-10));
            }
        }
    }
}
