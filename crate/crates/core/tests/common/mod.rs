//! Independent oracles and synthetic data generators shared by the
//! integration and acceptance suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qqr_core::{Month, ReturnSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn series(id: &str, values: Vec<f64>) -> ReturnSeries {
    ReturnSeries::from_values(id, Month::new(1990, 1).unwrap(), values).unwrap()
}

fn check_loss(u: f64, theta: f64) -> f64 {
    if u < 0.0 {
        (theta - 1.0) * u
    } else {
        theta * u
    }
}

/// Minimum weighted check loss over every basic solution: fits that pass
/// exactly through some `k` observations. The optimum of a quantile
/// regression is attained at one of them.
pub fn vertex_enumeration_min(y: &[f64], x: &DMatrix<f64>, w: &[f64], theta: f64) -> f64 {
    let (n, k) = x.shape();
    let support: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    if support.len() < k {
        return best;
    }
    loop {
        let rows: Vec<usize> = idx.iter().map(|&p| support[p]).collect();
        let a = x.select_rows(rows.iter());
        let rhs = DVector::from_iterator(k, rows.iter().map(|&i| y[i]));
        if a.determinant().abs() > 1e-12 {
            if let Some(b) = a.lu().solve(&rhs) {
                let obj: f64 = (0..n)
                    .map(|i| w[i] * check_loss(y[i] - (0..k).map(|c| x[(i, c)] * b[c]).sum::<f64>(), theta))
                    .sum();
                best = best.min(obj);
            }
        }
        // Next k-combination of 0..support.len().
        let m = support.len();
        let mut pos = k;
        while pos > 0 && idx[pos - 1] == m - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            return best;
        }
        idx[pos - 1] += 1;
        for q in pos..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Textbook double loop over embedded vector pairs.
pub fn naive_correlation_integral(x: &[f64], m: usize, eps: f64) -> f64 {
    let n = x.len() - m + 1;
    let mut count = 0u64;
    for s in 0..n {
        for t in (s + 1)..n {
            if (0..m).all(|j| (x[s + j] - x[t + j]).abs() <= eps) {
                count += 1;
            }
        }
    }
    2.0 * count as f64 / (n as f64 * (n as f64 - 1.0))
}

pub fn logistic_map(n: usize, x0: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(n);
    let mut v = x0;
    for _ in 0..n {
        x.push(v);
        v = 4.0 * v * (1.0 - v);
    }
    x
}

/// `gr_t = a + b uci_t + sigma e_t`, both standard normal.
pub fn linear_homoskedastic(seed: u64, n: usize, a: f64, b: f64, sigma: f64) -> (ReturnSeries, ReturnSeries) {
    let mut r = rng(seed);
    let uci = normals(&mut r, n);
    let gr = uci
        .iter()
        .map(|u| {
            let e: f64 = StandardNormal.sample(&mut r);
            a + b * u + sigma * e
        })
        .collect();
    (series("gr", gr), series("uci", uci))
}

/// `gr_t = exp(uci_t) e_t`: the conditional θ-quantile slope in `uci` has
/// the sign of `Φ⁻¹(θ)`.
pub fn location_scale(seed: u64, n: usize) -> (ReturnSeries, ReturnSeries) {
    let mut r = rng(seed);
    let uci = normals(&mut r, n);
    let gr = uci
        .iter()
        .map(|u| {
            let e: f64 = StandardNormal.sample(&mut r);
            u.exp() * e
        })
        .collect();
    (series("gr", gr), series("uci", uci))
}

/// One-factor panel `x_it = λ_i f_t + e_it` with AR(1) factor of
/// coefficient `phi`, unit factor variance, and per-series signal-to-noise
/// ratio `snr`. Returns the `T x n` panel, the true factor and the
/// loadings.
pub fn one_factor_panel(seed: u64, t: usize, n: usize, phi: f64, snr: f64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let innovation_sd = (1.0 - phi * phi).sqrt();
    let mut f = Vec::with_capacity(t);
    let mut prev: f64 = StandardNormal.sample(&mut r);
    for _ in 0..t {
        let e: f64 = StandardNormal.sample(&mut r);
        prev = phi * prev + innovation_sd * e;
        f.push(prev);
    }
    let loadings: Vec<f64> = (0..n).map(|_| r.random_range(0.5..1.5)).collect();
    let mut x = DMatrix::zeros(t, n);
    for i in 0..n {
        let noise_sd = loadings[i] / snr.sqrt();
        for s in 0..t {
            let e: f64 = StandardNormal.sample(&mut r);
            x[(s, i)] = loadings[i] * f[s] + noise_sd * e;
        }
    }
    (x, f, loadings)
}
