//! Dynamic factor model estimated by quasi-maximum likelihood.
//!
//! ```text
//! x_t = Λ f_t + ζ_t,               ζ_t ~ N(0, diag(σ²))
//! f_t = Ψ_1 f_{t-1} + ... + Ψ_p f_{t-p} + v_t,   v_t ~ N(0, Q)
//! ```
//!
//! The state is the companion stack `s_t = (f_t, ..., f_{t-p+1})` with
//! prior `N(0, 10 I)`. Estimation alternates a Kalman filter and
//! Rauch-Tung-Striebel smoother (E-step) with closed-form regression updates
//! of `Λ`, `Ψ` and `σ²` (M-step), starting from principal components. The
//! factor scale is pinned by `Q = I`; for one factor the sign is fixed when
//! the composite index is extracted. Missing observations (NaN entries) are
//! skipped row by row in both steps.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::ErrorCategory;
use crate::ingest::{Month, Panel};
use crate::stats::{autocorr1, describe, pearson, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum DfmError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("factor model needs at least 2 series, got {0}")]
    TooFewSeries(usize),
    #[error("requested {r} factors from {n} series")]
    TooManyFactors { r: usize, n: usize },
    #[error("need at least {required} observations, got {got}")]
    TooFewObservations { required: usize, got: usize },
    #[error("sample covariance is not finite")]
    NonFiniteCovariance,
    #[error("innovation covariance not positive definite at t = {t}")]
    NotPositiveDefinite { t: usize },
    #[error("log-likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    Diverged { iteration: usize, previous: f64, current: f64, trace: Vec<f64> },
    #[error("panel shape does not match the model")]
    Shape,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl DfmError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            DfmError::NotPositiveDefinite { .. } | DfmError::Diverged { .. } | DfmError::NonFiniteCovariance => {
                ErrorCategory::Numerical
            }
            _ => ErrorCategory::Precondition,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfmSpec {
    /// Number of factors.
    pub r: usize,
    /// VAR lag order.
    pub p: usize,
    pub max_iter: usize,
    /// Convergence threshold on `|Δ loglik| / (1 + |loglik|)`.
    pub tol: f64,
}

impl Default for DfmSpec {
    fn default() -> Self {
        Self { r: 1, p: 1, max_iter: 500, tol: 1e-6 }
    }
}

impl DfmSpec {
    pub fn validate(&self) -> Result<(), DfmError> {
        if self.r == 0 || self.p == 0 || self.max_iter == 0 {
            return Err(DfmError::InvalidSpec("r, p and max_iter must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(DfmError::InvalidSpec(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Lower bound on idiosyncratic variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Prior variance of the initial state.
pub const PRIOR_VARIANCE: f64 = 10.0;
/// A log-likelihood drop larger than this aborts estimation.
pub const DIVERGENCE_TOL: f64 = 1e-6;

/// State-space parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DfmParams {
    /// `n x r` loadings.
    pub lambda: DMatrix<f64>,
    /// `r x (r p)` VAR blocks `[Ψ_1 ... Ψ_p]`.
    pub psi: DMatrix<f64>,
    /// `r x r` factor innovation covariance.
    pub q: DMatrix<f64>,
    /// Idiosyncratic variances (diagonal of the `n x n` covariance).
    pub sigma_e: DVector<f64>,
}

impl DfmParams {
    pub fn n(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn r(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn p(&self) -> usize {
        self.psi.ncols() / self.r()
    }

    fn state_dim(&self) -> usize {
        self.psi.ncols()
    }

    fn transition(&self) -> DMatrix<f64> {
        let m = self.state_dim();
        let r = self.r();
        let mut a = DMatrix::zeros(m, m);
        a.view_mut((0, 0), (r, m)).copy_from(&self.psi);
        for i in r..m {
            a[(i, i - r)] = 1.0;
        }
        a
    }

    fn state_noise(&self) -> DMatrix<f64> {
        let m = self.state_dim();
        let r = self.r();
        let mut q = DMatrix::zeros(m, m);
        q.view_mut((0, 0), (r, r)).copy_from(&self.q);
        q
    }

    fn loading_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        let m = self.state_dim();
        let mut h = DMatrix::zeros(rows.len(), m);
        for (k, &i) in rows.iter().enumerate() {
            for j in 0..self.r() {
                h[(k, j)] = self.lambda[(i, j)];
            }
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub params: DfmParams,
    /// Log-likelihood at the start of each EM iteration; the last entry
    /// belongs to the returned parameters.
    pub loglik_path: Vec<f64>,
    pub converged: bool,
}

/// Smoothed moments of the companion state.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    /// `E[s_t | all data]`.
    pub means: Vec<DVector<f64>>,
    /// `Var[s_t | all data]`.
    pub covs: Vec<DMatrix<f64>>,
    /// `Cov[s_t, s_{t-1} | all data]` for `t = 1..T` (length `T - 1`).
    pub lag_covs: Vec<DMatrix<f64>>,
    /// `Var[s_t | data up to t]`.
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

impl SmootherOutput {
    /// Smoothed factors (`T x r`), the top block of each state.
    pub fn factors(&self, r: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.means.len(), r, |t, j| self.means[t][j])
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Kalman filter and RTS smoother. `x` is `T x n`; NaN entries are treated
/// as missing.
pub fn kalman_smooth(params: &DfmParams, x: &DMatrix<f64>) -> Result<SmootherOutput, DfmError> {
    let (t_len, n) = x.shape();
    if n != params.n() {
        return Err(DfmError::Shape);
    }
    let m = params.state_dim();
    let a = params.transition();
    let q = params.state_noise();

    let mut pred_means = Vec::with_capacity(t_len);
    let mut pred_covs = Vec::with_capacity(t_len);
    let mut filt_means: Vec<DVector<f64>> = Vec::with_capacity(t_len);
    let mut filt_covs: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    let mut loglik = 0.0;

    let mut s_pred = DVector::zeros(m);
    let mut p_pred = DMatrix::identity(m, m) * PRIOR_VARIANCE;
    for t in 0..t_len {
        let observed: Vec<usize> = (0..n).filter(|&i| x[(t, i)].is_finite()).collect();
        let (s_filt, p_filt) = if observed.is_empty() {
            (s_pred.clone(), p_pred.clone())
        } else {
            let h = params.loading_rows(&observed);
            let obs = DVector::from_iterator(observed.len(), observed.iter().map(|&i| x[(t, i)]));
            let innovation = obs - &h * &s_pred;
            let ph = &p_pred * h.transpose();
            let mut f = &h * &ph;
            for (k, &i) in observed.iter().enumerate() {
                f[(k, k)] += params.sigma_e[i];
            }
            symmetrize(&mut f);
            let chol = f.cholesky().ok_or(DfmError::NotPositiveDefinite { t })?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let solved = chol.solve(&innovation);
            loglik -= 0.5 * (observed.len() as f64 * (2.0 * PI).ln() + log_det + innovation.dot(&solved));
            let s_filt = &s_pred + &ph * solved;
            // P - P H' F^{-1} H P
            let mut p_filt = &p_pred - &ph * chol.solve(&ph.transpose());
            symmetrize(&mut p_filt);
            (s_filt, p_filt)
        };
        pred_means.push(s_pred.clone());
        pred_covs.push(p_pred.clone());
        s_pred = &a * &s_filt;
        p_pred = &a * &p_filt * a.transpose() + &q;
        symmetrize(&mut p_pred);
        filt_means.push(s_filt);
        filt_covs.push(p_filt);
    }

    let mut means = filt_means.clone();
    let mut covs = filt_covs.clone();
    let mut lag_covs = vec![DMatrix::zeros(m, m); t_len.saturating_sub(1)];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let p_next = &pred_covs[t + 1];
        // J_t = P_{t|t} A' P_{t+1|t}^{-1}
        let cross = &filt_covs[t] * a.transpose();
        let gain = match p_next.clone().cholesky() {
            Some(c) => c.solve(&cross.transpose()).transpose(),
            None => {
                let inv =
                    p_next.clone().pseudo_inverse(1e-12).map_err(|_| DfmError::NotPositiveDefinite { t: t + 1 })?;
                cross * inv
            }
        };
        means[t] = &filt_means[t] + &gain * (&means[t + 1] - &pred_means[t + 1]);
        let mut cov = &filt_covs[t] + &gain * (&covs[t + 1] - p_next) * gain.transpose();
        symmetrize(&mut cov);
        covs[t] = cov;
        lag_covs[t] = &covs[t + 1] * gain.transpose();
    }
    Ok(SmootherOutput { means, covs, lag_covs, filtered_covs: filt_covs, loglik })
}

/// Principal-components start: loadings are eigenvectors of the sample
/// covariance scaled by the square root of their eigenvalues, factors the
/// matching unit-variance projections. Each eigenvector is signed so that
/// its largest-magnitude entry is positive.
pub fn pca_init(x: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, DMatrix<f64>), DfmError> {
    let (t_len, n) = x.shape();
    if r == 0 || r > n {
        return Err(DfmError::TooManyFactors { r, n });
    }
    if t_len < 2 {
        return Err(DfmError::TooFewObservations { required: 2, got: t_len });
    }
    let means = DVector::from_iterator(n, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let cov = centered.transpose() * &centered / (t_len as f64 - 1.0);
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(DfmError::NonFiniteCovariance);
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut loadings = DMatrix::zeros(n, r);
    let mut factors = DMatrix::zeros(t_len, r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        let value = eig.eigenvalues[idx].max(0.0);
        loadings.set_column(k, &(&v * value.sqrt()));
        let proj = x * &v;
        if value > 0.0 {
            factors.set_column(k, &(proj / value.sqrt()));
        }
    }
    Ok((loadings, factors))
}

/// Least-squares VAR(p) on factor paths: returns `[Ψ_1 ... Ψ_p]` and the
/// residual covariance.
fn var_ols(f: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (t_len, r) = f.shape();
    let rows = t_len - p;
    let y = DMatrix::from_fn(rows, r, |t, j| f[(t + p, j)]);
    let z = DMatrix::from_fn(rows, r * p, |t, c| f[(t + p - 1 - c / r, c % r)]);
    let ztz = z.transpose() * &z;
    let zty = z.transpose() * &y;
    let coef = ztz.pseudo_inverse(1e-12).map(|inv| inv * zty).unwrap_or_else(|_| DMatrix::zeros(r * p, r));
    let resid = y - &z * &coef;
    let cov = resid.transpose() * &resid / rows as f64;
    (coef.transpose(), cov)
}

/// Initial parameters from principal components, rescaled so that the
/// factor innovations have identity covariance.
fn initial_params(x: &DMatrix<f64>, spec: &DfmSpec) -> Result<DfmParams, DfmError> {
    let (t_len, n) = x.shape();
    let (loadings, factors) = pca_init(x, spec.r)?;
    let (psi, resid_cov) = var_ols(&factors, spec.p);
    let r = spec.r;

    // f = L g with L L' = resid_cov makes g's innovations white.
    let chol = resid_cov.clone().cholesky();
    let (l, l_inv) = match chol.as_ref().and_then(|c| c.l().try_inverse().map(|inv| (c.l(), inv))) {
        Some(pair) => pair,
        None => (DMatrix::identity(r, r), DMatrix::identity(r, r)),
    };
    let lambda = &loadings * &l;
    let mut blocks = DMatrix::zeros(r, r * spec.p);
    for k in 0..spec.p {
        let block = &l_inv * psi.view((0, k * r), (r, r)) * &l;
        blocks.view_mut((0, k * r), (r, r)).copy_from(&block);
    }
    let fitted = &factors * loadings.transpose();
    let sigma_e = DVector::from_fn(n, |i, _| {
        let resid: f64 = (0..t_len).map(|t| (x[(t, i)] - fitted[(t, i)]).powi(2)).sum();
        (resid / t_len as f64).max(VARIANCE_FLOOR)
    });
    Ok(DfmParams { lambda, psi: blocks, q: DMatrix::identity(r, r), sigma_e })
}

fn m_step(x: &DMatrix<f64>, sm: &SmootherOutput, params: &DfmParams) -> DfmParams {
    let (t_len, n) = x.shape();
    let r = params.r();
    let m = params.state_dim();

    // Loadings and idiosyncratic variances, series by series over the
    // periods where each is observed.
    let mut lambda = DMatrix::zeros(n, r);
    let mut sigma_e = DVector::zeros(n);
    for i in 0..n {
        let mut sxf = DVector::zeros(r);
        let mut sff = DMatrix::zeros(r, r);
        let mut count = 0usize;
        for t in (0..t_len).filter(|&t| x[(t, i)].is_finite()) {
            let f = sm.means[t].rows(0, r);
            sxf += f * x[(t, i)];
            sff += f * f.transpose() + sm.covs[t].view((0, 0), (r, r));
            count += 1;
        }
        if count == 0 {
            lambda.set_row(i, &params.lambda.row(i));
            sigma_e[i] = params.sigma_e[i];
            continue;
        }
        let row = match sff.clone().cholesky() {
            Some(c) => c.solve(&sxf),
            None => sff.pseudo_inverse(1e-12).map(|inv| inv * &sxf).unwrap_or_else(|_| DVector::zeros(r)),
        };
        lambda.set_row(i, &row.transpose());
        let mut ss = 0.0;
        for t in (0..t_len).filter(|&t| x[(t, i)].is_finite()) {
            let f = sm.means[t].rows(0, r);
            let resid = x[(t, i)] - row.dot(&f);
            let spread = (row.transpose() * sm.covs[t].view((0, 0), (r, r)) * &row)[(0, 0)];
            ss += resid * resid + spread;
        }
        sigma_e[i] = (ss / count as f64).max(VARIANCE_FLOOR);
    }

    // VAR blocks from the smoothed cross moments; Q stays fixed.
    let psi = if t_len > 1 {
        let mut s10 = DMatrix::zeros(r, m);
        let mut s00 = DMatrix::zeros(m, m);
        for t in 1..t_len {
            let cur = sm.means[t].rows(0, r);
            let prev = &sm.means[t - 1];
            s10 += cur * prev.transpose() + sm.lag_covs[t - 1].view((0, 0), (r, m));
            s00 += prev * prev.transpose() + &sm.covs[t - 1];
        }
        match s00.clone().cholesky() {
            Some(c) => c.solve(&s10.transpose()).transpose(),
            None => s00.pseudo_inverse(1e-12).map(|inv| s10 * inv).unwrap_or_else(|_| params.psi.clone()),
        }
    } else {
        params.psi.clone()
    };
    DfmParams { lambda, psi, q: params.q.clone(), sigma_e }
}

fn check_panel(x: &DMatrix<f64>, spec: &DfmSpec) -> Result<(), DfmError> {
    spec.validate()?;
    let (t_len, n) = x.shape();
    if n < 2 {
        return Err(DfmError::TooFewSeries(n));
    }
    if spec.r > n {
        return Err(DfmError::TooManyFactors { r: spec.r, n });
    }
    let required = (spec.r * spec.p + 2).max(spec.p + 3);
    if t_len < required {
        return Err(DfmError::TooFewObservations { required, got: t_len });
    }
    Ok(())
}

/// EM estimation on a `T x n` data matrix (NaN marks missing entries).
///
/// The principal-components start needs complete rows, so missing entries
/// are zero-filled (the column mean of standardized data) for
/// initialization only.
pub fn fit_dfm_matrix(x: &DMatrix<f64>, spec: &DfmSpec) -> Result<FactorModel, DfmError> {
    check_panel(x, spec)?;
    let filled = x.map(|v| if v.is_finite() { v } else { 0.0 });
    let mut params = initial_params(&filled, spec)?;
    let mut path: Vec<f64> = Vec::new();
    for iteration in 0..spec.max_iter {
        let sm = kalman_smooth(&params, x)?;
        let ll = sm.loglik;
        if let Some(&previous) = path.last() {
            if ll < previous - DIVERGENCE_TOL {
                path.push(ll);
                return Err(DfmError::Diverged { iteration, previous, current: ll, trace: path });
            }
            path.push(ll);
            if (ll - previous).abs() / (1.0 + ll.abs()) < spec.tol {
                return Ok(FactorModel { params, loglik_path: path, converged: true });
            }
        } else {
            path.push(ll);
        }
        if iteration + 1 == spec.max_iter {
            break;
        }
        params = m_step(x, &sm, &params);
    }
    Ok(FactorModel { params, loglik_path: path, converged: false })
}

/// EM estimation on a standardized panel.
pub fn fit_dfm(x: &Panel, spec: &DfmSpec) -> Result<FactorModel, DfmError> {
    fit_dfm_matrix(x.data(), spec)
}

/// The smoothed common factor path.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeIndex {
    pub dates: Vec<Month>,
    pub values: Vec<f64>,
}

/// Smoothed first factor, signed so that the average loading is
/// nonnegative (higher input levels push the index up).
pub fn extract_composite(model: &FactorModel, x: &Panel) -> Result<CompositeIndex, DfmError> {
    let sm = kalman_smooth(&model.params, x.data())?;
    let sign = if model.params.lambda.column(0).mean() < 0.0 { -1.0 } else { 1.0 };
    let values = sm.means.iter().map(|s| sign * s[0]).collect();
    Ok(CompositeIndex { dates: x.dates().to_vec(), values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDiagnostics {
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// Pearson correlation with each input series.
    pub correlations: Vec<(String, f64)>,
    /// First-order autocorrelation of the index.
    pub rho1: f64,
}

pub fn composite_diagnostics(cuci: &CompositeIndex, x: &Panel) -> Result<CompositeDiagnostics, DfmError> {
    if cuci.dates != x.dates() {
        return Err(DfmError::Shape);
    }
    let d = describe(&cuci.values)?;
    let correlations = (0..x.ncols())
        .map(|j| Ok((x.ids()[j].clone(), pearson(&cuci.values, x.column(j))?)))
        .collect::<Result<_, StatsError>>()?;
    Ok(CompositeDiagnostics {
        mean: d.mean,
        std_dev: d.std_dev,
        skewness: d.skewness,
        kurtosis: d.kurtosis,
        correlations,
        rho1: autocorr1(&cuci.values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn one_factor(seed: u64, t_len: usize, n: usize, phi: f64, noise_sd: f64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Vec::with_capacity(t_len);
        let mut prev = 0.0;
        for _ in 0..t_len {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = phi * prev + e;
            f.push(prev);
        }
        let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let x = DMatrix::from_fn(t_len, n, |t, i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            lambda[i] * f[t] + noise_sd * e
        });
        (x, f, lambda)
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        pearson(a, b).unwrap()
    }

    #[test]
    fn pca_recovers_rank_one() {
        let f: Vec<f64> = (0..50).map(|t| (t as f64 * 0.37).sin()).collect();
        let mean = f.iter().sum::<f64>() / 50.0;
        let lambda = [1.0, -0.5, 2.0, 0.7];
        let x = DMatrix::from_fn(50, 4, |t, i| lambda[i] * (f[t] - mean));
        let (l, fac) = pca_init(&x, 1).unwrap();
        let recon = &fac * l.transpose();
        assert!((recon - &x).abs().max() < 1e-10);
        let cov = x.transpose() * &x;
        let eig = cov.symmetric_eigen().eigenvalues;
        let total: f64 = eig.iter().sum();
        assert_abs_diff_eq!(eig.iter().cloned().fold(0.0, f64::max) / total, 1.0, epsilon = 1e-12);
        // Largest-magnitude loading is positive.
        assert!(l[(2, 0)] > 0.0);
    }

    #[test]
    fn pca_isotropic_noise_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(2000, 6, |_, _| StandardNormal.sample(&mut rng));
        let (l, _) = pca_init(&x, 1).unwrap();
        let top = l.column(0).norm_squared();
        let total: f64 = (0..6).map(|j| crate::stats::std_dev(x.column(j).as_slice()).powi(2)).sum();
        let share = top / total;
        // Largest of six eigenvalues of a Wishart(2000) sample: a little
        // above 1/6.
        assert!(share > 1.0 / 6.0 && share < 0.2, "{share}");
    }

    #[test]
    fn pca_rejects_too_many_factors() {
        let x = DMatrix::from_element(10, 3, 1.0);
        assert_eq!(pca_init(&x, 4).unwrap_err(), DfmError::TooManyFactors { r: 4, n: 3 });
    }

    #[test]
    fn static_model_smoother_is_gls_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 5;
        let sigma2 = 0.7;
        let lambda = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.5));
        let params = DfmParams {
            lambda: DMatrix::from_column_slice(n, 1, lambda.as_slice()),
            psi: DMatrix::zeros(1, 1),
            q: DMatrix::identity(1, 1),
            sigma_e: DVector::from_element(n, sigma2),
        };
        let x = DMatrix::from_fn(30, n, |_, _| StandardNormal.sample(&mut rng));
        let sm = kalman_smooth(&params, &x).unwrap();
        for t in 0..30 {
            // With Ψ = 0 the factors are independent with prior variance
            // 10 at t = 0 and Q = 1 afterwards.
            let prior = if t == 0 { PRIOR_VARIANCE } else { 1.0 };
            let xt = x.row(t).transpose();
            let expected = lambda.dot(&xt) / (lambda.norm_squared() + sigma2 / prior);
            assert_abs_diff_eq!(sm.means[t][0], expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn single_observation_loglik() {
        let params = DfmParams {
            lambda: DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
            psi: DMatrix::from_element(1, 1, 0.5),
            q: DMatrix::identity(1, 1),
            sigma_e: DVector::from_column_slice(&[0.3, 0.2]),
        };
        let x = DMatrix::from_row_slice(1, 2, &[0.4, -0.1]);
        let sm = kalman_smooth(&params, &x).unwrap();
        // Marginal x ~ N(0, 10 λλ' + diag(σ²)).
        let cov = &params.lambda * params.lambda.transpose() * PRIOR_VARIANCE + DMatrix::from_diagonal(&params.sigma_e);
        let v = x.row(0).transpose();
        let quad = (v.transpose() * cov.clone().try_inverse().unwrap() * &v)[(0, 0)];
        let expected = -0.5 * (2.0 * (2.0 * PI).ln() + cov.determinant().ln() + quad);
        assert_abs_diff_eq!(sm.loglik, expected, epsilon = 1e-12);
        assert_eq!(sm.means.len(), 1);
        assert!(sm.lag_covs.is_empty());
    }

    #[test]
    fn smoothed_covariance_below_filtered() {
        let (x, _, _) = one_factor(3, 80, 4, 0.7, 1.0);
        let model = fit_dfm_matrix(&x, &DfmSpec { max_iter: 5, ..Default::default() }).unwrap();
        let sm = kalman_smooth(&model.params, &x).unwrap();
        for (s, f) in sm.covs.iter().zip(&sm.filtered_covs) {
            let diff = f - s;
            assert!(diff.symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-10));
        }
    }

    #[test]
    fn em_is_monotone_and_recovers_factor() {
        let (x, f, _) = one_factor(8, 200, 6, 0.8, 1.0);
        let model = fit_dfm_matrix(&x, &DfmSpec::default()).unwrap();
        for w in model.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
        }
        let sm = kalman_smooth(&model.params, &x).unwrap();
        let fhat: Vec<f64> = sm.means.iter().map(|s| s[0]).collect();
        assert!(corr(&fhat, &f).abs() > 0.95);
    }

    #[test]
    fn missing_entries_are_skipped() {
        let (mut x, f, _) = one_factor(10, 120, 5, 0.8, 0.7);
        for t in (0..120).step_by(7) {
            x[(t, t % 5)] = f64::NAN;
        }
        let model = fit_dfm_matrix(&x, &DfmSpec::default()).unwrap();
        for w in model.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let sm = kalman_smooth(&model.params, &x).unwrap();
        let fhat: Vec<f64> = sm.means.iter().map(|s| s[0]).collect();
        assert!(corr(&fhat, &f).abs() > 0.95);
    }

    #[test]
    fn var2_companion_form() {
        let (x, f, _) = one_factor(14, 150, 4, 0.6, 0.8);
        let model = fit_dfm_matrix(&x, &DfmSpec { p: 2, ..Default::default() }).unwrap();
        assert_eq!(model.params.psi.shape(), (1, 2));
        for w in model.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        let sm = kalman_smooth(&model.params, &x).unwrap();
        let fhat: Vec<f64> = sm.means.iter().map(|s| s[0]).collect();
        assert!(corr(&fhat, &f).abs() > 0.9);
    }

    #[test]
    fn two_factor_fit_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = DMatrix::from_fn(100, 6, |_, _| StandardNormal.sample(&mut rng));
        let model = fit_dfm_matrix(&x, &DfmSpec { r: 2, max_iter: 50, ..Default::default() }).unwrap();
        for w in model.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        assert!(model.params.sigma_e.iter().all(|&s| s >= VARIANCE_FLOOR));
    }

    #[test]
    fn preconditions() {
        let x = DMatrix::from_element(50, 1, 0.0);
        assert_eq!(fit_dfm_matrix(&x, &DfmSpec::default()).unwrap_err(), DfmError::TooFewSeries(1));
        let x = DMatrix::from_element(50, 2, 0.0);
        assert!(matches!(
            fit_dfm_matrix(&x, &DfmSpec { r: 3, ..Default::default() }),
            Err(DfmError::TooManyFactors { .. })
        ));
        assert!(matches!(
            fit_dfm_matrix(&x, &DfmSpec { tol: 0.0, ..Default::default() }),
            Err(DfmError::InvalidSpec(_))
        ));
    }

    #[test]
    fn max_iter_reached_is_not_converged() {
        let (x, _, _) = one_factor(4, 100, 4, 0.8, 1.0);
        let model = fit_dfm_matrix(&x, &DfmSpec { max_iter: 2, tol: 1e-14, ..Default::default() }).unwrap();
        assert!(!model.converged);
        assert_eq!(model.loglik_path.len(), 2);
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, _, _) = one_factor(5, 100, 5, 0.8, 1.0);
        let a = fit_dfm_matrix(&x, &DfmSpec::default()).unwrap();
        let b = fit_dfm_matrix(&x, &DfmSpec::default()).unwrap();
        assert_eq!(a, b);
    }

    fn panel_of(x: &DMatrix<f64>) -> Panel {
        let start = Month::new(2000, 1).unwrap();
        let dates = (0..x.nrows() as i64).map(|k| start.offset(k)).collect();
        Panel::new((0..x.ncols()).map(|j| format!("u{j}")).collect(), dates, x.clone()).unwrap()
    }

    #[test]
    fn composite_sign_rule() {
        let (x, _, _) = one_factor(7, 100, 4, 0.8, 0.5);
        let panel = panel_of(&x);
        let mut model = fit_dfm(&panel, &DfmSpec::default()).unwrap();
        assert!(model.params.lambda.iter().all(|&l| l > 0.0));
        let sm = kalman_smooth(&model.params, &x).unwrap();
        let positive = extract_composite(&model, &panel).unwrap();
        let raw: Vec<f64> = sm.means.iter().map(|s| s[0]).collect();
        assert_eq!(positive.values, raw);

        model.params.lambda.neg_mut();
        let flipped = extract_composite(&model, &panel).unwrap();
        let negated: Vec<f64> = sm.means.iter().map(|s| s[0]).collect();
        // Flipping Λ flips the smoothed factor; the sign rule flips it back.
        for (a, b) in flipped.values.iter().zip(&negated) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagnostics_layout() {
        let (mut x, _, lambda) = one_factor(9, 150, 4, 0.8, 0.8);
        // One series loads negatively.
        for t in 0..150 {
            x[(t, 3)] = -x[(t, 3)];
        }
        let panel = panel_of(&x);
        let model = fit_dfm(&panel, &DfmSpec::default()).unwrap();
        let cuci = extract_composite(&model, &panel).unwrap();
        let d = composite_diagnostics(&cuci, &panel).unwrap();
        assert_eq!(d.correlations.len(), 4);
        assert!(lambda.iter().all(|&l| l > 0.0));
        for (j, (_, c)) in d.correlations.iter().enumerate() {
            assert_eq!(*c > 0.0, j != 3, "{:?}", d.correlations);
        }
        assert!(d.rho1 > 0.5);
        let self_corr = pearson(&cuci.values, &cuci.values).unwrap();
        assert_abs_diff_eq!(self_corr, 1.0, epsilon = 1e-12);
    }
}
