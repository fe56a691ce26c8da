//! BDS test of the i.i.d. hypothesis.
//!
//! With `N_m = T - m + 1` embedded vectors, the correlation integral
//!
//! ```text
//! C_m(ε) = 2 / (N_m (N_m - 1)) Σ_{s<t} Π_{j<m} 1{|x_{s+j} - x_{t+j}| ≤ ε}
//! ```
//!
//! is compared with `C_1(ε)^m`, where `C_1` is evaluated on the last `N_m`
//! observations. The difference is standardized by the asymptotic variance
//!
//! ```text
//! σ_m² = 4 [K^m + 2 Σ_{j=1}^{m-1} K^{m-j} C^{2j} + (m-1)² C^{2m} - m² K C^{2m-2}]
//! ```
//!
//! built from the full-sample `C = C_1(ε)` and the triple-coincidence
//! frequency `K`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ingest::{MonthlySeries, ReturnSeries};
use crate::stats::{normal_two_sided_p, std_dev};

#[derive(Debug, Error, PartialEq)]
pub enum BdsError {
    #[error("series of length {len} too short for embedding dimension {m} (need {required})")]
    TooShort { len: usize, m: usize, required: usize },
    #[error("embedding dimension must be at least {min}, got {m}")]
    InvalidDimension { m: usize, min: usize },
    #[error("distance threshold must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("invalid BDS configuration: {0}")]
    InvalidConfig(String),
    #[error("non-positive asymptotic variance ({variance}) at m = {m}, eps = {eps}")]
    DegenerateVariance { m: usize, eps: f64, variance: f64 },
    #[error("series are not date-aligned")]
    Misaligned,
    #[error("OLS design is singular")]
    SingularDesign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdsConfig {
    dims: Vec<usize>,
    eps_multipliers: Vec<f64>,
    /// Include an intercept in the residual regression.
    pub intercept: bool,
}

impl BdsConfig {
    pub fn new(dims: Vec<usize>, eps_multipliers: Vec<f64>, intercept: bool) -> Result<Self, BdsError> {
        if dims.is_empty() {
            return Err(BdsError::InvalidConfig("no embedding dimensions".into()));
        }
        if let Some(&m) = dims.iter().find(|&&m| m < 2) {
            return Err(BdsError::InvalidDimension { m, min: 2 });
        }
        if eps_multipliers.is_empty() {
            return Err(BdsError::InvalidConfig("no distance multipliers".into()));
        }
        if let Some(&e) = eps_multipliers.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(BdsError::InvalidEpsilon(e));
        }
        Ok(Self { dims, eps_multipliers, intercept })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn eps_multipliers(&self) -> &[f64] {
        &self.eps_multipliers
    }
}

impl Default for BdsConfig {
    fn default() -> Self {
        Self { dims: vec![2, 3, 4, 5], eps_multipliers: vec![1.0, 1.5], intercept: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdsResult {
    pub m: usize,
    pub eps: f64,
    /// `C_1(ε)` over the last `N_m` observations.
    pub c1: f64,
    pub cm: f64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Upper-triangular closeness indicators `|x_s - x_t| ≤ ε`, stored per lag
/// so that runs along each diagonal are contiguous.
struct Closeness {
    n: usize,
    /// `diag[d - 1][s]` is the indicator for the pair `(s, s + d)`.
    diag: Vec<Vec<bool>>,
}

impl Closeness {
    fn new(x: &[f64], eps: f64) -> Self {
        let n = x.len();
        let diag = (1..n).map(|d| (0..n - d).map(|s| (x[s] - x[s + d]).abs() <= eps).collect()).collect();
        Self { n, diag }
    }

    /// Number of pairs `s < t < N_m` of m-histories that are all close,
    /// restricted to vectors starting at `offset` or later.
    fn count(&self, m: usize, offset: usize) -> u64 {
        let last = self.n - m; // largest start index of an m-history
        let mut count = 0u64;
        for d in 1..=last.saturating_sub(offset) {
            let row = &self.diag[d - 1];
            let mut run = 0usize;
            // Pair (s, s + d) with s in [offset, last - d]; its m-history
            // covers indicators at s..s+m-1.
            for (pos, &close) in row.iter().enumerate().take(last - d + m).skip(offset) {
                run = if close { run + 1 } else { 0 };
                if run >= m && pos + 1 >= offset + m {
                    count += 1;
                }
            }
        }
        count
    }

    /// Frequency of ordered distinct triples `(s, t, r)` with both `t` and
    /// `r` close to `s`.
    fn triple_frequency(&self) -> f64 {
        let n = self.n;
        let mut row_sums = vec![0u64; n];
        for (d0, row) in self.diag.iter().enumerate() {
            for (s, &close) in row.iter().enumerate() {
                if close {
                    row_sums[s] += 1;
                    row_sums[s + d0 + 1] += 1;
                }
            }
        }
        let triples: f64 = row_sums.iter().map(|&r| (r * r.saturating_sub(1)) as f64).sum();
        triples / (n as f64 * (n as f64 - 1.0) * (n as f64 - 2.0))
    }
}

fn pair_fraction(count: u64, vectors: usize) -> f64 {
    2.0 * count as f64 / (vectors as f64 * (vectors as f64 - 1.0))
}

/// `C_m(ε)` with the closed (`≤ ε`) ball.
pub fn correlation_integral(x: &[f64], m: usize, eps: f64) -> Result<f64, BdsError> {
    if m < 1 {
        return Err(BdsError::InvalidDimension { m, min: 1 });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BdsError::InvalidEpsilon(eps));
    }
    if x.len() < m + 2 {
        return Err(BdsError::TooShort { len: x.len(), m, required: m + 2 });
    }
    let c = Closeness::new(x, eps);
    Ok(pair_fraction(c.count(m, 0), x.len() - m + 1))
}

/// Minimum series length for the asymptotic statistic.
pub const MIN_BDS_LEN: usize = 50;

fn statistic_from(c: &Closeness, m: usize, eps: f64) -> Result<BdsResult, BdsError> {
    let n = c.n;
    let vectors = n - m + 1;
    let cm = pair_fraction(c.count(m, 0), vectors);
    let c1 = pair_fraction(c.count(1, m - 1), vectors);
    let c_full = pair_fraction(c.count(1, 0), n);
    let k = c.triple_frequency();

    let mf = m as f64;
    let cross: f64 = (1..m).map(|j| k.powi((m - j) as i32) * c_full.powi(2 * j as i32)).sum();
    let variance = 4.0
        * (k.powi(m as i32) + 2.0 * cross + (mf - 1.0).powi(2) * c_full.powi(2 * m as i32)
            - mf * mf * k * c_full.powi(2 * m as i32 - 2));
    if variance.is_nan() || variance <= 0.0 || variance.is_infinite() {
        return Err(BdsError::DegenerateVariance { m, eps, variance });
    }
    let statistic = (vectors as f64).sqrt() * (cm - c1.powi(m as i32)) / variance.sqrt();
    Ok(BdsResult { m, eps, c1, cm, statistic, p_value: normal_two_sided_p(statistic) })
}

pub fn bds_statistic(x: &[f64], m: usize, eps: f64) -> Result<BdsResult, BdsError> {
    if m < 2 {
        return Err(BdsError::InvalidDimension { m, min: 2 });
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BdsError::InvalidEpsilon(eps));
    }
    let required = MIN_BDS_LEN.max(m + 2);
    if x.len() < required {
        return Err(BdsError::TooShort { len: x.len(), m, required });
    }
    statistic_from(&Closeness::new(x, eps), m, eps)
}

/// Runs the statistic over the `(ε, m)` grid, ε outer. Each ε is the
/// multiplier times the sample standard deviation of `x`.
pub fn bds_grid(x: &[f64], cfg: &BdsConfig) -> Result<Vec<BdsResult>, BdsError> {
    let max_m = cfg.dims.iter().copied().max().unwrap_or(2);
    let required = MIN_BDS_LEN.max(max_m + 2);
    if x.len() < required {
        return Err(BdsError::TooShort { len: x.len(), m: max_m, required });
    }
    let sd = std_dev(x);
    let mut out = Vec::with_capacity(cfg.dims.len() * cfg.eps_multipliers.len());
    for &mult in &cfg.eps_multipliers {
        let eps = mult * sd;
        if eps.is_nan() || eps <= 0.0 {
            return Err(BdsError::InvalidEpsilon(eps));
        }
        let closeness = Closeness::new(x, eps);
        for &m in &cfg.dims {
            out.push(statistic_from(&closeness, m, eps)?);
        }
    }
    Ok(out)
}

/// Residuals of `gr_t = [c +] β uci_t + α gr_{t-1} + ε_t` by least squares.
pub fn ols_residuals(gr: &ReturnSeries, uci: &ReturnSeries, intercept: bool) -> Result<Vec<f64>, BdsError> {
    if gr.dates() != uci.dates() {
        return Err(BdsError::Misaligned);
    }
    let (g, u) = (gr.values(), uci.values());
    let rows = g.len().saturating_sub(1);
    let offset = usize::from(intercept);
    let x = DMatrix::from_fn(rows, 2 + offset, |r, c| match c + (1 - offset) {
        0 => 1.0,
        1 => u[r + 1],
        _ => g[r],
    });
    let y = DVector::from_column_slice(&g[1..]);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let beta = xtx.cholesky().ok_or(BdsError::SingularDesign)?.solve(&xty);
    Ok((y - x * beta).iter().copied().collect())
}

/// Minimum aligned length for the residual-based test.
pub const MIN_RESIDUAL_LEN: usize = 60;

/// BDS over the configured grid on the residuals of the lagged OLS model.
pub fn bds_on_ols_residuals(
    gr: &ReturnSeries,
    uci: &ReturnSeries,
    cfg: &BdsConfig,
) -> Result<Vec<BdsResult>, BdsError> {
    if gr.len() < MIN_RESIDUAL_LEN {
        return Err(BdsError::TooShort {
            len: gr.len(),
            m: cfg.dims.iter().copied().max().unwrap_or(2),
            required: MIN_RESIDUAL_LEN,
        });
    }
    let residuals = ols_residuals(gr, uci, cfg.intercept)?;
    bds_grid(&residuals, cfg)
}

pub fn significance_stars(p_value: f64) -> &'static str {
    if p_value < 0.01 {
        "***"
    } else if p_value < 0.05 {
        "**"
    } else if p_value < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Table layout: one row per (ε block, m), one column per series; cells are
/// the statistic at 2 decimals followed by significance stars. Every column
/// must come from [`bds_grid`] with the same configuration.
pub fn write_bds_table<W: Write>(
    cfg: &BdsConfig,
    columns: &[(String, Vec<BdsResult>)],
    mut out: W,
) -> std::io::Result<()> {
    write!(out, "block,eps_multiplier,m")?;
    for (id, _) in columns {
        write!(out, ",{id}")?;
    }
    writeln!(out)?;
    let mut row = 0;
    for (b, mult) in cfg.eps_multipliers.iter().enumerate() {
        for m in &cfg.dims {
            write!(out, "{},{},{}", b + 1, mult, m)?;
            for (_, results) in columns {
                let r = &results[row];
                write!(out, ",{:.2}{}", r.statistic, significance_stars(r.p_value))?;
            }
            writeln!(out)?;
            row += 1;
        }
    }
    Ok(())
}
