//! Quantile-on-quantile regression.
//!
//! For a response quantile θ and a regressor quantile τ, the cell fit is the
//! weighted quantile regression
//!
//! ```text
//! min Σ_t ρ_θ(gr_t - β0 - β1 (uci_t - q_τ) - α gr_{t-1}) · φ((F_n(uci_t) - τ) / h)
//! ```
//!
//! where `q_τ` is the sample τ-quantile of the regressor, `F_n` the strict
//! empirical CDF and `φ` the standard normal density. The ECDF and `q_τ` are
//! computed over the estimation sample (after dropping the first observation
//! when the lag term is present).

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::{fmt_fixed, fmt_sig};
use crate::ingest::{MonthlySeries, ReturnSeries};
use crate::quantreg::{fit_qr, solve_wqr, FitStatus, QuantRegError, QuantileLevel, WqrProblem};
use crate::stats::{empirical_cdf_at_samples, normal_pdf, sample_quantile};

#[derive(Debug, Error, PartialEq)]
pub enum QqrError {
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),
    #[error("series are not date-aligned")]
    Misaligned,
    #[error("need at least {required} observations after lag construction, got {got}")]
    TooFew { required: usize, got: usize },
    #[error("no converged cells for theta = {0}")]
    NoConvergedCells(f64),
    #[error(transparent)]
    QuantReg(#[from] QuantRegError),
}

/// Gaussian kernel on ECDF distance with bandwidth `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self, QqrError> {
        if bandwidth > 0.0 && bandwidth.is_finite() {
            Ok(Self { bandwidth })
        } else {
            Err(QqrError::InvalidBandwidth(bandwidth))
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { bandwidth: 0.05 }
    }
}

/// Kernel plus the choice of including `gr_{t-1}` as a regressor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QqrSpec {
    pub kernel: KernelSpec,
    pub include_lag: bool,
}

impl Default for QqrSpec {
    fn default() -> Self {
        Self { kernel: KernelSpec::default(), include_lag: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    thetas: Vec<f64>,
    taus: Vec<f64>,
}

fn check_levels(name: &str, levels: &[f64]) -> Result<(), QqrError> {
    if levels.is_empty() {
        return Err(QqrError::InvalidGrid(format!("{name} is empty")));
    }
    if let Some(v) = levels.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(QqrError::InvalidGrid(format!("{name} value {v} outside (0, 1)")));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(QqrError::InvalidGrid(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

impl QuantileGrid {
    pub fn new(thetas: Vec<f64>, taus: Vec<f64>) -> Result<Self, QqrError> {
        check_levels("thetas", &thetas)?;
        check_levels("taus", &taus)?;
        Ok(Self { thetas, taus })
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn default_thetas() -> Vec<f64> {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    }

    pub fn default_taus() -> Vec<f64> {
        (1..=49).map(|k| k as f64 / 50.0).collect()
    }
}

impl Default for QuantileGrid {
    /// θ ∈ {0.1, ..., 0.9}, τ ∈ {0.02, 0.04, ..., 0.98}.
    fn default() -> Self {
        Self { thetas: Self::default_thetas(), taus: Self::default_taus() }
    }
}

/// `w_t = φ((F_n(uci_t) - τ) / h)`, not renormalized.
pub fn kernel_weights(ucis: &[f64], tau: QuantileLevel, kernel: KernelSpec) -> Vec<f64> {
    weights_from_ecdf(&empirical_cdf_at_samples(ucis), tau.value(), kernel.bandwidth)
}

fn weights_from_ecdf(ecdf: &[f64], tau: f64, h: f64) -> Vec<f64> {
    ecdf.iter().map(|f| normal_pdf((f - tau) / h)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFit {
    pub theta: f64,
    pub tau: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// NaN when the lag term is not part of the model.
    pub alpha: f64,
    pub status: FitStatus,
    pub ess: f64,
}

/// Estimation sample shared by every cell of a surface.
struct CellData {
    y: Vec<f64>,
    uci: Vec<f64>,
    lag: Option<Vec<f64>>,
    ecdf: Vec<f64>,
}

const MIN_OBS: usize = 20;

impl CellData {
    fn new(gr: &ReturnSeries, uci: &ReturnSeries, include_lag: bool) -> Result<Self, QqrError> {
        if gr.dates() != uci.dates() {
            return Err(QqrError::Misaligned);
        }
        let start = usize::from(include_lag);
        let rows = gr.len().saturating_sub(start);
        if rows < MIN_OBS {
            return Err(QqrError::TooFew { required: MIN_OBS, got: rows });
        }
        let y = gr.values()[start..].to_vec();
        let u = uci.values()[start..].to_vec();
        let lag = include_lag.then(|| gr.values()[..gr.len() - 1].to_vec());
        let ecdf = empirical_cdf_at_samples(&u);
        Ok(Self { y, uci: u, lag, ecdf })
    }

    fn design(&self, center: f64) -> DMatrix<f64> {
        let k = if self.lag.is_some() { 3 } else { 2 };
        DMatrix::from_fn(self.y.len(), k, |t, c| match c {
            0 => 1.0,
            1 => self.uci[t] - center,
            _ => self.lag.as_ref().expect("lag column")[t],
        })
    }

    /// All θ fits for one τ; the weights and design are shared.
    fn fit_tau(&self, thetas: &[f64], tau: f64, h: f64) -> Result<Vec<CellFit>, QqrError> {
        let center = sample_quantile(&self.uci, tau);
        let weights = weights_from_ecdf(&self.ecdf, tau, h);
        let design = self.design(center);
        thetas
            .iter()
            .map(|&theta| {
                let problem =
                    WqrProblem::new(self.y.clone(), design.clone(), weights.clone(), QuantileLevel::new(theta)?)?;
                let fit = solve_wqr(&problem);
                let c = &fit.coefficients;
                Ok(CellFit {
                    theta,
                    tau,
                    beta0: c[0],
                    beta1: c[1],
                    alpha: c.get(2).copied().unwrap_or(f64::NAN),
                    status: fit.status,
                    ess: fit.ess,
                })
            })
            .collect()
    }
}

/// One (θ, τ) cell: weighted QR of `gr_t` on `[1, uci_t - q_τ, gr_{t-1}]`.
pub fn fit_cell(
    gr: &ReturnSeries,
    uci: &ReturnSeries,
    theta: QuantileLevel,
    tau: QuantileLevel,
    spec: QqrSpec,
) -> Result<CellFit, QqrError> {
    let data = CellData::new(gr, uci, spec.include_lag)?;
    let mut fits = data.fit_tau(&[theta.value()], tau.value(), spec.kernel.bandwidth)?;
    Ok(fits.remove(0))
}

/// Which coefficient of a surface to read or emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Beta0,
    Beta1,
    Alpha,
}

/// Coefficients over a θ x τ grid; rows index θ, columns τ.
#[derive(Debug, Clone, PartialEq)]
pub struct QqrSurface {
    pub grid: QuantileGrid,
    pub beta0: DMatrix<f64>,
    pub beta1: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub ess: DMatrix<f64>,
    status: Vec<FitStatus>,
}

impl QqrSurface {
    pub fn shape(&self) -> (usize, usize) {
        (self.grid.thetas.len(), self.grid.taus.len())
    }

    pub fn status(&self, i: usize, j: usize) -> FitStatus {
        self.status[i * self.grid.taus.len() + j]
    }

    pub fn is_converged(&self, i: usize, j: usize) -> bool {
        self.status(i, j).is_converged()
    }

    pub fn matrix(&self, which: Coefficient) -> &DMatrix<f64> {
        match which {
            Coefficient::Beta0 => &self.beta0,
            Coefficient::Beta1 => &self.beta1,
            Coefficient::Alpha => &self.alpha,
        }
    }

    /// The value at a converged cell, `None` otherwise.
    pub fn get(&self, which: Coefficient, i: usize, j: usize) -> Option<f64> {
        let v = self.matrix(which)[(i, j)];
        (self.is_converged(i, j) && v.is_finite()).then_some(v)
    }

    pub fn converged_count(&self) -> usize {
        self.status.iter().filter(|s| s.is_converged()).count()
    }

    /// Assembles a surface from cell fits laid out row-major (θ outer).
    pub fn from_cells(grid: QuantileGrid, cells: &[CellFit]) -> Self {
        let (nt, nu) = (grid.thetas.len(), grid.taus.len());
        assert_eq!(cells.len(), nt * nu, "one fit per grid cell");
        let pick = |f: fn(&CellFit) -> f64| DMatrix::from_fn(nt, nu, |i, j| f(&cells[i * nu + j]));
        Self {
            beta0: pick(|c| c.beta0),
            beta1: pick(|c| c.beta1),
            alpha: pick(|c| c.alpha),
            ess: pick(|c| c.ess),
            status: cells.iter().map(|c| c.status).collect(),
            grid,
        }
    }

    /// CSV grid: header `theta\tau` then τ labels, one row per θ; values at
    /// 8 significant digits, `NA` for cells that did not converge.
    pub fn write_csv<W: Write>(&self, which: Coefficient, mut out: W) -> std::io::Result<()> {
        write!(out, "theta\\tau")?;
        for tau in &self.grid.taus {
            write!(out, ",{}", fmt_fixed(*tau, 2))?;
        }
        writeln!(out)?;
        for (i, theta) in self.grid.thetas.iter().enumerate() {
            write!(out, "{}", fmt_fixed(*theta, 2))?;
            for j in 0..self.grid.taus.len() {
                match self.get(which, i, j) {
                    Some(v) => write!(out, ",{}", fmt_sig(v, 8))?,
                    None => write!(out, ",NA")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Fits every cell of the grid. Cells are independent and evaluated in
/// parallel; the result does not depend on evaluation order.
pub fn fit_surface(
    gr: &ReturnSeries,
    uci: &ReturnSeries,
    grid: &QuantileGrid,
    spec: QqrSpec,
) -> Result<QqrSurface, QqrError> {
    let data = CellData::new(gr, uci, spec.include_lag)?;
    let h = spec.kernel.bandwidth;
    let by_tau: Vec<Vec<CellFit>> =
        grid.taus.par_iter().map(|&tau| data.fit_tau(&grid.thetas, tau, h)).collect::<Result<_, _>>()?;
    let nu = grid.taus.len();
    let cells: Vec<CellFit> = (0..grid.thetas.len() * nu).map(|idx| by_tau[idx % nu][idx / nu]).collect();
    Ok(QqrSurface::from_cells(grid.clone(), &cells))
}

/// τ-averaged slope per θ.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedQqr {
    pub thetas: Vec<f64>,
    pub gamma1: Vec<f64>,
    /// Number of converged cells averaged in each row.
    pub cells: Vec<usize>,
}

/// `γ1(θ) = (1/s) Σ_τ β1(θ, τ)` over the converged cells of each row, `s`
/// being their count.
pub fn average_over_tau(s: &QqrSurface) -> Result<AveragedQqr, QqrError> {
    let (nt, nu) = s.shape();
    let mut gamma1 = Vec::with_capacity(nt);
    let mut cells = Vec::with_capacity(nt);
    for i in 0..nt {
        let row: Vec<f64> = (0..nu).filter_map(|j| s.get(Coefficient::Beta1, i, j)).collect();
        if row.is_empty() {
            return Err(QqrError::NoConvergedCells(s.grid.thetas[i]));
        }
        gamma1.push(row.iter().sum::<f64>() / row.len() as f64);
        cells.push(row.len());
    }
    Ok(AveragedQqr { thetas: s.grid.thetas.clone(), gamma1, cells })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub theta: f64,
    /// NaN if the standard QR fit was degenerate.
    pub qr_slope: f64,
    pub avg_qqr_slope: f64,
    pub abs_diff: f64,
}

/// Standard QR slope against the τ-averaged QQR slope, per θ, using an
/// already fitted surface.
pub fn compare_with_surface(
    gr: &ReturnSeries,
    uci: &ReturnSeries,
    surface: &QqrSurface,
    spec: QqrSpec,
) -> Result<Vec<ComparisonRow>, QqrError> {
    let averaged = average_over_tau(surface)?;
    averaged
        .thetas
        .iter()
        .zip(&averaged.gamma1)
        .map(|(&theta, &gamma1)| {
            let fit = fit_qr(gr, uci, spec.include_lag, QuantileLevel::new(theta)?)?;
            let qr_slope = if fit.status.is_converged() { fit.coefficients[1] } else { f64::NAN };
            Ok(ComparisonRow { theta, qr_slope, avg_qqr_slope: gamma1, abs_diff: (qr_slope - gamma1).abs() })
        })
        .collect()
}

pub fn compare_qr_qqr(
    gr: &ReturnSeries,
    uci: &ReturnSeries,
    grid: &QuantileGrid,
    spec: QqrSpec,
) -> Result<Vec<ComparisonRow>, QqrError> {
    let surface = fit_surface(gr, uci, grid, spec)?;
    compare_with_surface(gr, uci, &surface, spec)
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "theta,qr_slope,avg_qqr_slope,abs_diff")?;
    let cell = |v: f64| if v.is_finite() { fmt_sig(v, 8) } else { "NA".to_string() };
    for r in rows {
        writeln!(out, "{},{},{},{}", fmt_fixed(r.theta, 2), cell(r.qr_slope), cell(r.avg_qqr_slope), cell(r.abs_diff))?;
    }
    Ok(())
}
