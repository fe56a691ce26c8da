//! Weighted linear quantile regression.
//!
//! Minimizes `Σ w_t ρ_θ(y_t - x_t b)` exactly. The optimum of this piecewise
//! linear problem is attained at a basic solution, a fit interpolating `k`
//! observations, so the solver walks between such bases: at each basis it
//! prices the `2k` edges that release one interpolated observation above or
//! below the fit, and moves along the steepest descending edge with an exact
//! line search over residual sign changes. This is the primal simplex method
//! on the LP
//!
//! ```text
//! min θ Σ w_t u_t⁺ + (1 - θ) Σ w_t u_t⁻   s.t.  y - X b = u⁺ - u⁻,  u± ≥ 0
//! ```
//!
//! with the dual variables of non-interpolated observations held at their
//! bounds. Zero residuals off the basis keep an explicit bound assignment, so
//! degenerate vertices are handled by ordinary (possibly zero-length) pivots;
//! Bland's rule takes over after a zero-length pivot to rule out cycling.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ingest::{MonthlySeries, ReturnSeries};

#[derive(Debug, Error, PartialEq)]
pub enum QuantRegError {
    #[error("quantile level must lie strictly inside (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("weights must be finite and nonnegative with a positive sum")]
    InvalidWeights,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least {required} observations, got {got}")]
    TooFew { required: usize, got: usize },
    #[error("series are not date-aligned")]
    Misaligned,
}

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(level: f64) -> Result<Self, QuantRegError> {
        if level > 0.0 && level < 1.0 {
            Ok(Self(level))
        } else {
            Err(QuantRegError::InvalidQuantile(level))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// The check (pinball) loss `u (θ - 1{u < 0})`.
pub fn check_loss(u: f64, theta: QuantileLevel) -> f64 {
    let t = theta.0;
    if u < 0.0 {
        (t - 1.0) * u
    } else {
        t * u
    }
}

/// Weighted quantile regression problem: response `y`, `T x k` design `x`,
/// nonnegative weights `w`.
#[derive(Debug, Clone)]
pub struct WqrProblem {
    y: Vec<f64>,
    x: DMatrix<f64>,
    w: Vec<f64>,
    theta: QuantileLevel,
}

impl WqrProblem {
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, w: Vec<f64>, theta: QuantileLevel) -> Result<Self, QuantRegError> {
        if x.nrows() != y.len() || w.len() != y.len() {
            return Err(QuantRegError::Dimension(format!(
                "y has {} rows, design {}x{}, weights {}",
                y.len(),
                x.nrows(),
                x.ncols(),
                w.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(QuantRegError::Dimension("design has no columns".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(QuantRegError::NonFinite("response"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QuantRegError::NonFinite("design"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(QuantRegError::InvalidWeights);
        }
        Ok(Self { y, x, w, theta })
    }

    /// Unit weights.
    pub fn unweighted(y: Vec<f64>, x: DMatrix<f64>, theta: QuantileLevel) -> Result<Self, QuantRegError> {
        let w = vec![1.0; y.len()];
        Self::new(y, x, w, theta)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn theta(&self) -> QuantileLevel {
        self.theta
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Effective sample size `(Σw)² / Σw²`.
    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.w)
    }

    /// Weighted check loss at coefficients `b`.
    pub fn objective(&self, b: &[f64]) -> f64 {
        let b = DVector::from_column_slice(b);
        let fitted = &self.x * b;
        self.y.iter().zip(fitted.iter()).zip(&self.w).map(|((y, f), w)| w * check_loss(y - f, self.theta)).sum()
    }
}

pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degeneracy {
    /// The design restricted to positive weights has rank below `k`.
    RankDeficient { rank: usize },
    /// Kernel weights too concentrated: `ESS < 2k`.
    LowEffectiveSampleSize { ess: f64, required: f64 },
    /// The pivot limit was hit before optimality was certified.
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitStatus {
    Converged,
    Degenerate(Degeneracy),
}

impl FitStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, FitStatus::Converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WqrFit {
    /// NaN when the design is rank deficient.
    pub coefficients: Vec<f64>,
    /// Weighted check loss at `coefficients` over all observations.
    pub objective: f64,
    pub ess: f64,
    pub status: FitStatus,
    /// Another basic solution attains the same objective within 1e-10.
    pub nonunique: bool,
    pub pivots: usize,
}

/// Observations with weight below this fraction of the largest weight are
/// dropped before solving.
const WEIGHT_DROP: f64 = 1e-12;
/// Relative tolerance for rank decisions.
const RANK_TOL: f64 = 1e-10;

pub fn solve_wqr(p: &WqrProblem) -> WqrFit {
    let k = p.k();
    let ess = p.ess();
    let max_w = p.w.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..p.y.len()).filter(|&i| p.w[i] >= WEIGHT_DROP * max_w && p.w[i] > 0.0).collect();

    let y: Vec<f64> = active.iter().map(|&i| p.y[i]).collect();
    let w: Vec<f64> = active.iter().map(|&i| p.w[i]).collect();
    let x = p.x.select_rows(active.iter());

    let degenerate = |d: Degeneracy, coefficients: Vec<f64>| {
        let objective = if coefficients.iter().all(|c| c.is_finite()) { p.objective(&coefficients) } else { f64::NAN };
        WqrFit { coefficients, objective, ess, status: FitStatus::Degenerate(d), nonunique: false, pivots: 0 }
    };

    let rank = weighted_rank(&x, &w);
    if rank < k {
        return degenerate(Degeneracy::RankDeficient { rank }, vec![f64::NAN; k]);
    }

    let outcome = Simplex::new(&y, &x, &w, p.theta.0).run();
    let active_ess = effective_sample_size(&w);
    let status = if active_ess < 2.0 * k as f64 {
        FitStatus::Degenerate(Degeneracy::LowEffectiveSampleSize { ess: active_ess, required: 2.0 * k as f64 })
    } else if !outcome.optimal {
        FitStatus::Degenerate(Degeneracy::IterationLimit)
    } else {
        FitStatus::Converged
    };
    let coefficients = outcome.b.as_slice().to_vec();
    WqrFit {
        objective: p.objective(&coefficients),
        coefficients,
        ess,
        status,
        nonunique: outcome.nonunique,
        pivots: outcome.pivots,
    }
}

fn weighted_rank(x: &DMatrix<f64>, w: &[f64]) -> usize {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(wi.sqrt());
    }
    let sv = xw.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

struct Outcome {
    b: DVector<f64>,
    optimal: bool,
    nonunique: bool,
    pivots: usize,
}

/// Bound assignment of a non-interpolated observation: its residual sits
/// (or is about to sit) above or below the fit.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    Above,
    Below,
}

struct Simplex<'a> {
    y: &'a [f64],
    x: &'a DMatrix<f64>,
    w: &'a [f64],
    theta: f64,
    zero_tol: f64,
    price_tol: f64,
}

impl<'a> Simplex<'a> {
    fn new(y: &'a [f64], x: &'a DMatrix<f64>, w: &'a [f64], theta: f64) -> Self {
        let yscale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wsum: f64 = w.iter().sum();
        Self { y, x, w, theta, zero_tol: 1e-11 * (1.0 + yscale), price_tol: 1e-12 * wsum }
    }

    /// Weighted least squares, then the `k` observations closest to that
    /// fit that form a nonsingular basis.
    fn initial_basis(&self) -> Vec<usize> {
        let (n, k) = (self.x.nrows(), self.x.ncols());
        let mut xw = self.x.clone();
        let mut yw = DVector::from_column_slice(self.y);
        for i in 0..n {
            let s = self.w[i].sqrt();
            xw.row_mut(i).scale_mut(s);
            yw[i] *= s;
        }
        let svd = xw.svd(true, true);
        let b0 = svd.solve(&yw, RANK_TOL).unwrap_or_else(|_| DVector::zeros(k));
        let fitted = self.x * &b0;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ra = (self.y[a] - fitted[a]).abs();
            let rb = (self.y[b] - fitted[b]).abs();
            ra.total_cmp(&rb).then(a.cmp(&b))
        });

        // Greedy Gram-Schmidt selection of independent rows.
        let mut basis = Vec::with_capacity(k);
        let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(k);
        for i in order {
            let row = self.x.row(i).transpose();
            let norm = row.norm();
            if norm == 0.0 {
                continue;
            }
            let mut v = row.clone();
            for q in &ortho {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
            let vn = v.norm();
            if vn > 1e-8 * norm {
                ortho.push(v / vn);
                basis.push(i);
                if basis.len() == k {
                    break;
                }
            }
        }
        basis
    }

    fn run(&self) -> Outcome {
        let (n, k) = (self.x.nrows(), self.x.ncols());
        let theta = self.theta;
        let mut basis = self.initial_basis();
        debug_assert_eq!(basis.len(), k);
        let mut in_basis = vec![false; n];
        for &i in &basis {
            in_basis[i] = true;
        }
        let mut side = vec![Side::Above; n];
        let max_pivots = 50 * n + 1000;
        let mut bland = false;
        let mut pivots = 0;
        let mut breaks: Vec<(f64, usize)> = Vec::with_capacity(n);

        loop {
            let bmat = self.x.select_rows(basis.iter());
            let Some(binv) = bmat.clone().try_inverse() else {
                // Cannot happen for pivots on nonzero elements, but guard
                // against loss of precision.
                return Outcome { b: DVector::from_element(k, f64::NAN), optimal: false, nonunique: false, pivots };
            };
            let yb = DVector::from_iterator(k, basis.iter().map(|&i| self.y[i]));
            let b = &binv * yb;
            let residuals: Vec<f64> =
                (0..n).map(|i| if in_basis[i] { 0.0 } else { self.y[i] - self.x.row(i).dot(&b.transpose()) }).collect();
            for i in 0..n {
                if !in_basis[i] && residuals[i].abs() > self.zero_tol {
                    side[i] = if residuals[i] > 0.0 { Side::Above } else { Side::Below };
                }
            }
            // z_i = x_i B^{-1}: how each residual responds to the basis
            // residuals.
            let z = self.x * &binv;
            let mut a = vec![0.0; k];
            for i in (0..n).filter(|&i| !in_basis[i]) {
                let psi = match side[i] {
                    Side::Above => theta,
                    Side::Below => theta - 1.0,
                } * self.w[i];
                for (j, aj) in a.iter_mut().enumerate() {
                    *aj += psi * z[(i, j)];
                }
            }

            // Edge (j, +1): basis observation j ends up below the fit.
            // Edge (j, -1): it ends up above.
            let mut best: Option<(f64, usize, f64)> = None;
            let mut nonunique = false;
            for j in 0..k {
                let wj = self.w[basis[j]];
                for (s, slope) in [(1.0, -a[j] + wj * (1.0 - theta)), (-1.0, a[j] + wj * theta)] {
                    if slope.abs() <= 1e-10 * (1.0 + wj) {
                        nonunique = true;
                    }
                    if slope < -self.price_tol {
                        let better = match best {
                            None => true,
                            Some((bs, _, _)) => !bland && slope < bs,
                        };
                        if better {
                            best = Some((slope, j, s));
                        }
                    }
                }
            }
            let Some((slope0, leave, s)) = best else {
                return Outcome { b, optimal: true, nonunique, pivots };
            };
            if pivots >= max_pivots {
                return Outcome { b, optimal: false, nonunique, pivots };
            }

            // Line search along d = s B^{-1} e_leave; residual i moves at
            // rate u_i = -s z_ij.
            breaks.clear();
            for i in (0..n).filter(|&i| !in_basis[i]) {
                let u = -s * z[(i, leave)];
                if u == 0.0 {
                    continue;
                }
                let r = residuals[i];
                let crossing = match side[i] {
                    Side::Above if u < 0.0 => Some(r.max(0.0) / -u),
                    Side::Below if u > 0.0 => Some((-r).max(0.0) / u),
                    _ => None,
                };
                if let Some(t) = crossing {
                    breaks.push((t, i));
                }
            }
            breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut slope = slope0;
            let mut entering = None;
            for (pos, &(t, i)) in breaks.iter().enumerate() {
                slope += self.w[i] * (s * z[(i, leave)]).abs();
                if slope >= -self.price_tol {
                    entering = Some((pos, t, i));
                    break;
                }
            }
            let Some((pos, step, enter)) = entering else {
                // Unbounded descent is impossible with positive weights on
                // a full-rank design; treat as numerical breakdown.
                return Outcome { b, optimal: false, nonunique, pivots };
            };
            for &(_, i) in &breaks[..pos] {
                side[i] = match side[i] {
                    Side::Above => Side::Below,
                    Side::Below => Side::Above,
                };
            }
            let leaving = basis[leave];
            side[leaving] = if s > 0.0 { Side::Below } else { Side::Above };
            in_basis[leaving] = false;
            in_basis[enter] = true;
            basis[leave] = enter;
            bland = step <= self.zero_tol;
            pivots += 1;
        }
    }
}

/// Unit-weight quantile regression of `y_t` on `[1, x_t]`, plus `y_{t-1}`
/// when `include_lag` is set (the first observation is then consumed).
pub fn fit_qr(
    y: &ReturnSeries,
    x: &ReturnSeries,
    include_lag: bool,
    theta: QuantileLevel,
) -> Result<WqrFit, QuantRegError> {
    if y.dates() != x.dates() {
        return Err(QuantRegError::Misaligned);
    }
    let start = usize::from(include_lag);
    let rows = y.len().saturating_sub(start);
    if rows < 10 {
        return Err(QuantRegError::TooFew { required: 10, got: rows });
    }
    let k = 2 + start;
    let design = DMatrix::from_fn(rows, k, |r, c| {
        let t = r + start;
        match c {
            0 => 1.0,
            1 => x.values()[t],
            _ => y.values()[t - 1],
        }
    });
    let problem = WqrProblem::unweighted(y.values()[start..].to_vec(), design, theta)?;
    Ok(solve_wqr(&problem))
}
