//! Hedge and safe-haven verdicts read off a fitted surface.
//!
//! The rule is an operationalization: the sign of the median converged β1
//! over a (θ, τ) region. Hedge inspects normal-market θ against middle τ,
//! safe haven the same θ against high τ.

use std::fmt;
use std::io::Write;

use qqr_core::format::fmt_fixed;
use qqr_core::qqr::{Coefficient, QqrSurface};
use qqr_core::stats::median;

use crate::config::RolesConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
    /// Every cell of the inspected region is degenerate.
    Degenerate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReading {
    pub verdict: Verdict,
    /// NaN for a degenerate region.
    pub median_beta1: f64,
    pub converged_cells: usize,
    pub total_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgeSafeHavenReport {
    pub series: String,
    pub hedge: RegionReading,
    pub safe_haven: RegionReading,
}

fn indices(grid: &[f64], wanted: &[f64]) -> Vec<usize> {
    grid.iter().enumerate().filter(|(_, g)| wanted.iter().any(|w| (*g - w).abs() < 1e-9)).map(|(i, _)| i).collect()
}

fn read_region(surface: &QqrSurface, thetas: &[usize], taus: &[usize]) -> RegionReading {
    let cells: Vec<f64> = thetas
        .iter()
        .flat_map(|&i| taus.iter().map(move |&j| (i, j)))
        .filter_map(|(i, j)| surface.get(Coefficient::Beta1, i, j))
        .collect();
    let total_cells = thetas.len() * taus.len();
    if cells.is_empty() {
        return RegionReading { verdict: Verdict::Degenerate, median_beta1: f64::NAN, converged_cells: 0, total_cells };
    }
    let m = median(&cells);
    RegionReading {
        verdict: if m > 0.0 { Verdict::Yes } else { Verdict::No },
        median_beta1: m,
        converged_cells: cells.len(),
        total_cells,
    }
}

pub fn classify_roles(series: &str, surface: &QqrSurface, roles: &RolesConfig) -> HedgeSafeHavenReport {
    let thetas = indices(surface.grid.thetas(), &roles.normal_thetas);
    let mid = indices(surface.grid.taus(), &roles.mid_taus);
    let high = indices(surface.grid.taus(), &roles.high_taus);
    HedgeSafeHavenReport {
        series: series.to_string(),
        hedge: read_region(surface, &thetas, &mid),
        safe_haven: read_region(surface, &thetas, &high),
    }
}

fn fmt_median(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        fmt_fixed(x, 6)
    }
}

pub fn write_roles_csv<W: Write>(reports: &[HedgeSafeHavenReport], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "series,hedge,hedge_median_beta1,hedge_cells,safe_haven,safe_haven_median_beta1,safe_haven_cells,rule"
    )?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{}/{},{},{},{}/{},median_beta1_gt_0",
            r.series,
            r.hedge.verdict,
            fmt_median(r.hedge.median_beta1),
            r.hedge.converged_cells,
            r.hedge.total_cells,
            r.safe_haven.verdict,
            fmt_median(r.safe_haven.median_beta1),
            r.safe_haven.converged_cells,
            r.safe_haven.total_cells,
        )?;
    }
    Ok(())
}
