//! Pipeline stages. Each command loads the configured inputs, runs one
//! part of the analysis and writes its artifacts below the output
//! directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use qqr_core::bds::{bds_grid, bds_on_ols_residuals, write_bds_table};
use qqr_core::dfm::{composite_diagnostics, extract_composite, fit_dfm, CompositeIndex, DfmError, FactorModel};
use qqr_core::format::{fmt_fixed, fmt_sig};
use qqr_core::ingest::{align_panel, dfm_input_transform, load_series, to_log_returns, MonthlySeries};
use qqr_core::qqr::{compare_with_surface, fit_surface, write_comparison_csv, Coefficient, QqrError, QqrSurface};
use qqr_core::stats::{autocorr1, corr_matrix, describe, jarque_bera, DescriptiveStats, JarqueBeraResult};
use qqr_core::{MonthRange, Panel, ReturnSeries, TimeSeries};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{InputSpec, Resolved, RunConfig};
use crate::roles::{classify_roles, write_roles_csv, HedgeSafeHavenReport};
use crate::CliError;

/// Files written so far, relative to the output directory.
pub struct Outputs {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), files: Vec::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn write(
        &mut self,
        rel: impl AsRef<Path>,
        body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        let io_err = |source| CliError::Io { path: path.clone(), source };
        let mut buf = Vec::new();
        body(&mut buf).map_err(io_err)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?;
        }
        std::fs::write(&path, buf).map_err(io_err)?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_path_buf());
        }
        Ok(())
    }
}

/// Inputs shared by every stage, restricted to the configured window.
pub struct Data {
    pub gr: ReturnSeries,
    /// Uncertainty index levels.
    pub levels: Panel,
    /// Log returns of each uncertainty index.
    pub returns: Vec<ReturnSeries>,
}

fn load_input(spec: &InputSpec) -> Result<TimeSeries, CliError> {
    let s = load_series(&spec.path, &spec.value_column, &spec.date_column)?;
    Ok(TimeSeries::new(spec.id.clone(), s.dates().to_vec(), s.values().to_vec())?)
}

/// Loads levels over the window plus the preceding month, so that returns
/// cover the window exactly.
pub fn load_data(cfg: &Resolved) -> Result<Data, CliError> {
    let extended = MonthRange::new(cfg.window.start.offset(-1), cfg.window.end)?;
    let gold = align_panel(&[load_input(&cfg.gold)?], extended, cfg.policy)?;
    let gr = to_log_returns(&gold.column_series(0))?;
    let gr = ReturnSeries::new(cfg.gold.id.clone(), gr.dates().to_vec(), gr.values().to_vec())?;

    let raw: Vec<TimeSeries> = cfg.uncertainty.iter().map(load_input).collect::<Result<_, _>>()?;
    let panel = align_panel(&raw, extended, cfg.policy)?;
    let returns = (0..panel.ncols())
        .map(|j| {
            let r = to_log_returns(&panel.column_series(j))?;
            ReturnSeries::new(panel.ids()[j].clone(), r.dates().to_vec(), r.values().to_vec())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let t = panel.nrows() - 1;
    let levels = Panel::new(panel.ids().to_vec(), panel.dates()[1..].to_vec(), panel.data().rows(1, t).into_owned())?;
    Ok(Data { gr, levels, returns })
}

type StatRow = fn(&(DescriptiveStats, JarqueBeraResult)) -> f64;

/// Descriptive statistics of returns, and correlations plus first-order
/// autocorrelations of log index levels.
pub fn cmd_stats(data: &Data, out: &mut Outputs) -> Result<(), CliError> {
    let mut columns: Vec<&ReturnSeries> = vec![&data.gr];
    columns.extend(data.returns.iter());
    let described = columns
        .iter()
        .map(|s| Ok((describe(s.values())?, jarque_bera(s.values())?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    out.write("stats/descriptive.csv", |w| {
        write!(w, "statistic")?;
        for s in &columns {
            write!(w, ",{}", s.id())?;
        }
        writeln!(w)?;
        write!(w, "n")?;
        for (d, _) in &described {
            write!(w, ",{}", d.n)?;
        }
        writeln!(w)?;
        let rows: [(&str, StatRow); 7] = [
            ("mean", |(d, _)| d.mean),
            ("median", |(d, _)| d.median),
            ("std_dev", |(d, _)| d.std_dev),
            ("skewness", |(d, _)| d.skewness),
            ("kurtosis", |(d, _)| d.kurtosis),
            ("jarque_bera", |(_, j)| j.statistic),
            ("jb_p_value", |(_, j)| j.p_value),
        ];
        for (label, f) in rows {
            write!(w, "{label}")?;
            for d in &described {
                write!(w, ",{}", fmt_fixed(f(d), 6))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;

    let logged = dfm_input_transform(&data.levels)?;
    let corr = corr_matrix(&logged)?;
    let rho1 = (0..logged.ncols()).map(|j| autocorr1(logged.column(j))).collect::<Result<Vec<_>, _>>()?;
    out.write("stats/correlations.csv", |w| {
        write!(w, "series")?;
        for id in logged.ids() {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for (i, id) in logged.ids().iter().enumerate() {
            write!(w, "{id}")?;
            for j in 0..logged.ncols() {
                write!(w, ",{}", fmt_fixed(corr[(i, j)], 6))?;
            }
            writeln!(w)?;
        }
        write!(w, "rho1")?;
        for r in &rho1 {
            write!(w, ",{}", fmt_fixed(*r, 6))?;
        }
        writeln!(w)
    })
}

/// BDS on raw gold returns, then on the residuals of gold returns
/// regressed on each uncertainty series.
pub fn cmd_bds(cfg: &Resolved, data: &Data, out: &mut Outputs) -> Result<(), CliError> {
    let mut columns = vec![(data.gr.id().to_string(), bds_grid(data.gr.values(), &cfg.bds)?)];
    for uci in &data.returns {
        columns.push((uci.id().to_string(), bds_on_ols_residuals(&data.gr, uci, &cfg.bds)?));
    }
    out.write("bds/bds.csv", |w| write_bds_table(&cfg.bds, &columns, w))
}

fn emit_surface(
    cfg: &Resolved,
    gr: &ReturnSeries,
    uci: &ReturnSeries,
    out: &mut Outputs,
) -> Result<QqrSurface, CliError> {
    let surface = fit_surface(gr, uci, &cfg.grid, cfg.qqr)?;
    let dir = PathBuf::from("qqr").join(uci.id());
    let mut coefficients = vec![("beta0", Coefficient::Beta0), ("beta1", Coefficient::Beta1)];
    if cfg.qqr.include_lag {
        coefficients.push(("alpha", Coefficient::Alpha));
    }
    for (name, which) in coefficients {
        out.write(dir.join(format!("{name}.csv")), |w| surface.write_csv(which, w))?;
    }
    let degenerate = surface.shape().0 * surface.shape().1 - surface.converged_count();
    if degenerate > 0 {
        eprintln!("warning: {}: {degenerate} degenerate cells written as NA", uci.id());
    }
    match compare_with_surface(gr, uci, &surface, cfg.qqr) {
        Ok(rows) => out.write(dir.join("comparison.csv"), |w| write_comparison_csv(&rows, w))?,
        Err(QqrError::NoConvergedCells(theta)) => {
            eprintln!("warning: {}: no converged cells at theta = {theta}; comparison table skipped", uci.id());
        }
        Err(e) => return Err(e.into()),
    }
    Ok(surface)
}

fn qqr_for_all(cfg: &Resolved, data: &Data, out: &mut Outputs) -> Result<Vec<HedgeSafeHavenReport>, CliError> {
    let mut reports = Vec::new();
    for uci in &data.returns {
        let surface = emit_surface(cfg, &data.gr, uci, out)?;
        reports.push(classify_roles(uci.id(), &surface, &cfg.roles));
    }
    Ok(reports)
}

/// QQR surfaces, comparison tables and role verdicts per uncertainty
/// series.
pub fn cmd_qqr(cfg: &Resolved, data: &Data, out: &mut Outputs) -> Result<(), CliError> {
    let reports = qqr_for_all(cfg, data, out)?;
    out.write("qqr/roles.csv", |w| write_roles_csv(&reports, w))
}

fn write_trace(out: &mut Outputs, rel: &str, path: &[f64]) -> Result<(), CliError> {
    out.write(rel, |w| {
        writeln!(w, "iteration,loglik")?;
        for (i, ll) in path.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_sig(*ll, 12))?;
        }
        Ok(())
    })
}

/// Composite index from the factor model on log index levels.
pub fn cmd_dfm(cfg: &Resolved, data: &Data, out: &mut Outputs) -> Result<CompositeIndex, CliError> {
    let x = dfm_input_transform(&data.levels)?;
    let model: FactorModel = match fit_dfm(&x, &cfg.dfm) {
        Ok(m) => m,
        Err(DfmError::Diverged { iteration, previous, current, trace }) => {
            write_trace(out, "dfm/trace.csv", &trace)?;
            return Err(DfmError::Diverged { iteration, previous, current, trace }.into());
        }
        Err(e) => return Err(e.into()),
    };
    if !model.converged {
        eprintln!("warning: factor model did not converge within {} iterations", cfg.dfm.max_iter);
    }
    let cuci = extract_composite(&model, &x)?;
    let diag = composite_diagnostics(&cuci, &x)?;

    out.write("dfm/cuci.csv", |w| {
        writeln!(w, "date,cuci")?;
        for (d, v) in cuci.dates.iter().zip(&cuci.values) {
            writeln!(w, "{d},{}", fmt_sig(*v, 12))?;
        }
        Ok(())
    })?;
    out.write("dfm/diagnostics.csv", |w| {
        writeln!(w, "statistic,CUCI")?;
        for (label, v) in
            [("mean", diag.mean), ("std_dev", diag.std_dev), ("skewness", diag.skewness), ("kurtosis", diag.kurtosis)]
        {
            writeln!(w, "{label},{}", fmt_fixed(v, 6))?;
        }
        for (id, c) in &diag.correlations {
            writeln!(w, "corr_{id},{}", fmt_fixed(*c, 6))?;
        }
        writeln!(w, "rho1,{}", fmt_fixed(diag.rho1, 6))
    })?;
    write_trace(out, "dfm/loglik.csv", &model.loglik_path)?;
    out.write("dfm/status.csv", |w| {
        writeln!(w, "converged,iterations,loglik")?;
        let last = model.loglik_path.last().copied().unwrap_or(f64::NAN);
        writeln!(w, "{},{},{}", model.converged, model.loglik_path.len(), fmt_sig(last, 12))
    })?;
    Ok(cuci)
}

/// First differences of the composite index, for use as a QQR regressor.
pub fn differenced(cuci: &CompositeIndex) -> Result<ReturnSeries, CliError> {
    let values = cuci.values.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(ReturnSeries::new("CUCI", cuci.dates[1..].to_vec(), values)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct InputEntry<'a> {
    id: &'a str,
    path: &'a Path,
    sha256: String,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    inputs: Vec<InputEntry<'a>>,
    files: Vec<FileEntry>,
    created_unix: u64,
}

fn hash_file(path: &Path) -> Result<(u64, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    Ok((bytes.len() as u64, sha256_hex(&bytes)))
}

/// Full pipeline followed by a manifest of inputs and emitted files.
pub fn cmd_report(cfg: &Resolved, out: &mut Outputs) -> Result<(), CliError> {
    let data = load_data(cfg)?;
    cmd_stats(&data, out)?;
    cmd_bds(cfg, &data, out)?;
    let cuci = cmd_dfm(cfg, &data, out)?;
    let mut reports = qqr_for_all(cfg, &data, out)?;
    let dcuci = differenced(&cuci)?;
    let gr = ReturnSeries::new(data.gr.id(), data.gr.dates()[1..].to_vec(), data.gr.values()[1..].to_vec())?;
    let surface = emit_surface(cfg, &gr, &dcuci, out)?;
    reports.push(classify_roles(dcuci.id(), &surface, &cfg.roles));
    out.write("qqr/roles.csv", |w| write_roles_csv(&reports, w))?;

    let mut inputs = Vec::new();
    for (configured, resolved) in
        std::iter::once((&cfg.raw.gold, &cfg.gold)).chain(cfg.raw.uncertainty.iter().zip(&cfg.uncertainty))
    {
        inputs.push(InputEntry { id: &configured.id, path: &configured.path, sha256: hash_file(&resolved.path)?.1 });
    }
    let mut rels: Vec<&PathBuf> = out.files().iter().collect();
    rels.sort();
    let files = rels
        .into_iter()
        .map(|rel| {
            let (bytes, sha256) = hash_file(&out.root().join(rel))?;
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Ok(FileEntry { path, bytes, sha256 })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let created_unix =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg.raw,
        inputs,
        files,
        created_unix,
    };
    out.write("manifest.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}
