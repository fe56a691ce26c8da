//! Synthetic input set with the same shape as the real data: a gold price
//! series and six uncertainty indices sharing one AR(1) factor, monthly
//! from the month before the default window through its end.

use std::io::Write;
use std::path::Path;

use qqr_core::format::fmt_sig;
use qqr_core::Month;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::commands::Outputs;
use crate::CliError;

pub const UNCERTAINTY_IDS: [&str; 6] = ["MAUCI", "MIUCI", "EPUCI", "MPUCI", "FUCI", "PUCI"];

pub struct Fixture {
    pub dates: Vec<Month>,
    pub gold: Vec<f64>,
    /// One level series per entry of [`UNCERTAINTY_IDS`].
    pub uncertainty: Vec<Vec<f64>>,
    pub factor: Vec<f64>,
}

pub fn generate(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Month::new(1998, 12).expect("valid month");
    let len = 202;
    let dates: Vec<Month> = (0..len as i64).map(|k| start.offset(k)).collect();
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    let phi: f64 = 0.9;
    let mut factor = Vec::with_capacity(len);
    let mut f = normal();
    for _ in 0..len {
        f = phi * f + (1.0 - phi * phi).sqrt() * normal();
        factor.push(f);
    }

    let mut load_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let uncertainty = (0..UNCERTAINTY_IDS.len())
        .map(|_| {
            let loading: f64 = load_rng.random_range(0.6..1.2);
            let base: f64 = load_rng.random_range(80.0..160.0);
            factor.iter().map(|f| base * (0.25 * (loading * f + 0.6 * normal())).exp()).collect()
        })
        .collect::<Vec<Vec<f64>>>();

    // Gold returns load on the first index's return and are more dispersed
    // when the common factor is high.
    let mut gold = Vec::with_capacity(len);
    let mut price = 287.1;
    gold.push(price);
    for t in 1..len {
        let du = (uncertainty[0][t] / uncertainty[0][t - 1]).ln();
        let scale = 0.03 * (0.3 * factor[t]).exp();
        let r = 0.005 + 0.02 * du + scale * normal();
        price *= r.exp();
        gold.push(price);
    }
    Fixture { dates, gold, uncertainty, factor }
}

fn config_json() -> serde_json::Value {
    let uncertainty: Vec<_> = UNCERTAINTY_IDS
        .iter()
        .map(|id| serde_json::json!({"id": id, "path": "uncertainty.csv", "value_column": id}))
        .collect();
    serde_json::json!({
        "gold": {"id": "Gr", "path": "gold.csv", "value_column": "price"},
        "uncertainty": uncertainty,
        "window": {"start": "1999-01", "end": "2015-09"},
        "output_dir": "out"
    })
}

/// Writes `gold.csv`, `uncertainty.csv` and a `config.json` that points at
/// them.
pub fn write_fixture(seed: u64, dir: &Path) -> Result<Vec<std::path::PathBuf>, CliError> {
    let fx = generate(seed);
    let mut out = Outputs::new(dir);
    out.write("gold.csv", |w| {
        writeln!(w, "date,price")?;
        for (d, v) in fx.dates.iter().zip(&fx.gold) {
            writeln!(w, "{d},{}", fmt_sig(*v, 12))?;
        }
        Ok(())
    })?;
    out.write("uncertainty.csv", |w| {
        writeln!(w, "date,{}", UNCERTAINTY_IDS.join(","))?;
        for (t, d) in fx.dates.iter().enumerate() {
            write!(w, "{d}")?;
            for s in &fx.uncertainty {
                write!(w, ",{}", fmt_sig(s[t], 12))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    out.write("config.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &config_json()).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(out.files().to_vec())
}
