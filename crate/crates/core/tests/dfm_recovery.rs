mod common;

use common::one_factor_panel;
use nalgebra::DMatrix;
use qqr_core::dfm::{fit_dfm_matrix, kalman_smooth, DfmSpec};
use qqr_core::stats::{pearson, std_dev};

fn standardized(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = x.clone();
    for mut col in z.column_iter_mut() {
        let m = col.mean();
        let s = std_dev(&col.iter().copied().collect::<Vec<_>>());
        col.apply(|v| *v = (*v - m) / s);
    }
    z
}

fn smoothed_factor(x: &DMatrix<f64>, spec: &DfmSpec) -> (Vec<f64>, qqr_core::dfm::FactorModel) {
    let model = fit_dfm_matrix(x, spec).unwrap();
    let sm = kalman_smooth(&model.params, x).unwrap();
    (sm.means.iter().map(|s| s[0]).collect(), model)
}

#[test]
fn median_recovery_over_seeds() {
    let mut corrs = Vec::new();
    for seed in 0..20 {
        let (x, f, _) = one_factor_panel(seed, 200, 6, 0.8, 1.0);
        let (fhat, model) = smoothed_factor(&standardized(&x), &DfmSpec::default());
        for w in model.loglik_path.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
        corrs.push(pearson(&fhat, &f).unwrap().abs());
    }
    corrs.sort_by(f64::total_cmp);
    let median = 0.5 * (corrs[9] + corrs[10]);
    assert!(median > 0.9, "{median}");
}

#[test]
fn noiseless_panel_is_recovered_quickly() {
    let (x, f, _) = one_factor_panel(3, 200, 6, 0.8, 1e12);
    let (fhat, model) = smoothed_factor(&x, &DfmSpec::default());
    assert!(pearson(&fhat, &f).unwrap().abs() > 0.9999);
    let path = &model.loglik_path;
    let plateau = path.windows(2).position(|w| (w[1] - w[0]).abs() / (1.0 + w[1].abs()) < 1e-6).unwrap_or(path.len());
    assert!(plateau < 10, "{path:?}");
}

#[test]
fn fitted_variance_accounts_for_unit_variance() {
    let (x, _, _) = one_factor_panel(11, 400, 6, 0.8, 1.0);
    let z = standardized(&x);
    let (_, model) = smoothed_factor(&z, &DfmSpec::default());
    let sm = kalman_smooth(&model.params, &z).unwrap();
    let mean_sigma = model.params.sigma_e.mean();
    for i in 0..6 {
        let common: Vec<f64> = sm.means.iter().map(|s| model.params.lambda[(i, 0)] * s[0]).collect();
        let total = std_dev(&common).powi(2) + mean_sigma;
        assert!((total - 1.0).abs() < 0.15, "series {i}: {total}");
    }
}
