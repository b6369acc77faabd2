use nvspin::constants::GAMMA_RATIO_COMBINED;
use nvspin::inversion::{estimate, fit_parameters, MeasuredSet, ParamModel};
use nvspin::{NVParams, Projection};

fn nominal_set() -> MeasuredSet {
    MeasuredSet::synthetic("mc", &NVParams::nominal(), Projection::Plus, 1.6, 1.6).unwrap()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[test]
fn gamma_ratio_sigma_matches_the_scatter() {
    let base = nominal_set();
    let propagated = estimate(&base, ParamModel::FourParam)
        .unwrap()
        .gamma_ratio
        .unwrap();
    assert!((propagated.value / GAMMA_RATIO_COMBINED - 1.0).abs() < 1e-9);
    let ratios: Vec<f64> = (0..400)
        .map(|seed| {
            let e = fit_parameters(&base.with_noise(50_000 + seed), ParamModel::FourParam).unwrap();
            e.omega_e / e.omega_n
        })
        .collect();
    let (mean, scatter) = mean_std(&ratios);
    assert!(
        (scatter / propagated.sigma - 1.0).abs() < 0.2,
        "{scatter} vs {}",
        propagated.sigma
    );
    assert!(
        (mean - GAMMA_RATIO_COMBINED).abs() < 3.0 * scatter / 20.0,
        "{mean}"
    );
}

#[test]
fn estimates_are_unbiased() {
    let base = nominal_set();
    let truth = NVParams::nominal();
    let fits: Vec<_> = (0..300)
        .map(|seed| fit_parameters(&base.with_noise(60_000 + seed), ParamModel::FourParam).unwrap())
        .collect();
    for (name, want) in [
        ("P", truth.p),
        ("a_par", truth.a_par),
        ("a_perp", truth.a_perp),
        ("omega_n", truth.omega_n),
    ] {
        let v: Vec<f64> = fits.iter().map(|e| e.value(name).unwrap()).collect();
        let (mean, sd) = mean_std(&v);
        let stderr = sd / (v.len() as f64).sqrt();
        assert!(
            (mean - want).abs() < 4.0 * stderr,
            "{name}: {mean} vs {want} (stderr {stderr})"
        );
    }
}

#[test]
fn weighted_residuals_follow_the_noise() {
    let base = nominal_set();
    let residuals: Vec<f64> = (0..200)
        .map(|seed| {
            fit_parameters(&base.with_noise(70_000 + seed), ParamModel::FourParam)
                .unwrap()
                .weighted_residual
        })
        .collect();
    // Six lines and four nuclear parameters leave two degrees of freedom, so
    // the mean squared weighted residual is about 2/6 of the line variance.
    let ms = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    let expected = 1.6f64.powi(2) * 2.0 / 6.0;
    assert!((ms / expected - 1.0).abs() < 0.3, "{ms} vs {expected}");
}

#[test]
fn noisy_five_parameter_fits_stay_near_the_four_parameter_fit() {
    let base = nominal_set();
    for seed in 0..5 {
        let m = base.with_noise(80_000 + seed);
        let four = fit_parameters(&m, ParamModel::FourParam).unwrap();
        let five = fit_parameters(&m, ParamModel::FiveParam).unwrap();
        assert!(five.weighted_residual <= four.weighted_residual + 1e-9);
        assert!((five.p - four.p).abs() < 5.0, "{} vs {}", five.p, four.p);
        let limit = five.omega_e.abs() * 0.3f64.to_radians().tan();
        assert!(five.omega_ex.unwrap() <= limit * (1.0 + 1e-9));
    }
}
