//! Ramsey traces through fitting, inversion, the identity report and the
//! clock estimate, using only the public API.

use nvspin::clock::{self, ClockConfig};
use nvspin::hamiltonian::exact_nuclear_frequencies;
use nvspin::identity::{cohort_report, CenterRecord, CohortConfig};
use nvspin::inversion::{estimate, MeasuredSet, ParamEstimate, ParamModel, TransitionRecord};
use nvspin::perturbation::{analytic_nuclear_frequencies, validation_sweep, SweepGrid};
use nvspin::ramsey::{self, RamseyConfig, RamseyTrace};
use nvspin::{NVParams, NuclearTransition, Projection};

const DETUNING_HZ: f64 = 533.2;

/// Measure every nuclear line of `truth` by a simulated Ramsey trace driven
/// `DETUNING_HZ` below it.
fn measured_by_ramsey(id: &str, truth: &NVParams, seed: u64) -> MeasuredSet {
    let mut set = MeasuredSet::synthetic(id, truth, Projection::Plus, 1.0, 1e3).unwrap();
    let lines = exact_nuclear_frequencies(truth).unwrap();
    set.transitions = NuclearTransition::all()
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let f = lines.freq(t);
            let rf = f.abs() - DETUNING_HZ;
            let mut cfg = RamseyConfig::paper_scale(seed * 10 + k as u64);
            cfg.true_detuning = DETUNING_HZ;
            let fit = ramsey::fit(&ramsey::simulate(&cfg).unwrap(), None).unwrap();
            let (magnitude, sigma) = ramsey::absolute_frequency(rf, &fit).unwrap();
            TransitionRecord {
                ms: t.ms.value(),
                branch: t.branch,
                freq_hz: f.signum() * magnitude,
                sigma_hz: sigma,
            }
        })
        .collect();
    set
}

#[test]
fn traces_to_parameters() {
    let truth = NVParams::nominal();
    let set = measured_by_ramsey("nv", &truth, 3);
    let e = estimate(&set, ParamModel::FourParam).unwrap();
    for (name, want) in [
        ("P", truth.p),
        ("a_par", truth.a_par),
        ("a_perp", truth.a_perp),
    ] {
        let (got, s) = (e.value(name).unwrap(), e.sigma(name).unwrap());
        assert!(
            (got - want).abs() < 4.0 * s,
            "{name}: {got} +/- {s} vs {want}"
        );
    }
    assert!(e.weighted_residual < 10.0);
    let ratio = e.gamma_ratio.unwrap();
    assert!((ratio.value - truth.omega_e / truth.omega_n).abs() < 4.0 * ratio.sigma);
}

#[test]
fn shifted_centre_stands_out_in_the_cohort() {
    let records: Vec<CenterRecord> = (0..4)
        .map(|k| {
            let shift = if k == 3 { 40.0 } else { 0.0 };
            let truth = NVParams {
                p: NVParams::nominal().p + shift,
                ..NVParams::nominal()
            };
            let id = format!("c{k}");
            CenterRecord {
                center_id: id.clone(),
                cohort: if k == 3 { "in_SIL" } else { "far_from_SIL" }.into(),
                estimate: estimate(
                    &measured_by_ramsey(&id, &truth, 100 + k),
                    ParamModel::FourParam,
                )
                .unwrap(),
            }
        })
        .collect();
    let report = cohort_report(&records, &CohortConfig::default()).unwrap();
    let p = report.parameter("P").unwrap();
    assert!(!p.pull("c3").unwrap().consistent);
    assert!(p.pull("c3").unwrap().pull_inclusive > 10.0);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 1 + 4 * records.len());
}

#[test]
fn public_outputs_round_trip() {
    let truth = NVParams::nominal();
    let set = measured_by_ramsey("rt", &truth, 9);
    let text = serde_json::to_string(&set).unwrap();
    assert_eq!(serde_json::from_str::<MeasuredSet>(&text).unwrap(), set);

    let e = estimate(&set, ParamModel::FourParam).unwrap();
    let text = serde_json::to_string(&e).unwrap();
    assert_eq!(serde_json::from_str::<ParamEstimate>(&text).unwrap(), e);

    let trace = ramsey::simulate(&RamseyConfig::paper_scale(5)).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    assert_eq!(RamseyTrace::read_csv(buf.as_slice()).unwrap(), trace);

    let cfg = ClockConfig::default();
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<ClockConfig>(&text).unwrap(), cfg);
}

#[test]
fn sweep_report_agrees_with_direct_evaluation() {
    let report = validation_sweep(&SweepGrid::single(510.0, 0.0, 0.0));
    assert_eq!(report.rows.len(), 6);
    let p = nvspin::perturbation::sweep_params(510.0, 0.0, 0.0);
    let exact = exact_nuclear_frequencies(&p).unwrap();
    let analytic = analytic_nuclear_frequencies(&p, true).unwrap();
    for row in &report.rows {
        assert_eq!(row.exact_hz, exact.freq(row.transition));
        assert_eq!(row.analytic_hz, analytic.freq(row.transition));
        assert!(row.deviation_hz.abs() < 0.05);
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn clock_sizing_matches_the_density_conversion() {
    let cfg = ClockConfig::default();
    let n = clock::density_to_count(6.0, 1.0);
    let v = clock::instability(&cfg, n, 1.0).unwrap();
    let needed = clock::required_n(&cfg, v, 1.0).unwrap() as f64;
    assert!((needed - n).abs() <= 1.0);
    let rows = clock::emit_curve(&cfg, 1.0, 1e16, 9).unwrap();
    assert!((rows[0].instability_1s - cfg.prefactor()).abs() < 1e-18);
}
