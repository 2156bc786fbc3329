mod common;

use selcal::recalibrate::{fit_recalibrator, FitOptions, FitWarning, RecalibratorKind, RecalibratorParams};
use selcal::train::{pretrain_recalibrator, TrainConfig};

fn temperature_of(p: &RecalibratorParams) -> f64 {
    p.temperature().expect("temperature recalibrator")
}

#[test]
fn temperature_fit_recovers_the_generating_scale() {
    for k in [2, 4] {
        let d = common::calibrated(10_000, k, 2, 1.0, 10 + k as u64);
        let t = temperature_of(&fit_recalibrator(&d, RecalibratorKind::Temperature, &FitOptions::default()).unwrap().params);
        assert!((0.9..=1.1).contains(&t), "K={k}: T = {t}");

        let doubled = d.with_scaled_logits(2.0).unwrap();
        let t2 = temperature_of(&fit_recalibrator(&doubled, RecalibratorKind::Temperature, &FitOptions::default()).unwrap().params);
        assert!((1.8..=2.2).contains(&t2), "K={k}: doubled T = {t2}");
    }
}

#[test]
fn pretraining_uses_the_same_oracle() {
    let d = common::calibrated(10_000, 3, 2, 1.0, 21);
    let cfg = TrainConfig::default();
    let t = temperature_of(&pretrain_recalibrator(&d, &cfg).unwrap());
    assert!((0.9..=1.1).contains(&t), "T = {t}");
    let t2 = temperature_of(&pretrain_recalibrator(&d.with_scaled_logits(2.0).unwrap(), &cfg).unwrap());
    assert!((1.8..=2.2).contains(&t2), "T = {t2}");
}

#[test]
fn platt_fit_is_monotone_increasing() {
    let d = common::calibrated(5_000, 2, 2, 2.0, 22);
    let cfg = TrainConfig {
        recalibrator: RecalibratorKind::Platt,
        ..TrainConfig::default()
    };
    let p = pretrain_recalibrator(&d, &cfg).unwrap();
    let RecalibratorParams::Platt { w, b } = p else { panic!("{p:?}") };
    // The map is 1 / (1 + exp(w·p + b)), increasing exactly when w < 0.
    assert!(w < 0.0, "w = {w}");
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let out: Vec<f64> = grid.iter().map(|&x| selcal::recalibrate::platt_apply(w, b, x)).collect();
    assert!(out.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn single_correct_example_is_clamped_and_flagged() {
    let d = common::calibrated(50, 2, 1, 1.0, 23);
    let i = (0..d.n()).find(|&i| d.derived().correct[i]).unwrap();
    let one = d.select_rows(&[i]);
    let fit = fit_recalibrator(&one, RecalibratorKind::Temperature, &FitOptions::default()).unwrap();
    assert!(fit.warnings.contains(&FitWarning::DegenerateLabels), "{:?}", fit.warnings);
    assert!(fit.warnings.contains(&FitWarning::ParameterClamped), "{:?}", fit.warnings);
    assert!(fit.params.temperature().unwrap().is_finite());
}

#[test]
fn fitting_reduces_top_label_bce_for_every_kind() {
    let d = common::calibrated(3_000, 2, 1, 3.0, 24);
    for kind in [
        RecalibratorKind::Temperature,
        RecalibratorKind::Platt,
        RecalibratorKind::HistogramBins,
        RecalibratorKind::PlattBins,
    ] {
        let fit = fit_recalibrator(&d, kind, &FitOptions::default()).unwrap();
        let (conf, correct) = fit.params.apply_dataset(&d).unwrap();
        assert!(conf.iter().all(|c| (0.0..=1.0).contains(c)));
        let raw = d.derived();
        let before = selcal::metrics::ece(&raw.top_conf, &raw.correct, 1, 15).unwrap();
        let after = selcal::metrics::ece(&conf, &correct, 1, 15).unwrap();
        assert!(after < before, "{kind:?}: ECE {before} -> {after}");
    }
}
