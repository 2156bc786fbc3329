mod common;

use ndarray::{Array1, Array2};
use selcal::metrics::{self, EvalWarning};
use selcal::selector::{Dense, SelectorParams};
use selcal::theorylab::{self, ProjectedModel};
use selcal::train::{TrainConfig, TrainedModel, TrainingTrace};
use selcal::RecalibratorParams;

fn model(selector: SelectorParams, recalibrator: RecalibratorParams) -> TrainedModel {
    TrainedModel {
        selector,
        recalibrator,
        config: TrainConfig::default(),
        trace: TrainingTrace {
            initial_loss: 0.0,
            final_loss: 0.0,
            epoch_losses: Vec::new(),
        },
    }
}

fn identity() -> RecalibratorParams {
    RecalibratorParams::Temperature { log_t: 0.0 }
}

#[test]
fn full_coverage_matches_unselective_ece() {
    let d = common::calibrated(5_000, 3, 4, 1.3, 40);
    let m = model(SelectorParams::init(4, &[8], 1).unwrap(), identity());
    let r = metrics::selective_eval(&m, &d, 1.0, 15).unwrap();
    let derived = d.derived();
    let plain = metrics::ece(&derived.top_conf, &derived.correct, 1, 15).unwrap();
    assert_eq!(r.n_accepted, d.n());
    assert!((r.ece1 - plain).abs() < 1e-12, "{} vs {plain}", r.ece1);
}

#[test]
fn constant_selector_accepts_everything_and_warns() {
    let d = common::calibrated(1_000, 2, 3, 1.0, 41);
    let m = model(SelectorParams::zeros(3, &[4]).unwrap(), identity());
    let scores = m.scores(&d).unwrap();
    assert!(scores.iter().all(|&s| s == 0.5));
    let r = metrics::selective_eval(&m, &d, 0.8, 15).unwrap();
    assert_eq!(r.coverage_achieved, 1.0);
    assert!(r.warnings.contains(&EvalWarning::DegenerateThreshold), "{:?}", r.warnings);
}

/// Selector that scores sigmoid(k(|θ̂ᵀx| - c)): the two hidden ReLUs compute
/// max(v, 0) and max(-v, 0), whose sum is |v|.
fn abs_projection_selector(theta_hat: &[f64], c: f64, k: f64) -> SelectorParams {
    let p = theta_hat.len();
    let mut w1 = Array2::zeros((2, p));
    for (j, &t) in theta_hat.iter().enumerate() {
        w1[[0, j]] = t;
        w1[[1, j]] = -t;
    }
    SelectorParams {
        input_dim: p,
        hidden_dims: vec![2],
        layers: vec![
            Dense {
                weight: w1,
                bias: Array1::zeros(2),
            },
            Dense {
                weight: Array2::from_elem((1, 2), k),
                bias: Array1::from_elem(1, -k * c),
            },
        ],
        tau: None,
    }
}

#[test]
fn oracle_selector_and_inlier_temperature_are_calibrated() {
    let spec = common::spec("theory_reference.json");
    let mixture = spec.resolve().unwrap();
    let seed = 0;
    let pm = ProjectedModel::new(&mixture, theorylab::fit_theta_hat(&mixture, seed).unwrap()).unwrap();
    // The inlier intervals sit farther from the origin than the outlier ones.
    let b_outer = pm.b_intervals[1].1;
    let a_inner = pm.a_intervals[1].0;
    assert!(a_inner > b_outer);
    let c = 0.5 * (a_inner + b_outer);
    let k = 200.0 / (a_inner - b_outer);
    let oracle = model(
        abs_projection_selector(&pm.theta_hat, c, k),
        RecalibratorParams::Temperature { log_t: pm.t0().ln() },
    );

    let d = selcal::cli::synthetic_dataset(&spec, 50_000, seed, None).unwrap();
    let r = metrics::selective_eval(&oracle, &d, 0.8, 15).unwrap();
    assert!(r.ece1 < 0.01, "oracle ECE1 {}", r.ece1);
    assert!((r.coverage_achieved - 0.8).abs() < 0.01);

    // Without selection the outliers spoil calibration at T0.
    let all = metrics::selective_eval(&oracle, &d, 1.0, 15).unwrap();
    assert!(all.ece1 > r.ece1, "{} <= {}", all.ece1, r.ece1);
}

#[test]
fn reliability_bins_of_calibrated_outputs_track_the_diagonal() {
    let d = common::calibrated(100_000, 2, 1, 1.0, 42);
    let derived = d.derived();
    let bins = metrics::reliability_bins(&derived.top_conf, &derived.correct, 15).unwrap();
    assert_eq!(bins.len(), 15);
    assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), d.n());
    let worst = bins.iter().map(|b| (b.accuracy - b.mean_conf).abs()).fold(0.0, f64::max);
    assert!(worst < 0.02, "max bin gap {worst}");
    assert!(bins.windows(2).all(|w| w[0].mean_conf <= w[1].mean_conf));
}

#[test]
fn reliability_bins_small_examples() {
    let conf = [0.6, 0.7, 0.8, 0.9];
    let correct = [true, false, true, true];
    let rows = metrics::reliability_bins(&conf, &correct, 2).unwrap();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].mean_conf - 0.65).abs() < 1e-12 && rows[0].accuracy == 0.5 && rows[0].count == 2);
    assert!((rows[1].mean_conf - 0.85).abs() < 1e-12 && rows[1].accuracy == 1.0 && rows[1].count == 2);

    let one = metrics::reliability_bins(&conf, &correct, 1).unwrap();
    assert_eq!(one.len(), 1);
    assert!((one[0].mean_conf - 0.75).abs() < 1e-12 && one[0].accuracy == 0.75);
    assert!(metrics::ece(&conf, &correct, 1, 1).unwrap() < 1e-12);
}

#[test]
fn coverage_curve_reports_every_grid_point_and_its_area() {
    let d = common::calibrated(4_000, 2, 2, 2.0, 43);
    let m = model(SelectorParams::init(2, &[4], 3).unwrap(), identity());
    let grid = metrics::parse_grid("0.5:1.0:0.05").unwrap();
    assert_eq!(grid.len(), 11);
    let curve = metrics::coverage_auc(&m, &d, &grid, 15).unwrap();
    assert_eq!(curve.ece1.len(), 11);
    for (&b, &c) in grid.iter().zip(&curve.coverage) {
        assert!(c >= b - 1e-12, "coverage {c} below {b}");
    }
    let lo = curve.ece1.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = curve.ece1.iter().cloned().fold(0.0, f64::max);
    assert!(curve.auc.ece1 >= lo && curve.auc.ece1 <= hi);

    // A flat curve integrates to its value.
    assert!((metrics::normalized_auc(&[0.5, 0.75, 1.0], &[0.2, 0.2, 0.2]) - 0.2).abs() < 1e-15);
    assert!(metrics::parse_grid("0.4:1.0:0.1").is_err());
}

#[test]
fn tuned_threshold_transfers_between_splits() {
    let d = common::calibrated(6_000, 2, 3, 1.0, 44);
    let parts = selcal::dataset::split(&d, &[0.5, 0.5], 7).unwrap();
    let m = model(SelectorParams::init(3, &[8], 5).unwrap(), identity());
    let r = metrics::selective_eval_tuned(&m, &parts[0], &parts[1], 0.7, 15).unwrap();
    assert!((r.coverage_achieved - 0.7).abs() < 0.05, "{}", r.coverage_achieved);
}
