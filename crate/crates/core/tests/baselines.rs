mod common;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use selcal::baselines::{self, BaselineMethod, Ranking};
use selcal::metrics::EvalWarning;
use selcal::RecalibratorParams;

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - mean) * (y - mean)).sum();
    let var: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    cov / var
}

#[test]
fn mahalanobis_ranking_recovers_the_true_distance_order() {
    let n = 5_000;
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let z = Array2::from_shape_fn((n, 3), |_| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    // x = L z + μ with a correlated, anisotropic L.
    let l = ndarray::arr2(&[[2.0, 0.0, 0.0], [1.0, 0.5, 0.0], [-0.5, 0.3, 3.0]]);
    let x = z.dot(&l.t()) + &ndarray::arr1(&[5.0, -1.0, 2.0]);
    let truth: Vec<f64> = z.rows().into_iter().map(|r| -r.dot(&r)).collect();
    let ranking = baselines::mahalanobis_rank(x.view(), 1e-3).unwrap();
    assert_eq!(ranking.method, BaselineMethod::Mahalanobis);
    let rho = spearman(&ranking.scores, &truth);
    assert!(rho > 0.99, "Spearman {rho}");
}

#[test]
fn isolation_forest_is_deterministic_and_flags_planted_outliers() {
    let n = 1_000;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut x = Array2::from_shape_fn((n, 2), |_| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    for i in 0..10 {
        x[[i, 0]] += 12.0;
    }
    let a = baselines::iforest_rank(x.view(), 100, 256, 7).unwrap();
    let b = baselines::iforest_rank(x.view(), 100, 256, 7).unwrap();
    assert_eq!(a, b);
    let c = baselines::iforest_rank(x.view(), 100, 256, 8).unwrap();
    assert_ne!(a.scores, c.scores);

    let mask = baselines::select_at_coverage(&a, 0.99).unwrap();
    assert_eq!(mask.iter().filter(|&&k| k).count(), 990);
    assert!((0..10).all(|i| !mask[i]), "planted outliers kept");
}

#[test]
fn select_at_coverage_examples() {
    let r = Ranking::new(vec![0.1, 0.9, 0.5, 0.7], BaselineMethod::Iforest).unwrap();
    assert_eq!(baselines::select_at_coverage(&r, 0.5).unwrap(), vec![false, true, false, true]);
    assert_eq!(baselines::select_at_coverage(&r, 0.6).unwrap(), vec![false, true, true, true]);
    assert_eq!(baselines::select_at_coverage(&r, 1.0).unwrap(), vec![true; 4]);
    // Ties go to the lower index.
    let tied = Ranking::new(vec![1.0; 5], BaselineMethod::Mahalanobis).unwrap();
    assert_eq!(
        baselines::select_at_coverage(&tied, 0.4).unwrap(),
        vec![true, true, false, false, false]
    );
    assert!(baselines::select_at_coverage(&r, 0.0).is_err());
    assert!(baselines::select_at_coverage(&r, 1.5).is_err());
    assert!(Ranking::new(vec![0.0, f64::NAN], BaselineMethod::Iforest).is_err());
}

#[test]
fn confidence_baseline_keeps_the_most_confident_rows() {
    let d = common::calibrated(2_000, 3, 1, 1.0, 52);
    let conf = d.derived().top_conf;
    let ranking = baselines::confidence_rank(&conf).unwrap();
    let identity = RecalibratorParams::Temperature { log_t: 0.0 };
    let r = baselines::evaluate_ranking(&ranking, &identity, &d, 0.5, 15).unwrap();
    assert_eq!(r.n_accepted, 1_000);
    let mut sorted = conf.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    assert_eq!(r.tau, sorted[999]);
    let full = baselines::evaluate_ranking(&ranking, &identity, &d, 1.0, 15).unwrap();
    assert!(r.selective_accuracy > full.selective_accuracy);
}

#[test]
fn confidence_baseline_never_splits_ties() {
    let d = common::calibrated(10, 2, 1, 1.0, 53);
    let ranking = Ranking::new(vec![0.7; 10], BaselineMethod::Confidence).unwrap();
    let identity = RecalibratorParams::Temperature { log_t: 0.0 };
    let r = baselines::evaluate_ranking(&ranking, &identity, &d, 0.5, 5).unwrap();
    assert_eq!(r.n_accepted, 10);
    assert!(r.warnings.contains(&EvalWarning::DegenerateThreshold));
}
