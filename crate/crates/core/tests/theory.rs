//! Population-level checks of the theory lab against its frozen golden report
//! and against Monte Carlo samples of the mixture.

use std::path::Path;

use selcal::theorylab::{self, monte_carlo_check, SweepSpec, SyntheticSpec, TheoryLab, TheoryReport};

fn config(name: &str) -> SyntheticSpec {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 + 1e-6 * b.abs()
}

#[test]
fn reference_report_matches_golden_file() {
    let golden: TheoryReport = serde_json::from_str(include_str!("golden/theory_reference.json")).unwrap();
    let model = config("theory_reference.json").resolve().unwrap();
    let r = theorylab::verify_theorems_with(&model, 0, 0).unwrap();
    assert_eq!(r.model, golden.model);
    assert_eq!(r.theta_hat, golden.theta_hat);
    assert_eq!(r.quadrature_cells, golden.quadrature_cells);
    for (name, a, b) in [
        ("a1", r.a1, golden.a1),
        ("t0", r.t0, golden.t0),
        ("mass_a", r.mass_a, golden.mass_a),
        ("mass_b", r.mass_b, golden.mass_b),
        ("min_rece", r.min_rece, golden.min_rece),
        ("t_rece", r.t_rece, golden.t_rece),
        ("rece_t1", r.rece_t1, golden.rece_t1),
        ("min_sece", r.min_sece, golden.min_sece),
        ("srece_g0_t0", r.srece_g0_t0, golden.srece_g0_t0),
        ("ece_r_then_s", r.ece_r_then_s, golden.ece_r_then_s),
        ("ece_s_then_r", r.ece_s_then_r, golden.ece_s_then_r),
    ] {
        assert!(close(a, b), "{name}: computed {a}, golden {b}");
    }
    assert_eq!(r.checks, golden.checks);
}

#[test]
fn reference_spec_has_the_expected_structure() {
    let model = config("theory_reference.json").resolve().unwrap();
    let r = theorylab::verify_theorems_with(&model, 0, 0).unwrap();
    // g0 rejects exactly Bset and T0 = 1/a1 recalibrates A perfectly.
    assert!(r.srece_g0_t0 < 1e-3);
    assert!((r.t0 * r.a1 - 1.0).abs() < 1e-12);
    assert!((r.mass_b - 0.2).abs() < 1e-6);
    // Recalibration alone cannot fix both regions, and selection alone at
    // T = 1 cannot fix the overconfident A region.
    assert!(r.min_rece > 10.0 * 1e-2);
    assert!(r.min_sece > 10.0 * 1e-2);
    assert!(r.rece_t0 > 10.0 * r.srece_g0_t0.max(1e-6));
    assert!(r.ece_r_then_s > 1e-2);
    assert!(r.checks.coverage_precondition);
}

#[test]
fn separation_holds_when_sigma_is_larger() {
    // With a wider noise scale the optimal T = 1 selector no longer isolates
    // A exactly, and all four competitors stay above 1e-2.
    let model = config("theory_separation.json").resolve().unwrap();
    for seed in 0..3 {
        let r = theorylab::verify_theorems_with(&model, seed, 0).unwrap();
        assert!(r.checks.all_pass, "seed {seed}: {:?}", r.checks);
        assert!(r.srece_g0_t0 < 1e-3);
        assert!(r.ece_s_then_r > 1e-2, "seed {seed}: {}", r.ece_s_then_r);
    }
}

fn alpha_sweep(alphas: Vec<f64>) -> Vec<theorylab::SweepRow> {
    let sweep = SweepSpec {
        base: config("theory_reference.json"),
        sigmas: vec![],
        alphas,
        betas: vec![],
        r2_over_sigma: Some(0.3),
        seed: 0,
        mc_samples: 0,
    };
    theorylab::theory_sweep(&sweep).unwrap()
}

// Expected to fail on this mixture: the outlier conditional has slope
// proportional to alpha, so a larger alpha makes the outliers more
// miscalibrated, and the optimal selector discards them at every alpha. The
// measured min S-ECE is 0.1169, 0.1195, 0.1195 for alpha 0.1, 0.2, 0.3.
#[test]
fn min_sece_decreases_with_alpha() {
    let rows = alpha_sweep(vec![0.1, 0.2, 0.3]);
    assert_eq!(rows.len(), 3);
    for w in rows.windows(2) {
        assert!(w[0].alpha < w[1].alpha);
        assert!(w[1].min_sece < w[0].min_sece, "{:?}", rows);
    }
    assert!(rows.iter().all(|r| r.srece_g0_t0 < 1e-3));
}

#[test]
fn outlier_scale_drives_recalibration_error() {
    let rows = alpha_sweep(vec![0.1, 0.2, 0.3, 0.4]);
    for w in rows.windows(2) {
        assert!(w[1].min_rece > w[0].min_rece + 0.01, "{rows:?}");
    }
    // Selection at T = 1 rejects the outlier region whatever its slope, so
    // its optimum barely moves.
    let lo = rows.iter().map(|r| r.min_sece).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.min_sece).fold(0.0, f64::max);
    assert!(hi - lo < 0.005, "{rows:?}");
}

#[test]
fn sweep_keeps_the_construction_calibrated() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/theory_sweep.json")).unwrap();
    let sweep: SweepSpec = serde_json::from_str(&text).unwrap();
    let rows = theorylab::theory_sweep(&sweep).unwrap();
    assert_eq!(rows.len(), sweep.alphas.len());
    for r in &rows {
        assert!(r.srece_g0_t0 < 1e-3, "{r:?}");
        assert!(r.min_rece > 1e-2 && r.min_sece > 1e-2, "{r:?}");
    }
}

#[test]
fn closed_form_conditional_matches_a_million_samples() {
    // sigma <= 0.2 and radii <= sigma, as the oracle requires.
    let model = config("theory_reference.json").resolve().unwrap();
    assert!(model.r1 <= model.sigma && model.r2 <= model.sigma);
    let lab = TheoryLab::from_model(&model, 0).unwrap();
    let mc = monte_carlo_check(&lab, &model, 1_000_000, 11).unwrap();
    assert!(mc.bins_checked >= 20, "{mc:?}");
    assert!(mc.max_conditional_discrepancy < 0.02, "{mc:?}");
    assert!((mc.sampled_ece1 - mc.quadrature_rece_t1).abs() < 0.01, "{mc:?}");
    let tol = 3.0 * (0.2f64 * 0.8 / 1e6).sqrt();
    assert!((mc.sampled_outlier_fraction - 0.2).abs() < tol, "{mc:?}");
}

#[test]
fn verify_theorems_is_deterministic() {
    let spec = config("theory_separation.json");
    let model = spec.resolve().unwrap();
    let a = theorylab::verify_theorems_with(&model, 4, 20_000).unwrap();
    let b = theorylab::verify_theorems_with(&model, 4, 20_000).unwrap();
    assert_eq!(a, b);
}
