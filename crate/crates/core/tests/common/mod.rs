//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use selcal::theorylab::SyntheticSpec;
use selcal::CalibrationDataset;

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn spec(name: &str) -> SyntheticSpec {
    serde_json::from_str(&std::fs::read_to_string(configs_dir().join(name)).unwrap()).unwrap()
}

/// Labels drawn from softmax(z) with logits stored as `logit_factor · z`, so
/// the outputs are calibrated at T = `logit_factor`. With a factor of 1,
/// correctness is Bernoulli(top_conf).
pub fn calibrated(n: usize, k: usize, embed_dim: usize, logit_factor: f32, seed: u64) -> CalibrationDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logits = Array2::<f32>::zeros((n, k));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<f64> = (0..k).map(|_| 1.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let p = selcal::math::softmax(&z);
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut label = k - 1;
        for (c, &pc) in p.iter().enumerate() {
            acc += pc;
            if u < acc {
                label = c;
                break;
            }
        }
        labels.push(label as u32);
        for c in 0..k {
            logits[[i, c]] = z[c] as f32 * logit_factor;
        }
    }
    let embeddings = Array2::from_shape_fn((n, embed_dim), |_| Distribution::<f32>::sample(&StandardNormal, &mut rng));
    CalibrationDataset::new("calibrated", embeddings, logits, labels).unwrap()
}

/// Two-cluster data: the inlier cluster is calibrated under T = 2 and the
/// outlier cluster carries the opposite-sign distortion.
pub fn two_cluster(n: usize, seed: u64) -> CalibrationDataset {
    selcal::cli::synthetic_dataset(&spec("two_cluster.json"), n, seed, Some(2.0)).unwrap()
}
