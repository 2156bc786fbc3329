//! Soft selector: an MLP with ReLU hidden layers and a sigmoid output over
//! embeddings, plus thresholding to a hard selector and the coverage bound.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, ceil_tolerant, sigmoid};

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape (out, in).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorParams {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub layers: Vec<Dense>,
    /// Inference threshold, unset until chosen on tuning data.
    pub tau: Option<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    scores: Array1<f64>,
}

impl ForwardCache {
    pub fn scores(&self) -> &Array1<f64> {
        &self.scores
    }
}

impl SelectorParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dims: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("selector needs embed_dim > 0".into()));
        }
        if hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let mut rng = math::rng(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            layers,
            tau: None,
        })
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize]) -> Result<Self> {
        let mut p = Self::init(input_dim, hidden_dims, 0)?;
        for layer in &mut p.layers {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(1);
        if self.layers.len() != dims.len() - 1 {
            return Err(Error::Validation(format!(
                "{} layers for hidden dims {:?}",
                self.layers.len(),
                self.hidden_dims
            )));
        }
        for (i, (layer, w)) in self.layers.iter().zip(dims.windows(2)).enumerate() {
            if layer.weight.dim() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return Err(Error::Validation(format!(
                    "layer {i} has shape {:?}/{}, expected ({}, {})",
                    layer.weight.dim(),
                    layer.bias.len(),
                    w[1],
                    w[0]
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("layer {i} has non-finite weights")));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.num_params(), "flat parameter length");
        let mut it = v.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    /// Rounds every parameter to the nearest f32, matching what the model
    /// file can store.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|w| f64::from(w as f32));
            l.bias.mapv_inplace(|b| f64::from(b as f32));
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim {
            return Err(Error::Shape(format!(
                "embedding has dimension {d}, selector expects {}",
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward_one(&self, embedding: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_dim(embedding.len())?;
        let mut h = embedding.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.weight.dot(&h) + &l.bias;
            if i < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(sigmoid(h[0]))
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(batch)?.scores)
    }

    pub fn forward_cached(&self, batch: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_dim(batch.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = batch.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.weight.t()) + &l.bias;
            inputs.push(h);
            h = if i < last { z.mapv(relu) } else { z };
        }
        let scores = h.column(0).mapv(sigmoid);
        Ok(ForwardCache { inputs, scores })
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss's partials with respect to the batch scores. Returned in the
    /// [`flat`](Self::flat) layout.
    pub fn backward(&self, cache: &ForwardCache, d_scores: &[f64]) -> Result<Vec<f64>> {
        let n = cache.scores.len();
        if d_scores.len() != n {
            return Err(Error::Shape(format!(
                "{} upstream gradients for a batch of {n}",
                d_scores.len()
            )));
        }
        // Through the sigmoid.
        let mut delta = Array2::from_shape_fn((n, 1), |(i, _)| {
            let s = cache.scores[i];
            d_scores[i] * s * (1.0 - s)
        });
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            grads.push((delta.t().dot(input), delta.sum_axis(Axis(0))));
            if i > 0 {
                let mut up = delta.dot(&l.weight);
                // `input` is the ReLU output of the previous layer.
                up.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = up;
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (dw, db) in grads.into_iter().rev() {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        Ok(flat)
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Threshold accepting the `ceil(beta * n)` highest scores; every score tied
/// with the threshold is accepted as well.
pub fn choose_threshold(scores: &[f64], beta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Config("cannot choose a threshold on no scores".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("coverage must be in (0, 1], got {beta}")));
    }
    let n = scores.len();
    let keep = ceil_tolerant(beta * n as f64).clamp(1, n);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[n - keep])
}

/// Fraction of scores at or above `tau`.
pub fn coverage_at(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}

/// Two-sided Hoeffding interval around an empirical coverage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageBound {
    pub beta_tilde: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub n_u: usize,
}

impl CoverageBound {
    pub fn lower(&self) -> f64 {
        self.beta_tilde - self.epsilon
    }

    pub fn upper(&self) -> f64 {
        self.beta_tilde + self.epsilon
    }

    pub fn contains(&self, c: f64) -> bool {
        (self.lower()..=self.upper()).contains(&c)
    }
}

pub fn hoeffding_epsilon(n_u: usize, delta: f64) -> f64 {
    ((2.0 / delta).ln() / (2.0 * n_u as f64)).sqrt()
}

pub fn coverage_bound(beta_tilde: f64, n_u: usize, delta: f64) -> Result<CoverageBound> {
    if n_u == 0 {
        return Err(Error::Config("n_u must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(CoverageBound {
        beta_tilde,
        epsilon: hoeffding_epsilon(n_u, delta),
        delta,
        n_u,
    })
}

/// Lowers the threshold until the Hoeffding lower bound on coverage clears
/// `beta`, when that is achievable.
pub fn guaranteed_threshold(scores: &[f64], beta: f64, delta: f64) -> Result<(f64, CoverageBound)> {
    let eps = coverage_bound(beta, scores.len(), delta)?.epsilon;
    let target = (beta + eps).min(1.0);
    let tau = choose_threshold(scores, target)?;
    let bound = coverage_bound(coverage_at(scores, tau), scores.len(), delta)?;
    Ok((tau, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_give_one_half() {
        let p = SelectorParams::zeros(3, &[4, 4]).unwrap();
        assert_eq!(p.forward_one(array![1.0, -2.0, 5.0].view()).unwrap(), 0.5);
    }

    #[test]
    fn output_bias_ten() {
        let mut p = SelectorParams::zeros(2, &[3]).unwrap();
        p.layers.last_mut().unwrap().bias[0] = 10.0;
        let s = p.forward_one(array![0.3, 0.7].view()).unwrap();
        assert!((s - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
        assert!((s - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn forward_is_deterministic_and_batched_matches_single() {
        let p = SelectorParams::init(3, &[5, 4], 11).unwrap();
        let x = array![[0.2, -0.4, 1.0], [1.5, 0.1, -0.3]];
        let batch = p.forward(x.view()).unwrap();
        for i in 0..2 {
            let one = p.forward_one(x.row(i)).unwrap();
            assert!((batch[i] - one).abs() < 1e-15);
            assert_eq!(one, p.forward_one(x.row(i)).unwrap());
        }
        assert!(p.forward_one(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = SelectorParams::init(3, &[4], 2).unwrap();
        let x = array![[0.2, -0.4, 1.0], [1.5, 0.1, -0.3]];
        let cache = p.forward_cached(x.view()).unwrap();
        let g = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(p.backward(&cache, &[0.0]).is_err());
    }

    #[test]
    fn identical_points_add_up() {
        let p = SelectorParams::init(2, &[3], 5).unwrap();
        let one = array![[0.3, -0.8]];
        let three = array![[0.3, -0.8], [0.3, -0.8], [0.3, -0.8]];
        let g1 = p.backward(&p.forward_cached(one.view()).unwrap(), &[0.5]).unwrap();
        let g3 = p
            .backward(&p.forward_cached(three.view()).unwrap(), &[0.5, 0.5, 0.5])
            .unwrap();
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = SelectorParams::init(3, &[4, 2], 9).unwrap();
        let mut q = SelectorParams::zeros(3, &[4, 2]).unwrap();
        q.set_flat(&p.flat());
        assert_eq!(p, q);
    }

    #[test]
    fn threshold_examples() {
        let s = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(choose_threshold(&s, 0.5).unwrap(), 0.3);
        assert_eq!(coverage_at(&s, 0.3), 0.5);
        assert_eq!(choose_threshold(&s, 1.0).unwrap(), 0.1);
        let tied = [0.7; 8];
        let tau = choose_threshold(&tied, 0.25).unwrap();
        assert_eq!(tau, 0.7);
        assert_eq!(coverage_at(&tied, tau), 1.0);
        assert!(choose_threshold(&[], 0.5).is_err());
        assert!(choose_threshold(&s, 0.0).is_err());
    }

    #[test]
    fn hoeffding_examples() {
        let b = coverage_bound(0.9, 10_000, 0.05).unwrap();
        assert!((b.epsilon - (40f64.ln() / 20_000.0).sqrt()).abs() < 1e-15);
        assert!((b.epsilon - 0.013581).abs() < 1e-6);
        let b4 = coverage_bound(0.9, 40_000, 0.05).unwrap();
        assert!((b4.epsilon * 2.0 - b.epsilon).abs() < 1e-15);
        let vac = coverage_bound(0.5, 1, 2.0 / std::f64::consts::E.powi(2)).unwrap();
        assert!((vac.epsilon - 1.0).abs() < 1e-12);
        assert!(coverage_bound(0.5, 10, 1.0).is_err());
        assert!(coverage_bound(0.5, 0, 0.1).is_err());
    }

    #[test]
    fn guaranteed_threshold_clears_target() {
        let scores: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.618).fract()).collect();
        let (tau, bound) = guaranteed_threshold(&scores, 0.8, 0.05).unwrap();
        assert!(bound.lower() >= 0.8 - 1e-12, "{bound:?}");
        assert!(tau <= choose_threshold(&scores, 0.8).unwrap());
    }

    proptest! {
        #[test]
        fn coverage_within_tie_band(
            raw in prop::collection::vec(0u8..20, 1..60),
            beta in 0.01f64..=1.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 20.0).collect();
            let n = scores.len() as f64;
            let tau = choose_threshold(&scores, beta).unwrap();
            let cov = coverage_at(&scores, tau);
            let ties = scores.iter().filter(|&&s| s == tau).count() as f64;
            prop_assert!(cov >= beta - 1e-12);
            prop_assert!(cov <= beta + ties / n + 1e-12);
        }

        #[test]
        fn threshold_monotone_in_beta(
            raw in prop::collection::vec(0.0f64..1.0, 1..60),
            b1 in 0.01f64..=1.0,
            b2 in 0.01f64..=1.0,
        ) {
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(choose_threshold(&raw, lo).unwrap() >= choose_threshold(&raw, hi).unwrap());
        }
    }
}
