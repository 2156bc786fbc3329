//! Selection baselines: rank instances, then keep the top fraction.
//!
//! All baselines act on the recalibrated model, so the confidence ranking
//! uses recalibrated top-label confidences.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::math::{ceil_tolerant, rng};
use crate::metrics::{self, EvalReport};
use crate::recalibrate::RecalibratorParams;
use crate::selector::choose_threshold;

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_PSI: usize = 256;
pub const DEFAULT_MAHALANOBIS_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Confidence,
    Iforest,
    Mahalanobis,
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "iforest" => Ok(Self::Iforest),
            "mahalanobis" => Ok(Self::Mahalanobis),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?} (expected confidence, iforest or mahalanobis)"
            ))),
        }
    }
}

/// Higher score means "keep first".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub scores: Vec<f64>,
    pub method: BaselineMethod,
}

impl Ranking {
    pub fn new(scores: Vec<f64>, method: BaselineMethod) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite ranking score at index {i}")));
        }
        Ok(Self { scores, method })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// CSV with columns `index,score`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "score"])?;
        for (i, s) in self.scores.iter().enumerate() {
            out.write_record([i.to_string(), s.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn confidence_rank(top_conf: &[f64]) -> Result<Ranking> {
    Ranking::new(top_conf.to_vec(), BaselineMethod::Confidence)
}

/// Keeps exactly ⌈βn⌉ of the highest scores; among equal scores the lower
/// index wins.
pub fn select_at_coverage(ranking: &Ranking, beta: f64) -> Result<Vec<bool>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("coverage must lie in (0, 1], got {beta}")));
    }
    let n = ranking.len();
    let keep = ceil_tolerant(beta * n as f64).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ranking.scores[b].total_cmp(&ranking.scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Selective evaluation of a baseline ranking at coverage `beta`.
///
/// The confidence baseline accepts every instance tied with the threshold,
/// so equal confidences are never split. The embedding baselines keep exactly
/// ⌈βn⌉ instances.
pub fn evaluate_ranking(
    ranking: &Ranking,
    recal: &RecalibratorParams,
    d: &CalibrationDataset,
    beta: f64,
    m: usize,
) -> Result<EvalReport> {
    if ranking.len() != d.n() {
        return Err(Error::Shape(format!("ranking of {} rows for {} rows", ranking.len(), d.n())));
    }
    match ranking.method {
        BaselineMethod::Confidence => {
            let tau = choose_threshold(&ranking.scores, beta)?;
            metrics::evaluate_at_threshold(&ranking.scores, tau, recal, d, beta, m)
        }
        _ => {
            let mask = select_at_coverage(ranking, beta)?;
            let tau = (0..mask.len())
                .filter(|&i| mask[i])
                .map(|i| ranking.scores[i])
                .fold(f64::INFINITY, f64::min);
            metrics::evaluate_mask(&mask, tau, recal, d, beta, m)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: usize, right: usize },
}

/// Arena-allocated isolation tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    /// Effective subsample size, min(ψ, n).
    pub psi: usize,
    pub embed_dim: usize,
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

pub fn height_limit(psi: usize) -> usize {
    (psi.max(2) as f64).log2().ceil() as usize
}

fn build_tree(x: ArrayView2<'_, f64>, rows: Vec<usize>, limit: usize, r: &mut crate::math::Rng) -> IsolationTree {
    let mut nodes = Vec::new();
    grow(x, rows, 0, limit, r, &mut nodes);
    IsolationTree { nodes }
}

fn grow(
    x: ArrayView2<'_, f64>,
    rows: Vec<usize>,
    depth: usize,
    limit: usize,
    r: &mut crate::math::Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf { size: rows.len() });
    if depth >= limit || rows.len() <= 1 {
        return id;
    }
    let ranges: Vec<(usize, f64, f64)> = (0..x.ncols())
        .filter_map(|f| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(x[[i, f]]), hi.max(x[[i, f]]))
            });
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return id;
    }
    let (feature, lo, hi) = ranges[r.random_range(0..ranges.len())];
    let value = r.random_range(lo..hi);
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, feature]] < value);
    let left = grow(x, left_rows, depth + 1, limit, r, nodes);
    let right = grow(x, right_rows, depth + 1, limit, r, nodes);
    nodes[id] = Node::Split { feature, value, left, right };
    id
}

impl IsolationTree {
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Depth of the leaf reached plus the expected remaining depth of its
    /// unsplit points.
    pub fn path_length(&self, point: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[i] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split { feature, value, left, right } => {
                    i = if point[feature] < value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

pub fn iforest_fit(embeddings: ArrayView2<'_, f64>, trees: usize, psi: usize, seed: u64) -> Result<IsolationForestModel> {
    let (n, dim) = embeddings.dim();
    if dim == 0 {
        return Err(Error::Validation("isolation forest needs embed_dim > 0".into()));
    }
    if n < 2 {
        return Err(Error::Validation(format!("isolation forest needs at least 2 rows, got {n}")));
    }
    if trees == 0 || psi < 2 {
        return Err(Error::Config("isolation forest needs trees >= 1 and psi >= 2".into()));
    }
    let psi = psi.min(n);
    let limit = height_limit(psi);
    let mut r = rng(seed);
    let trees = (0..trees)
        .map(|_| {
            let rows = sample(&mut r, n, psi).into_vec();
            build_tree(embeddings, rows, limit, &mut r)
        })
        .collect();
    Ok(IsolationForestModel { trees, psi, embed_dim: dim })
}

impl IsolationForestModel {
    /// Typicality −2^(−E[h]/c(ψ)) in (−1, 0); higher is more typical.
    pub fn score(&self, point: ArrayView1<'_, f64>) -> Result<f64> {
        if point.len() != self.embed_dim {
            return Err(Error::Shape(format!(
                "point has dimension {}, forest expects {}",
                point.len(),
                self.embed_dim
            )));
        }
        let mean_path = self.trees.iter().map(|t| t.path_length(point)).sum::<f64>() / self.trees.len() as f64;
        Ok(-(2f64).powf(-mean_path / average_path_length(self.psi)))
    }

    pub fn score_all(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.score(x.row(i)))
            .collect()
    }
}

pub fn iforest_rank(embeddings: ArrayView2<'_, f64>, trees: usize, psi: usize, seed: u64) -> Result<Ranking> {
    let forest = iforest_fit(embeddings, trees, psi, seed)?;
    Ranking::new(forest.score_all(embeddings)?, BaselineMethod::Iforest)
}

/// Score −(x−μ)ᵀ(Σ+εI)⁻¹(x−μ) under the sample mean and covariance.
pub fn mahalanobis_rank(embeddings: ArrayView2<'_, f64>, eps: f64) -> Result<Ranking> {
    let (n, dim) = embeddings.dim();
    if n == 0 || dim == 0 {
        return Err(Error::Validation("Mahalanobis ranking needs a non-empty embedding matrix".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("ridge must be positive, got {eps}")));
    }
    if n <= dim {
        log::warn!("Mahalanobis ranking with n={n} <= embed_dim={dim}; relying on the ridge");
    }
    let mean = embeddings.mean_axis(Axis(0)).expect("n > 0");
    let centered = &embeddings - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;
    let mut m = DMatrix::from_fn(dim, dim, |i, j| cov[[i, j]]);
    for i in 0..dim {
        m[(i, i)] += eps;
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numeric("regularized covariance is not positive definite".into()))?;
    let scores = (0..n)
        .into_par_iter()
        .map(|i| {
            let v = DVector::from_iterator(dim, centered.row(i).iter().copied());
            -v.dot(&chol.solve(&v))
        })
        .collect();
    Ranking::new(scores, BaselineMethod::Mahalanobis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut r))
    }

    fn mask_indices(mask: &[bool]) -> Vec<usize> {
        (0..mask.len()).filter(|&i| mask[i]).collect()
    }

    #[test]
    fn confidence_selection_examples() {
        let r = confidence_rank(&[0.9, 0.2, 0.5]).unwrap();
        assert_eq!(mask_indices(&select_at_coverage(&r, 2.0 / 3.0).unwrap()), vec![0, 2]);
        assert_eq!(mask_indices(&select_at_coverage(&r, 1.0).unwrap()), vec![0, 1, 2]);
        let tied = Ranking::new(vec![0.3, 0.8, 0.8, 0.1], BaselineMethod::Confidence).unwrap();
        assert_eq!(mask_indices(&select_at_coverage(&tied, 0.25).unwrap()), vec![1]);
        let four = Ranking::new(vec![0.1, 0.4, 0.3, 0.2], BaselineMethod::Mahalanobis).unwrap();
        assert_eq!(mask_indices(&select_at_coverage(&four, 0.75).unwrap()), vec![1, 2, 3]);
    }

    #[test]
    fn path_length_normalizer() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c256 = average_path_length(256);
        assert!((c256 - 10.2448).abs() < 1e-3, "{c256}");
        assert_eq!(height_limit(256), 8);
        assert_eq!(height_limit(2), 1);
    }

    #[test]
    fn degenerate_forest() {
        let x = gaussian(2, 3, 1);
        let f = iforest_fit(x.view(), 1, 2, 7).unwrap();
        for i in 0..2 {
            let h = f.trees[0].path_length(x.row(i));
            assert!(h == 0.0 || h == 1.0, "{h}");
            assert!(f.score(x.row(i)).unwrap().is_finite());
        }
    }

    #[test]
    fn forest_respects_height_limit_and_ranges() {
        let x = gaussian(600, 4, 3);
        let f = iforest_fit(x.view(), 20, 256, 11).unwrap();
        for t in &f.trees {
            assert!(t.depth() <= height_limit(256));
            for node in &t.nodes {
                if let Node::Split { feature, value, .. } = node {
                    let col = x.column(*feature);
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert!(*value >= lo && *value <= hi);
                }
            }
        }
        let a = f.score(x.row(5)).unwrap();
        assert_eq!(a, f.score(x.row(5)).unwrap());
        assert!(a > -1.0 && a < 0.0);
        assert!(iforest_fit(Array2::<f64>::zeros((5, 0)).view(), 10, 256, 0).is_err());
    }

    #[test]
    fn mahalanobis_center_and_ridge_limit() {
        let x = gaussian(400, 3, 5);
        let mean = x.mean_axis(Axis(0)).unwrap();
        // Mirrored rows plus the origin: the sample mean is exactly zero.
        let sym = ndarray::concatenate(Axis(0), &[Array2::zeros((1, 3)).view(), x.view(), (-&x).view()]).unwrap();
        let r = mahalanobis_rank(sym.view(), 1e-3).unwrap();
        assert!(r.scores[0].abs() < 1e-12);
        assert!(r.scores.iter().all(|&s| s <= r.scores[0]));

        let big = 1e9;
        let r = mahalanobis_rank(x.view(), big).unwrap();
        let euclid: Vec<f64> = (0..x.nrows())
            .map(|i| -(&x.row(i) - &mean).mapv(|v| v * v).sum())
            .collect();
        let order = |s: &[f64]| {
            let mut o: Vec<usize> = (0..s.len()).collect();
            o.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
            o
        };
        assert_eq!(order(&r.scores), order(&euclid));
    }

    proptest! {
        #[test]
        fn select_keeps_exact_count(
            scores in prop::collection::vec(0u8..6, 1..60),
            beta_raw in 1u32..=1000,
        ) {
            let beta = beta_raw as f64 / 1000.0;
            let r = Ranking::new(scores.iter().map(|&s| s as f64).collect(), BaselineMethod::Confidence).unwrap();
            let mask = select_at_coverage(&r, beta).unwrap();
            let kept = mask.iter().filter(|&&k| k).count();
            prop_assert_eq!(kept, ceil_tolerant(beta * r.len() as f64));
            let min_kept = (0..r.len()).filter(|&i| mask[i]).map(|i| r.scores[i]).fold(f64::INFINITY, f64::min);
            for i in (0..r.len()).filter(|&i| !mask[i]) {
                prop_assert!(r.scores[i] <= min_kept);
            }
        }
    }
}
