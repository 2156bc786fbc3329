//! Perturbed truncated-Gaussian mixture and population calibration
//! functionals on its one-dimensional projection.
//!
//! The data model: y is ±1 with equal probability and z ~ Bernoulli(β).
//! Inliers (z = 1) are drawn from N(yθ*, σ²I) truncated to the balls
//! B(±θ*, r1). Outliers (z = 0) are drawn from N(−yαθ*, σ²I) truncated to the
//! balls B(±αθ*, r2), so they sit on the wrong side of the decision boundary.
//!
//! A linear model θ̂ trained on the unperturbed mixture predicts
//! P(y = 1 | x) = sigmoid(2θ̂ᵀx / T). All functionals are evaluated on the
//! projected coordinate v = θ̂ᵀx, where the truncated balls become intervals:
//! A around ±θ̂ᵀθ* and Bset around ±αθ̂ᵀθ*.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::math::{rng, sigmoid, Rng};
use crate::metrics;

/// Minimum ball acceptance probability for rejection sampling.
pub const MIN_ACCEPTANCE: f64 = 1e-4;
/// Allowed relative mismatch between the two truncation normalizers.
pub const RHO_TOLERANCE: f64 = 1e-3;
pub const MAX_THETA_RETRIES: usize = 100;
/// Simpson cells per region interval; four intervals give 8192 cells.
pub const CELLS_PER_INTERVAL: usize = 2048;
/// Nodes for the ball-mass quadrature over the polar angle.
const BALL_QUADRATURE_PANELS: usize = 2000;

/// Input description of the mixture. When `r1` is omitted it is solved from
/// `r2` so that both truncations have the same normalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub theta_star: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
    #[serde(default)]
    pub r1: Option<f64>,
    pub r2: f64,
    #[serde(alias = "beta")]
    pub beta_mix: f64,
    pub m_train: usize,
}

/// A validated mixture with both radii resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub theta_star: Vec<f64>,
    pub sigma: f64,
    pub alpha: f64,
    pub r1: f64,
    pub r2: f64,
    pub beta_mix: f64,
    pub m_train: usize,
    /// Probability that an untruncated inlier draw lands in its support.
    pub inlier_mass: f64,
    /// Same for outliers.
    pub outlier_mass: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// P(‖X‖ ≤ r) for X ~ N(δe₁, σ²I_p).
///
/// Conditions on the first coordinate u: the other p − 1 coordinates
/// contribute a χ² tail, so the mass is
/// ∫ φ((u − δ)/σ)/σ · F_{χ²(p−1)}((r² − u²)/σ²) du over u ∈ [−r, r].
/// The substitution u = r·sin φ removes the square-root endpoint behaviour.
pub fn ball_mass(p: usize, sigma: f64, delta: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if p == 1 {
        return normal_cdf((r - delta) / sigma) - normal_cdf((-r - delta) / sigma);
    }
    let chi = ChiSquared::new((p - 1) as f64).expect("p >= 2");
    let half_pi = std::f64::consts::FRAC_PI_2;
    let f = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let u = r * s;
        let rest = (r * c / sigma).powi(2);
        normal_pdf(u, delta, sigma) * chi.cdf(rest) * r * c
    };
    simpson(f, -half_pi, half_pi, BALL_QUADRATURE_PANELS)
}

/// Composite Simpson rule with `panels` panels (2·panels subintervals).
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / (2 * panels) as f64;
    let mut sum = f(a) + f(b);
    for i in 1..2 * panels {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Mass of the inlier support B(θ*, r1) ∪ B(−θ*, r1) under N(θ*, σ²I).
pub fn inlier_support_mass(p: usize, sigma: f64, theta_norm: f64, r1: f64) -> f64 {
    ball_mass(p, sigma, 0.0, r1) + ball_mass(p, sigma, 2.0 * theta_norm, r1)
}

/// Mass of the outlier support B(αθ*, r2) ∪ B(−αθ*, r2) under N(αθ*, σ²I).
pub fn outlier_support_mass(p: usize, sigma: f64, alpha: f64, theta_norm: f64, r2: f64) -> f64 {
    ball_mass(p, sigma, 0.0, r2) + ball_mass(p, sigma, 2.0 * alpha * theta_norm, r2)
}

impl SyntheticSpec {
    /// Validates the spec and resolves `r1`.
    pub fn resolve(&self) -> Result<MixtureModel> {
        let p = self.theta_star.len();
        let tn = norm(&self.theta_star);
        if p == 0 || !tn.is_finite() || tn == 0.0 {
            return Err(Error::Validation("theta_star must be a non-zero finite vector".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Validation(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Validation(format!("alpha must lie in (0, 1/2), got {}", self.alpha)));
        }
        if !(self.beta_mix > 0.0 && self.beta_mix < 1.0) {
            return Err(Error::Validation(format!("beta_mix must lie in (0, 1), got {}", self.beta_mix)));
        }
        if self.m_train == 0 {
            return Err(Error::Validation("m_train must be at least 1".into()));
        }
        if !(self.r2 > 0.0) {
            return Err(Error::Validation(format!("r2 must be positive, got {}", self.r2)));
        }
        if self.r2 >= self.alpha * tn {
            return Err(Error::Validation(format!(
                "outlier balls overlap: r2 = {} must be below alpha·|theta*| = {}",
                self.r2,
                self.alpha * tn
            )));
        }
        let r1_max = tn.min((1.0 - self.alpha) * tn - self.r2);
        let target = outlier_support_mass(p, self.sigma, self.alpha, tn, self.r2);
        let r1 = match self.r1 {
            Some(r1) => {
                if !(r1 > 0.0 && r1 < r1_max) {
                    return Err(Error::Validation(format!(
                        "r1 = {r1} must lie in (0, {r1_max}) for the four balls to be disjoint"
                    )));
                }
                let mass = inlier_support_mass(p, self.sigma, tn, r1);
                if (mass / target - 1.0).abs() > RHO_TOLERANCE {
                    return Err(Error::Validation(format!(
                        "normalizers differ: inlier mass {mass:.6} vs outlier mass {target:.6}; omit r1 to solve it"
                    )));
                }
                r1
            }
            None => solve_r1(p, self.sigma, tn, target, r1_max)?,
        };
        Ok(MixtureModel {
            theta_star: self.theta_star.clone(),
            sigma: self.sigma,
            alpha: self.alpha,
            r1,
            r2: self.r2,
            beta_mix: self.beta_mix,
            m_train: self.m_train,
            inlier_mass: inlier_support_mass(p, self.sigma, tn, r1),
            outlier_mass: target,
        })
    }
}

fn solve_r1(p: usize, sigma: f64, tn: f64, target: f64, r1_max: f64) -> Result<f64> {
    let upper = r1_max * (1.0 - 1e-12);
    if inlier_support_mass(p, sigma, tn, upper) < target {
        return Err(Error::Validation(format!(
            "no r1 below {r1_max} matches the outlier normalizer; reduce r2"
        )));
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inlier_support_mass(p, sigma, tn, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * upper {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl MixtureModel {
    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn theta_norm(&self) -> f64 {
        norm(&self.theta_star)
    }

    /// Normalizers 1/mass of the two truncations.
    pub fn rho(&self) -> (f64, f64) {
        (1.0 / self.inlier_mass, 1.0 / self.outlier_mass)
    }

    pub fn ball_center(&self, ball: Ball) -> Vec<f64> {
        let k = match ball {
            Ball::InlierPos => 1.0,
            Ball::InlierNeg => -1.0,
            Ball::OutlierPos => self.alpha,
            Ball::OutlierNeg => -self.alpha,
        };
        self.theta_star.iter().map(|t| k * t).collect()
    }

    pub fn ball_radius(&self, ball: Ball) -> f64 {
        match ball {
            Ball::InlierPos | Ball::InlierNeg => self.r1,
            Ball::OutlierPos | Ball::OutlierNeg => self.r2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ball {
    InlierPos,
    InlierNeg,
    OutlierPos,
    OutlierNeg,
}

impl Ball {
    pub fn is_inlier(self) -> bool {
        matches!(self, Ball::InlierPos | Ball::InlierNeg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub x: Array2<f64>,
    /// Labels in {−1, 1}.
    pub y: Vec<i8>,
    pub z: Vec<bool>,
    pub ball: Vec<Ball>,
}

fn gaussian_around(center: &[f64], sigma: f64, r: &mut Rng) -> Vec<f64> {
    center
        .iter()
        .map(|c| c + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r))
        .collect()
}

fn within(x: &[f64], center: &[f64], radius: f64) -> bool {
    x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= radius * radius
}

/// Draws `n` labelled points by rejection sampling, tagging each with the
/// ball it landed in.
pub fn sample_synthetic(model: &MixtureModel, n: usize, seed: u64) -> Result<SyntheticSample> {
    for (what, mass) in [("inlier", model.inlier_mass), ("outlier", model.outlier_mass)] {
        if mass < MIN_ACCEPTANCE {
            return Err(Error::Validation(format!(
                "{what} rejection acceptance rate {mass:.2e} is below {MIN_ACCEPTANCE:.0e}; \
                 use larger radii relative to sigma"
            )));
        }
    }
    let p = model.dim();
    let centers = [Ball::InlierPos, Ball::InlierNeg, Ball::OutlierPos, Ball::OutlierNeg].map(|b| model.ball_center(b));
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, p));
    let (mut ys, mut zs, mut balls) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let y: f64 = if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let z = r.random_bool(model.beta_mix);
        let (mean_scale, candidates) = if z {
            (y, [(Ball::InlierPos, 0), (Ball::InlierNeg, 1)])
        } else {
            (-y * model.alpha, [(Ball::OutlierPos, 2), (Ball::OutlierNeg, 3)])
        };
        let mean: Vec<f64> = model.theta_star.iter().map(|t| mean_scale * t).collect();
        let radius = if z { model.r1 } else { model.r2 };
        let (point, ball) = loop {
            let cand = gaussian_around(&mean, model.sigma, &mut r);
            if let Some(&(ball, _)) = candidates.iter().find(|(_, c)| within(&cand, &centers[*c], radius)) {
                break (cand, ball);
            }
        };
        x.row_mut(i).assign(&Array1::from(point));
        ys.push(y as i8);
        zs.push(z);
        balls.push(ball);
    }
    Ok(SyntheticSample { x, y: ys, z: zs, ball: balls })
}

/// θ̂ = (1/m) Σ xᵢyᵢ.
pub fn train_theta_hat(x: &Array2<f64>, y: &[i8]) -> Result<Vec<f64>> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    let m = x.nrows() as f64;
    let mut theta = vec![0.0; x.ncols()];
    for (row, &yi) in x.rows().into_iter().zip(y) {
        for (t, v) in theta.iter_mut().zip(row) {
            *t += v * yi as f64;
        }
    }
    Ok(theta.into_iter().map(|t| t / m).collect())
}

/// Training draw from the unperturbed mixture x | y ~ N(yθ*, σ²I).
pub fn draw_training_set(model: &MixtureModel, m: usize, r: &mut Rng) -> (Array2<f64>, Vec<i8>) {
    let p = model.dim();
    let mut x = Array2::zeros((m, p));
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let yi: i8 = if r.random_bool(0.5) { 1 } else { -1 };
        let mean: Vec<f64> = model.theta_star.iter().map(|t| yi as f64 * t).collect();
        x.row_mut(i).assign(&Array1::from(gaussian_around(&mean, model.sigma, r)));
        y.push(yi);
    }
    (x, y)
}

/// Trains θ̂ on fresh unperturbed draws, redrawing while θ̂ᵀθ* ≤ 0.
pub fn fit_theta_hat(model: &MixtureModel, seed: u64) -> Result<Vec<f64>> {
    let mut r = rng(seed);
    for attempt in 0..MAX_THETA_RETRIES {
        let (x, y) = draw_training_set(model, model.m_train, &mut r);
        let theta = train_theta_hat(&x, &y)?;
        if dot(&theta, &model.theta_star) > 0.0 {
            if attempt > 0 {
                log::info!("theta_hat aligned after {} redraws", attempt);
            }
            return Ok(theta);
        }
    }
    Err(Error::Numeric(format!(
        "theta_hat failed to align with theta* in {MAX_THETA_RETRIES} training draws"
    )))
}

/// Model confidences (f₋₁, f₁) with f₁ = sigmoid(2θ̂ᵀx).
pub fn confidence(theta_hat: &[f64], x: &[f64]) -> (f64, f64) {
    let f1 = sigmoid(2.0 * dot(theta_hat, x));
    (1.0 - f1, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedModel {
    pub theta_hat: Vec<f64>,
    /// θ̂ᵀθ*.
    pub alignment: f64,
    /// ‖θ̂‖.
    pub theta_hat_norm: f64,
    pub a1: f64,
    pub a2: f64,
    /// Standard deviation σ‖θ̂‖ of the projected components.
    pub sd: f64,
    pub a_intervals: [(f64, f64); 2],
    pub b_intervals: [(f64, f64); 2],
    pub beta_mix: f64,
    /// ∫_A of the inlier component density, equal for both labels.
    z_inlier: f64,
    /// ∫_Bset of the outlier component density.
    z_outlier: f64,
}

fn interval_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd)
}

impl ProjectedModel {
    pub fn new(model: &MixtureModel, theta_hat: Vec<f64>) -> Result<Self> {
        if theta_hat.len() != model.dim() {
            return Err(Error::Shape(format!(
                "theta_hat has dimension {}, model has {}",
                theta_hat.len(),
                model.dim()
            )));
        }
        let c = dot(&theta_hat, &model.theta_star);
        let s = norm(&theta_hat);
        if !(c > 0.0) {
            return Err(Error::Domain(format!("theta_hat·theta* = {c} must be positive")));
        }
        let a1 = c / (model.sigma.powi(2) * s * s);
        let (ra, rb) = (model.r1 * s, model.r2 * s);
        let ac = model.alpha * c;
        if !(ac - rb > 0.0 && c - ra > ac + rb) {
            return Err(Error::Domain(format!(
                "projected regions overlap: A = ±{c:.4}±{ra:.4}, Bset = ±{ac:.4}±{rb:.4}"
            )));
        }
        let sd = model.sigma * s;
        let a_intervals = [(-c - ra, -c + ra), (c - ra, c + ra)];
        let b_intervals = [(-ac - rb, -ac + rb), (ac - rb, ac + rb)];
        let z_inlier = a_intervals.iter().map(|&(lo, hi)| interval_mass(lo, hi, c, sd)).sum();
        let z_outlier = b_intervals.iter().map(|&(lo, hi)| interval_mass(lo, hi, -ac, sd)).sum();
        Ok(Self {
            theta_hat,
            alignment: c,
            theta_hat_norm: s,
            a1,
            a2: model.alpha * a1,
            sd,
            a_intervals,
            b_intervals,
            beta_mix: model.beta_mix,
            z_inlier,
            z_outlier,
        })
    }

    /// Temperature that calibrates the inlier region exactly: 1/a₁.
    pub fn t0(&self) -> f64 {
        1.0 / self.a1
    }

    pub fn region(&self, v: f64) -> Option<Region> {
        let inside = |iv: &[(f64, f64); 2]| iv.iter().any(|&(lo, hi)| v >= lo && v <= hi);
        if inside(&self.a_intervals) {
            Some(Region::A)
        } else if inside(&self.b_intervals) {
            Some(Region::B)
        } else {
            None
        }
    }

    /// P[y = 1 | θ̂ᵀx = v].
    pub fn true_conditional(&self, v: f64) -> Result<f64> {
        match self.region(v) {
            Some(Region::A) => Ok(sigmoid(2.0 * self.a1 * v)),
            Some(Region::B) => Ok(sigmoid(-2.0 * self.a2 * v)),
            None => Err(Error::Domain(format!("v = {v} lies outside A and Bset (zero density)"))),
        }
    }

    /// Density of v given y ∈ {−1, 1}.
    pub fn projected_density(&self, v: f64, y: i8) -> f64 {
        let yf = f64::from(y.signum());
        let c = self.alignment;
        let ac = self.a2 / self.a1 * c;
        match self.region(v) {
            Some(Region::A) => self.beta_mix * normal_pdf(v, yf * c, self.sd) / self.z_inlier,
            Some(Region::B) => (1.0 - self.beta_mix) * normal_pdf(v, -yf * ac, self.sd) / self.z_outlier,
            None => 0.0,
        }
    }

    pub fn marginal_density(&self, v: f64) -> f64 {
        0.5 * (self.projected_density(v, 1) + self.projected_density(v, -1))
    }
}

/// Model confidence on the projected coordinate at temperature T.
pub fn model_positive_prob(v: f64, t: f64) -> f64 {
    sigmoid(2.0 * v / t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    v: f64,
    weight: f64,
    density: f64,
    conditional: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub lo: f64,
    pub hi: f64,
    pub region: Region,
    /// ∫ ρ(v) dv over the cell.
    pub mass: f64,
    nodes: [Node; 3],
}

impl Cell {
    /// ∫ |P[y=1|v] − sigmoid(2v/T)| ρ(v) dv over the cell.
    pub fn gap_mass(&self, t: f64) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.weight * n.density * (n.conditional - model_positive_prob(n.v, t)).abs())
            .sum()
    }
}

/// Per-cell Simpson quadrature over the four region intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryLab {
    pub pm: ProjectedModel,
    pub cells: Vec<Cell>,
}

/// Fractional acceptance per quadrature cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSelector {
    pub fractions: Vec<f64>,
}

impl RegionSelector {
    pub fn validate(&self, lab: &TheoryLab) -> Result<()> {
        if self.fractions.len() != lab.cells.len() {
            return Err(Error::Shape(format!(
                "selector has {} cells, grid has {}",
                self.fractions.len(),
                lab.cells.len()
            )));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Validation(format!("acceptance fraction {f} outside [0, 1]")));
        }
        Ok(())
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Bracket of log T scanned before golden-section refinement.
pub const LOG_T_RANGE: (f64, f64) = (-8.0, 6.0);
const LOG_T_GRID: usize = 141;

/// Minimizes `f(T)` over T > 0: a coarse scan over log T, then golden
/// section inside the best bracket. Returns (T, f(T)).
pub fn minimize_over_temperature(f: impl Fn(f64) -> f64 + Sync) -> (f64, f64) {
    let (lo, hi) = LOG_T_RANGE;
    let step = (hi - lo) / (LOG_T_GRID - 1) as f64;
    let values: Vec<f64> = (0..LOG_T_GRID)
        .into_par_iter()
        .map(|i| f((lo + i as f64 * step).exp()))
        .collect();
    let best = (0..LOG_T_GRID).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("non-empty grid");
    let a = lo + best.saturating_sub(1) as f64 * step;
    let b = lo + (best + 1).min(LOG_T_GRID - 1) as f64 * step;
    let (log_t, value) = golden_section(|lt| f(lt.exp()), a, b, 1e-10);
    if value <= values[best] {
        (log_t.exp(), value)
    } else {
        ((lo + best as f64 * step).exp(), values[best])
    }
}

impl TheoryLab {
    pub fn new(pm: ProjectedModel) -> Self {
        let mut cells = Vec::with_capacity(4 * CELLS_PER_INTERVAL);
        let intervals = [
            (pm.a_intervals[0], Region::A),
            (pm.b_intervals[0], Region::B),
            (pm.b_intervals[1], Region::B),
            (pm.a_intervals[1], Region::A),
        ];
        for ((lo, hi), region) in intervals {
            let h = (hi - lo) / CELLS_PER_INTERVAL as f64;
            for k in 0..CELLS_PER_INTERVAL {
                let a = lo + k as f64 * h;
                let b = if k + 1 == CELLS_PER_INTERVAL { hi } else { a + h };
                let node = |v: f64, w: f64| Node {
                    v,
                    weight: w * (b - a) / 6.0,
                    density: pm.marginal_density(v),
                    conditional: match region {
                        Region::A => sigmoid(2.0 * pm.a1 * v),
                        Region::B => sigmoid(-2.0 * pm.a2 * v),
                    },
                };
                let nodes = [node(a, 1.0), node(0.5 * (a + b), 4.0), node(b, 1.0)];
                let mass = nodes.iter().map(|n| n.weight * n.density).sum();
                cells.push(Cell { lo: a, hi: b, region, mass, nodes });
            }
        }
        Self { pm, cells }
    }

    pub fn from_model(model: &MixtureModel, seed: u64) -> Result<Self> {
        let theta_hat = fit_theta_hat(model, seed)?;
        Ok(Self::new(ProjectedModel::new(model, theta_hat)?))
    }

    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).sum()
    }

    pub fn region_mass(&self, region: Region) -> f64 {
        self.cells.iter().filter(|c| c.region == region).map(|c| c.mass).sum()
    }

    pub fn accept_all(&self) -> RegionSelector {
        RegionSelector { fractions: vec![1.0; self.cells.len()] }
    }

    /// g₀: accept A, reject Bset.
    pub fn reject_outliers(&self) -> RegionSelector {
        RegionSelector {
            fractions: self
                .cells
                .iter()
                .map(|c| if c.region == Region::A { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn coverage(&self, sel: &RegionSelector) -> f64 {
        self.cells.iter().zip(&sel.fractions).map(|(c, a)| a * c.mass).sum()
    }

    pub fn srece(&self, sel: &RegionSelector, t: f64) -> Result<f64> {
        sel.validate(self)?;
        if !(t > 0.0) {
            return Err(Error::Domain(format!("temperature must be positive, got {t}")));
        }
        let mass = self.coverage(sel);
        if !(mass > 0.0) {
            return Err(Error::Domain("selector has zero selected mass".into()));
        }
        let gap: f64 = self
            .cells
            .iter()
            .zip(&sel.fractions)
            .filter(|(_, &a)| a > 0.0)
            .map(|(c, a)| a * c.gap_mass(t))
            .sum();
        Ok(gap / mass)
    }

    pub fn rece(&self, t: f64) -> Result<f64> {
        self.srece(&self.accept_all(), t)
    }

    pub fn sece(&self, sel: &RegionSelector) -> Result<f64> {
        self.srece(sel, 1.0)
    }

    /// Accepts cells in increasing order of mean gap until the accepted mass
    /// reaches β; the boundary cell is accepted fractionally.
    pub fn optimal_selector(&self, t: f64, beta: f64) -> Result<RegionSelector> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!("coverage must lie in (0, 1], got {beta}")));
        }
        let n = self.cells.len();
        if beta >= 1.0 {
            return Ok(self.accept_all());
        }
        let ratio: Vec<f64> = self
            .cells
            .iter()
            .map(|c| if c.mass > 0.0 { c.gap_mass(t) / c.mass } else { f64::INFINITY })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ratio[a].total_cmp(&ratio[b]).then(a.cmp(&b)));
        let target = beta * self.total_mass();
        let mut fractions = vec![0.0; n];
        let mut accepted = 0.0;
        for i in order {
            if accepted >= target {
                break;
            }
            let m = self.cells[i].mass;
            if accepted + m <= target {
                fractions[i] = 1.0;
                accepted += m;
            } else {
                fractions[i] = ((target - accepted) / m).clamp(0.0, 1.0);
                accepted = target;
            }
        }
        Ok(RegionSelector { fractions })
    }

    pub fn min_rece(&self) -> (f64, f64) {
        minimize_over_temperature(|t| self.rece(t).expect("full selector has positive mass"))
    }

    pub fn min_srece(&self, sel: &RegionSelector) -> Result<(f64, f64)> {
        self.srece(sel, 1.0)?;
        Ok(minimize_over_temperature(|t| self.srece(sel, t).expect("validated selector")))
    }
}

/// Sample-based cross-check of the projected closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCheck {
    pub n: usize,
    pub bins_checked: usize,
    /// Largest |empirical − closed-form| of P[y=1 | v] over populated bins.
    pub max_conditional_discrepancy: f64,
    /// ECE₁ with 15 equal-mass bins of the sampled top-label confidences at T = 1.
    pub sampled_ece1: f64,
    /// The quadrature counterpart, R-ECE(1).
    pub quadrature_rece_t1: f64,
    /// Fraction of sampled points in Bset; the construction targets 1 − β.
    pub sampled_outlier_fraction: f64,
}

const MC_BINS_PER_INTERVAL: usize = 10;
const MC_MIN_BIN_COUNT: usize = 1000;

pub fn monte_carlo_check(lab: &TheoryLab, model: &MixtureModel, n: usize, seed: u64) -> Result<MonteCarloCheck> {
    let sample = sample_synthetic(model, n, seed)?;
    let pm = &lab.pm;
    let intervals: Vec<(f64, f64)> = pm.a_intervals.iter().chain(&pm.b_intervals).copied().collect();
    let nb = intervals.len() * MC_BINS_PER_INTERVAL;
    let (mut count, mut positives, mut closed) = (vec![0usize; nb], vec![0usize; nb], vec![0.0; nb]);
    let mut conf = Vec::with_capacity(n);
    let mut correct = Vec::with_capacity(n);
    let mut outliers = 0usize;
    for (i, row) in sample.x.rows().into_iter().enumerate() {
        let v = dot(&pm.theta_hat, row.as_slice().expect("standard layout"));
        let y = sample.y[i];
        let f1 = model_positive_prob(v, 1.0);
        conf.push(f1.max(1.0 - f1));
        correct.push((v >= 0.0) == (y > 0));
        if pm.region(v) == Some(Region::B) {
            outliers += 1;
        }
        let Some(k) = intervals.iter().position(|&(lo, hi)| v >= lo && v <= hi) else {
            return Err(Error::Numeric(format!("sampled v = {v} outside the projected regions")));
        };
        let (lo, hi) = intervals[k];
        let j = (((v - lo) / (hi - lo)) * MC_BINS_PER_INTERVAL as f64).floor() as usize;
        let b = k * MC_BINS_PER_INTERVAL + j.min(MC_BINS_PER_INTERVAL - 1);
        count[b] += 1;
        positives[b] += usize::from(y > 0);
        closed[b] += pm.true_conditional(v)?;
    }
    let mut max_disc: f64 = 0.0;
    let mut checked = 0;
    for b in 0..nb {
        if count[b] >= MC_MIN_BIN_COUNT {
            checked += 1;
            let emp = positives[b] as f64 / count[b] as f64;
            max_disc = max_disc.max((emp - closed[b] / count[b] as f64).abs());
        }
    }
    Ok(MonteCarloCheck {
        n,
        bins_checked: checked,
        max_conditional_discrepancy: max_disc,
        sampled_ece1: metrics::ece(&conf, &correct, 1, metrics::DEFAULT_BINS)?,
        quadrature_rece_t1: lab.rece(1.0)?,
        sampled_outlier_fraction: outliers as f64 / n as f64,
    })
}

/// Thresholds for the separation check.
pub const SRECE_ZERO_BOUND: f64 = 1e-3;
pub const COMPETITOR_BOUND: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryChecks {
    pub srece_g0_t0_below_bound: bool,
    pub min_rece_above_bound: bool,
    pub min_sece_above_bound: bool,
    pub ece_r_then_s_above_bound: bool,
    pub ece_s_then_r_above_bound: bool,
    /// β > 2(1 − β).
    pub coverage_precondition: bool,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub model: MixtureModel,
    pub seed: u64,
    pub theta_hat: Vec<f64>,
    pub a1: f64,
    pub a2: f64,
    pub t0: f64,
    pub quadrature_cells: usize,
    pub mass_a: f64,
    pub mass_b: f64,
    /// min over T of R-ECE, and the minimizing T̃.
    pub min_rece: f64,
    pub t_rece: f64,
    pub rece_t1: f64,
    pub rece_t0: f64,
    /// min over selectors of coverage β of S-ECE at T = 1.
    pub min_sece: f64,
    pub srece_g0_t0: f64,
    /// Recalibrate first (T̃), then select optimally.
    pub ece_r_then_s: f64,
    /// Select optimally at T = 1, then recalibrate.
    pub ece_s_then_r: f64,
    pub t_s_then_r: f64,
    /// Mean gap of the selected-first selector inside A and inside Bset at T = 1.
    pub selected_mass_in_a: f64,
    pub monte_carlo: Option<MonteCarloCheck>,
    pub checks: TheoryChecks,
}

pub fn verify_theorems_with(model: &MixtureModel, seed: u64, mc_samples: usize) -> Result<TheoryReport> {
    let lab = TheoryLab::from_model(model, seed)?;
    let pm = &lab.pm;
    let beta = model.beta_mix;
    let g0 = lab.reject_outliers();
    let t0 = pm.t0();
    let srece_g0_t0 = lab.srece(&g0, t0)?;
    let (t_rece, min_rece) = lab.min_rece();
    let g_t1 = lab.optimal_selector(1.0, beta)?;
    let min_sece = lab.sece(&g_t1)?;
    let g_rece = lab.optimal_selector(t_rece, beta)?;
    let ece_r_then_s = lab.srece(&g_rece, t_rece)?;
    let (t_s_then_r, ece_s_then_r) = lab.min_srece(&g_t1)?;
    let selected_mass_in_a = lab
        .cells
        .iter()
        .zip(&g_t1.fractions)
        .filter(|(c, _)| c.region == Region::A)
        .map(|(c, a)| a * c.mass)
        .sum::<f64>()
        / lab.coverage(&g_t1);
    let monte_carlo = if mc_samples > 0 {
        Some(monte_carlo_check(&lab, model, mc_samples, seed.wrapping_add(1))?)
    } else {
        None
    };
    let mut checks = TheoryChecks {
        srece_g0_t0_below_bound: srece_g0_t0 < SRECE_ZERO_BOUND,
        min_rece_above_bound: min_rece > COMPETITOR_BOUND,
        min_sece_above_bound: min_sece > COMPETITOR_BOUND,
        ece_r_then_s_above_bound: ece_r_then_s > COMPETITOR_BOUND,
        ece_s_then_r_above_bound: ece_s_then_r > COMPETITOR_BOUND,
        coverage_precondition: beta > 2.0 * (1.0 - beta),
        all_pass: false,
    };
    checks.all_pass = checks.srece_g0_t0_below_bound
        && checks.min_rece_above_bound
        && checks.min_sece_above_bound
        && checks.ece_r_then_s_above_bound
        && checks.ece_s_then_r_above_bound;
    Ok(TheoryReport {
        model: model.clone(),
        seed,
        theta_hat: pm.theta_hat.clone(),
        a1: pm.a1,
        a2: pm.a2,
        t0,
        quadrature_cells: lab.cells.len(),
        mass_a: lab.region_mass(Region::A),
        mass_b: lab.region_mass(Region::B),
        min_rece,
        t_rece,
        rece_t1: lab.rece(1.0)?,
        rece_t0: lab.rece(t0)?,
        min_sece,
        srece_g0_t0,
        ece_r_then_s,
        ece_s_then_r,
        t_s_then_r,
        selected_mass_in_a,
        monte_carlo,
        checks,
    })
}

pub const DEFAULT_MC_SAMPLES: usize = 200_000;

pub fn verify_theorems(spec: &SyntheticSpec, seed: u64) -> Result<TheoryReport> {
    verify_theorems_with(&spec.resolve()?, seed, DEFAULT_MC_SAMPLES)
}

/// Grid of specs derived from a base spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: SyntheticSpec,
    #[serde(default)]
    pub sigmas: Vec<f64>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    /// When set, r2 = r2_over_sigma · σ for every grid point.
    #[serde(default)]
    pub r2_over_sigma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo samples per point; 0 skips the cross-check.
    #[serde(default)]
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub min_rece: f64,
    pub min_sece: f64,
    pub srece_g0_t0: f64,
    pub ece_r_then_s: f64,
    pub ece_s_then_r: f64,
}

pub fn theory_sweep(sweep: &SweepSpec) -> Result<Vec<SweepRow>> {
    let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
    let sigmas = or_base(&sweep.sigmas, sweep.base.sigma);
    let alphas = or_base(&sweep.alphas, sweep.base.alpha);
    let betas = or_base(&sweep.betas, sweep.base.beta_mix);
    let mut points = Vec::new();
    for &sigma in &sigmas {
        for &alpha in &alphas {
            for &beta in &betas {
                points.push((sigma, alpha, beta));
            }
        }
    }
    points
        .into_par_iter()
        .map(|(sigma, alpha, beta)| {
            let mut spec = sweep.base.clone();
            spec.sigma = sigma;
            spec.alpha = alpha;
            spec.beta_mix = beta;
            spec.r1 = None;
            if let Some(k) = sweep.r2_over_sigma {
                spec.r2 = k * sigma;
            }
            let report = verify_theorems_with(&spec.resolve()?, sweep.seed, sweep.mc_samples)?;
            Ok(SweepRow {
                sigma,
                alpha,
                beta,
                min_rece: report.min_rece,
                min_sece: report.min_sece,
                srece_g0_t0: report.srece_g0_t0,
                ece_r_then_s: report.ece_r_then_s,
                ece_s_then_r: report.ece_s_then_r,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
