//! Post-hoc recalibrators mapping classifier outputs to top-label confidences.
//!
//! Temperature and Platt scaling are differentiable and expose per-instance
//! derivatives of the recalibrated confidence with respect to their
//! parameters (see [`RecalibratorParams::jet`]); the binning variants are fit
//! by counting.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::losses;
use crate::math::{argmax, sigmoid, softmax};
use crate::metrics::equal_mass_sizes;
use crate::train::adam::Adam;

pub const LOG_T_BOUND: f64 = 10.0;
pub const PLATT_BOUND: f64 = 50.0;
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecalibratorKind {
    Temperature,
    Platt,
    HistogramBins,
    PlattBins,
}

impl RecalibratorKind {
    pub fn is_differentiable(self) -> bool {
        matches!(self, Self::Temperature | Self::Platt)
    }
}

impl std::str::FromStr for RecalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" => Ok(Self::Temperature),
            "platt" => Ok(Self::Platt),
            "histogram_bins" => Ok(Self::HistogramBins),
            "platt_bins" => Ok(Self::PlattBins),
            other => Err(Error::Config(format!("unknown recalibrator kind {other:?}"))),
        }
    }
}

/// Equal-mass histogram over confidences in [0, 1].
///
/// Bin `i` covers `[edges[i], edges[i+1])`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub edges: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum RecalibratorParams {
    Temperature { log_t: f64 },
    Platt { w: f64, b: f64 },
    HistogramBins(Bins),
    PlattBins { w: f64, b: f64, bins: Bins },
}

/// Recalibrated top-label output for one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recalibrated {
    pub top_conf: f64,
    pub pred: usize,
    pub correct: bool,
}

/// Recalibrated quantities of one instance together with their derivatives
/// with respect to the parameter vector of a differentiable recalibrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub top_conf: f64,
    pub d_top_conf: Vec<f64>,
    /// Probability assigned to the true label.
    pub p_true: f64,
    pub d_p_true: Vec<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Every instance was correct, or every instance was wrong.
    DegenerateLabels,
    /// A parameter ended on its clamp bound.
    ParameterClamped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: RecalibratorParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub warnings: Vec<FitWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub steps: usize,
    pub learning_rate: f64,
    pub bins: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.05,
            bins: DEFAULT_BINS,
        }
    }
}

/// softmax(logits / T).
pub fn temperature_apply(log_t: f64, logits: &[f64]) -> Vec<f64> {
    let scale = (-log_t).exp();
    let scaled: Vec<f64> = logits.iter().map(|z| z * scale).collect();
    softmax(&scaled)
}

/// `1 / (1 + exp(w p + b))` for a positive-class probability `p`.
pub fn platt_apply(w: f64, b: f64, p: f64) -> f64 {
    sigmoid(-(w * p + b))
}

impl Bins {
    /// Equal-mass histogram binning of `(conf, correct)` pairs with `m` bins.
    ///
    /// Interior edges sit halfway between neighbouring groups of the sorted
    /// confidences; groups that share a boundary value are merged, so fewer
    /// than `m` bins may result.
    pub fn fit(conf: &[f64], correct: &[bool], m: usize) -> Result<Self> {
        let n = conf.len();
        if n != correct.len() {
            return Err(Error::Shape(format!(
                "{n} confidences vs {} correctness flags",
                correct.len()
            )));
        }
        if n == 0 {
            return Err(Error::Config("cannot bin an empty dataset".into()));
        }
        if m == 0 || m > n {
            return Err(Error::Config(format!("bin count {m} must be in 1..={n}")));
        }
        let mut sorted: Vec<f64> = conf.to_vec();
        sorted.sort_by(f64::total_cmp);

        let mut edges = vec![0.0];
        let mut start = 0;
        for size in equal_mass_sizes(n, m).into_iter().take(m - 1) {
            start += size;
            let (lo, hi) = (sorted[start - 1], sorted[start]);
            if lo < hi {
                edges.push(0.5 * (lo + hi));
            }
        }
        edges.push(1.0);

        let bins = edges.len() - 1;
        let mut hits = vec![0usize; bins];
        let mut counts = vec![0usize; bins];
        for (&c, &ok) in conf.iter().zip(correct) {
            let j = bin_index(&edges, c);
            counts[j] += 1;
            hits[j] += usize::from(ok);
        }
        let values = hits
            .iter()
            .zip(&counts)
            .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
            .collect();
        Ok(Self { edges, values })
    }

    pub fn apply(&self, conf: f64) -> f64 {
        self.values[bin_index(&self.edges, conf)]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.values.len();
        if m == 0 || self.edges.len() != m + 1 {
            return Err(Error::Validation(format!(
                "{} edges for {m} bin values",
                self.edges.len()
            )));
        }
        if self.edges[0] != 0.0 || self.edges[m] != 1.0 {
            return Err(Error::Validation("bin edges must span [0, 1]".into()));
        }
        if self.edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("bin edges must be strictly increasing".into()));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation("bin values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn bin_index(edges: &[f64], c: f64) -> usize {
    let bins = edges.len() - 1;
    // Number of interior edges <= c.
    edges[1..bins].partition_point(|&e| e <= c)
}

impl RecalibratorParams {
    pub fn identity(kind: RecalibratorKind) -> Self {
        match kind {
            RecalibratorKind::Temperature => Self::Temperature { log_t: 0.0 },
            RecalibratorKind::Platt => Self::Platt { w: -1.0, b: 0.0 },
            RecalibratorKind::HistogramBins | RecalibratorKind::PlattBins => {
                // Single bin mapping everything to 0.5 until fit.
                let bins = Bins {
                    edges: vec![0.0, 1.0],
                    values: vec![0.5],
                };
                if kind == RecalibratorKind::HistogramBins {
                    Self::HistogramBins(bins)
                } else {
                    Self::PlattBins {
                        w: -1.0,
                        b: 0.0,
                        bins,
                    }
                }
            }
        }
    }

    pub fn kind(&self) -> RecalibratorKind {
        match self {
            Self::Temperature { .. } => RecalibratorKind::Temperature,
            Self::Platt { .. } => RecalibratorKind::Platt,
            Self::HistogramBins(_) => RecalibratorKind::HistogramBins,
            Self::PlattBins { .. } => RecalibratorKind::PlattBins,
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self {
            Self::Temperature { log_t } => Some(log_t.exp()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{what} is not finite")))
            }
        };
        match self {
            Self::Temperature { log_t } => finite(*log_t, "log_t"),
            Self::Platt { w, b } => finite(*w, "w").and(finite(*b, "b")),
            Self::HistogramBins(bins) => bins.validate(),
            Self::PlattBins { w, b, bins } => {
                finite(*w, "w")?;
                finite(*b, "b")?;
                bins.validate()
            }
        }
    }

    fn check_classes(&self, k: usize) -> Result<()> {
        if matches!(self, Self::Platt { .. } | Self::PlattBins { .. }) && k != 2 {
            return Err(Error::Config(format!(
                "Platt recalibration needs 2 classes, got {k}"
            )));
        }
        Ok(())
    }

    /// Recalibrated top label and confidence for one row of logits.
    pub fn apply(&self, logits: &[f64], label: usize) -> Result<Recalibrated> {
        self.check_classes(logits.len())?;
        let out = match self {
            Self::Temperature { log_t } => {
                let p = temperature_apply(*log_t, logits);
                let pred = argmax(logits);
                Recalibrated {
                    top_conf: p[pred],
                    pred,
                    correct: pred == label,
                }
            }
            Self::Platt { w, b } => platt_top_label(*w, *b, logits, label),
            Self::HistogramBins(bins) => {
                let p = softmax(logits);
                let pred = argmax(&p);
                Recalibrated {
                    top_conf: bins.apply(p[pred]),
                    pred,
                    correct: pred == label,
                }
            }
            Self::PlattBins { w, b, bins } => {
                let r = platt_top_label(*w, *b, logits, label);
                Recalibrated {
                    top_conf: bins.apply(r.top_conf),
                    ..r
                }
            }
        };
        Ok(out)
    }

    /// Top-label confidences and correctness over a whole dataset.
    pub fn apply_dataset(&self, d: &CalibrationDataset) -> Result<(Vec<f64>, Vec<bool>)> {
        self.check_classes(d.num_classes())?;
        let mut conf = Vec::with_capacity(d.n());
        let mut correct = Vec::with_capacity(d.n());
        for i in 0..d.n() {
            let r = self.apply(&d.logit_row(i), d.labels()[i] as usize)?;
            conf.push(r.top_conf);
            correct.push(r.correct);
        }
        Ok((conf, correct))
    }

    /// Unconstrained parameters of a differentiable recalibrator.
    pub fn param_vec(&self) -> Result<Vec<f64>> {
        match self {
            Self::Temperature { log_t } => Ok(vec![*log_t]),
            Self::Platt { w, b } => Ok(vec![*w, *b]),
            _ => Err(Error::Config(format!(
                "{:?} recalibrator has no differentiable parameters",
                self.kind()
            ))),
        }
    }

    /// Inverse of [`param_vec`](Self::param_vec); values are clamped to the
    /// parameter bounds.
    pub fn set_param_vec(&mut self, v: &[f64]) {
        match self {
            Self::Temperature { log_t } => *log_t = v[0].clamp(-LOG_T_BOUND, LOG_T_BOUND),
            Self::Platt { w, b } => {
                *w = v[0].clamp(-PLATT_BOUND, PLATT_BOUND);
                *b = v[1].clamp(-PLATT_BOUND, PLATT_BOUND);
            }
            _ => panic!("set_param_vec on a binning recalibrator"),
        }
    }

    fn at_bound(&self) -> bool {
        match self {
            Self::Temperature { log_t } => log_t.abs() >= LOG_T_BOUND,
            Self::Platt { w, b } => w.abs() >= PLATT_BOUND || b.abs() >= PLATT_BOUND,
            _ => false,
        }
    }

    pub fn jet(&self, logits: &[f64], label: usize) -> Result<Jet> {
        self.check_classes(logits.len())?;
        match self {
            Self::Temperature { log_t } => {
                let scale = (-log_t).exp();
                let p = temperature_apply(*log_t, logits);
                let mean_z: f64 = p.iter().zip(logits).map(|(p, z)| p * z).sum();
                // d p_j / d log_t = -p_j (z_j - E_p[z]) / T
                let dp = |j: usize| -scale * p[j] * (logits[j] - mean_z);
                let pred = argmax(logits);
                Ok(Jet {
                    top_conf: p[pred],
                    d_top_conf: vec![dp(pred)],
                    p_true: p[label],
                    d_p_true: vec![dp(label)],
                    correct: pred == label,
                })
            }
            Self::Platt { w, b } => {
                let p1 = softmax(logits)[1];
                let h = platt_apply(*w, *b, p1);
                let dh = [-h * (1.0 - h) * p1, -h * (1.0 - h)];
                let top = platt_top_label(*w, *b, logits, label);
                let sign_top = if top.pred == 1 { 1.0 } else { -1.0 };
                let sign_true = if label == 1 { 1.0 } else { -1.0 };
                Ok(Jet {
                    top_conf: top.top_conf,
                    d_top_conf: dh.iter().map(|d| sign_top * d).collect(),
                    p_true: if label == 1 { h } else { 1.0 - h },
                    d_p_true: dh.iter().map(|d| sign_true * d).collect(),
                    correct: top.correct,
                })
            }
            _ => Err(Error::Config(format!(
                "{:?} recalibrator is not differentiable",
                self.kind()
            ))),
        }
    }
}

fn platt_top_label(w: f64, b: f64, logits: &[f64], label: usize) -> Recalibrated {
    let h = platt_apply(w, b, softmax(logits)[1]);
    let pred = argmax(&[1.0 - h, h]);
    Recalibrated {
        top_conf: h.max(1.0 - h),
        pred,
        correct: pred == label,
    }
}

/// Mean top-label binary cross entropy of a differentiable recalibrator and
/// its gradient with respect to the parameter vector.
pub fn tlbce_with_grad(params: &RecalibratorParams, d: &CalibrationDataset) -> Result<(f64, Vec<f64>)> {
    let n = d.n();
    let jets = (0..n)
        .map(|i| params.jet(&d.logit_row(i), d.labels()[i] as usize))
        .collect::<Result<Vec<_>>>()?;
    let g = vec![1.0; n];
    let h: Vec<f64> = jets.iter().map(|j| j.top_conf).collect();
    let c: Vec<bool> = jets.iter().map(|j| j.correct).collect();
    let eval = losses::s_tlbce_grad(&g, &h, &c)?;
    let mut grad = vec![0.0; params.param_vec()?.len()];
    for (jet, dh) in jets.iter().zip(&eval.d_h) {
        for (g, dj) in grad.iter_mut().zip(&jet.d_top_conf) {
            *g += dh * dj;
        }
    }
    Ok((eval.value, grad))
}

/// Fits a recalibrator to minimize top-label binary cross entropy (or, for
/// the binning kinds, by equal-mass histogram binning).
pub fn fit_recalibrator(
    d: &CalibrationDataset,
    kind: RecalibratorKind,
    opts: &FitOptions,
) -> Result<FitResult> {
    if d.is_empty() {
        return Err(Error::Config("cannot fit a recalibrator on an empty dataset".into()));
    }
    match kind {
        RecalibratorKind::HistogramBins => {
            let derived = d.derived();
            let bins = Bins::fit(&derived.top_conf, &derived.correct, opts.bins)?;
            let params = RecalibratorParams::HistogramBins(bins);
            let (conf, correct) = params.apply_dataset(d)?;
            let loss = mean_bce(&conf, &correct);
            Ok(FitResult {
                params,
                initial_loss: loss,
                final_loss: loss,
                warnings: Vec::new(),
            })
        }
        RecalibratorKind::PlattBins => {
            let platt = fit_recalibrator(d, RecalibratorKind::Platt, opts)?;
            let RecalibratorParams::Platt { w, b } = platt.params else {
                unreachable!()
            };
            let mut fit = platt_binning_with(d, w, b, opts.bins)?;
            fit.warnings = platt.warnings;
            Ok(fit)
        }
        RecalibratorKind::Temperature | RecalibratorKind::Platt => fit_gradient(d, kind, opts),
    }
}

/// Histogram binning applied to the outputs of a fixed Platt map.
pub fn platt_binning_with(d: &CalibrationDataset, w: f64, b: f64, m: usize) -> Result<FitResult> {
    let platt = RecalibratorParams::Platt { w, b };
    let (conf, correct) = platt.apply_dataset(d)?;
    let bins = Bins::fit(&conf, &correct, m)?;
    let params = RecalibratorParams::PlattBins { w, b, bins };
    let (binned, binned_correct) = params.apply_dataset(d)?;
    let loss = mean_bce(&binned, &binned_correct);
    Ok(FitResult {
        params,
        initial_loss: mean_bce(&conf, &correct),
        final_loss: loss,
        warnings: Vec::new(),
    })
}

fn mean_bce(conf: &[f64], correct: &[bool]) -> f64 {
    let ones = vec![1.0; conf.len()];
    losses::s_tlbce(&ones, conf, correct).expect("lengths match")
}

fn fit_gradient(d: &CalibrationDataset, kind: RecalibratorKind, opts: &FitOptions) -> Result<FitResult> {
    let mut params = RecalibratorParams::identity(kind);
    params.check_classes(d.num_classes())?;

    let mut warnings = Vec::new();
    let derived = d.derived();
    let n_correct = derived.correct.iter().filter(|&&c| c).count();
    if n_correct == 0 || n_correct == d.n() {
        warn!("recalibrator fit on degenerate labels ({n_correct} of {} correct)", d.n());
        warnings.push(FitWarning::DegenerateLabels);
    }

    let mut theta = params.param_vec()?;
    let mut adam = Adam::new(theta.len());
    let (initial_loss, mut grad) = tlbce_with_grad(&params, d)?;
    let mut best = (initial_loss, params.clone());
    for _ in 0..opts.steps {
        adam.step(&mut theta, &grad, opts.learning_rate)?;
        params.set_param_vec(&theta);
        theta = params.param_vec()?;
        let (loss, g) = tlbce_with_grad(&params, d)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("recalibrator loss became non-finite".into()));
        }
        if loss < best.0 {
            best = (loss, params.clone());
        }
        grad = g;
    }
    // With one-sided labels the loss has no interior minimizer: it keeps
    // falling toward a corner of the parameter box, while Adam's step shrinks
    // as the gradient vanishes. Jump to that corner when it is no worse.
    if !warnings.is_empty() {
        let (_, g) = tlbce_with_grad(&best.1, d)?;
        let current = best.1.param_vec()?;
        let corner: Vec<f64> = g
            .iter()
            .zip(&current)
            .map(|(&g, &x)| if g == 0.0 { x } else { -g.signum() * f64::INFINITY })
            .collect();
        let mut candidate = best.1.clone();
        candidate.set_param_vec(&corner);
        let (loss, _) = tlbce_with_grad(&candidate, d)?;
        if loss.is_finite() && loss <= best.0 {
            best = (loss, candidate);
        }
    }
    let (final_loss, params) = best;
    if params.at_bound() {
        warnings.push(FitWarning::ParameterClamped);
    }
    Ok(FitResult {
        params,
        initial_loss,
        final_loss,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn temperature_apply_examples() {
        let p = temperature_apply(0.7f64.ln(), &[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = temperature_apply(0.0, &[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let p = temperature_apply(1e6f64.ln(), &[4.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn platt_apply_examples() {
        assert_eq!(platt_apply(0.0, 0.0, 0.3), 0.5);
        let expect = 1.0 / (1.0 + (-2f64).exp());
        assert!((platt_apply(-2.0, 0.0, 1.0) - expect).abs() < 1e-15);
        assert!((platt_apply(-2.0, 0.0, 1.0) - 0.88080).abs() < 1e-5);
        assert_eq!(platt_apply(-2.0, 1.0, 0.5), 0.5);
    }

    #[test]
    fn histogram_binning_examples() {
        let conf = [0.6, 0.6, 0.9, 0.9];
        let correct = [true, false, true, false];
        let bins = Bins::fit(&conf, &correct, 2).unwrap();
        assert_eq!(bins.values, vec![0.5, 0.5]);
        bins.validate().unwrap();

        let one = Bins::fit(&conf, &[true, true, true, false], 1).unwrap();
        assert_eq!(one.apply(0.1), 0.75);
        assert_eq!(one.apply(1.0), 0.75);

        assert!(Bins::fit(&conf, &correct, 5).is_err());
    }

    #[test]
    fn bin_edges_are_left_closed() {
        let bins = Bins {
            edges: vec![0.0, 0.5, 1.0],
            values: vec![0.1, 0.9],
        };
        assert_eq!(bins.apply(0.5), 0.9);
        assert_eq!(bins.apply(0.4999), 0.1);
        assert_eq!(bins.apply(1.0), 0.9);
        assert_eq!(bins.apply(0.0), 0.1);
    }

    #[test]
    fn binning_is_piecewise_constant_with_at_most_m_values() {
        let conf: Vec<f64> = (0..200).map(|i| 0.5 + 0.5 * ((i * 37 % 200) as f64) / 200.0).collect();
        let correct: Vec<bool> = (0..200).map(|i| i % 3 != 0).collect();
        for m in [1, 2, 7, 15] {
            let bins = Bins::fit(&conf, &correct, m).unwrap();
            let mut distinct: Vec<f64> = (0..=1000).map(|i| bins.apply(i as f64 / 1000.0)).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            assert!(distinct.len() <= m);
        }
    }

    fn binary(logits: Array2<f32>, labels: Vec<u32>) -> CalibrationDataset {
        let n = labels.len();
        CalibrationDataset::new("t", Array2::zeros((n, 0)), logits, labels).unwrap()
    }

    #[test]
    fn platt_binning_degenerate_and_overfit() {
        let d = binary(
            array![[0.0, 2.0], [1.0, 0.0], [0.0, 0.5], [3.0, 0.0], [0.0, 1.5]],
            vec![1, 0, 0, 0, 1],
        );
        // w = b = 0 maps everything to 0.5: one effective value, the overall accuracy.
        let fit = platt_binning_with(&d, 0.0, 0.0, 3).unwrap();
        let (conf, correct) = fit.params.apply_dataset(&d).unwrap();
        let acc = correct.iter().filter(|&&c| c).count() as f64 / 5.0;
        assert!(conf.iter().all(|&c| c == acc));

        let fit = platt_binning_with(&d, -3.0, 1.0, 5).unwrap();
        let RecalibratorParams::PlattBins { bins, .. } = &fit.params else { panic!() };
        assert!(bins.values.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn platt_binning_on_four_point_example() {
        // Positive-class probabilities chosen so Platt(w=-1,b=0) yields two
        // distinct confidence levels shared by a correct and a wrong point.
        let d = binary(
            array![[0.0, 2.0], [0.0, 2.0], [0.0, -2.0], [0.0, -2.0]],
            vec![1, 0, 0, 1],
        );
        let fit = platt_binning_with(&d, -1.0, 0.0, 2).unwrap();
        let RecalibratorParams::PlattBins { bins, .. } = &fit.params else { panic!() };
        assert_eq!(bins.values, vec![0.5, 0.5]);
    }

    #[test]
    fn degenerate_single_point_fit_is_clamped_and_flagged() {
        let d = binary(array![[0.0, 1.0]], vec![1]);
        let fit = fit_recalibrator(&d, RecalibratorKind::Temperature, &FitOptions::default()).unwrap();
        assert!(fit.warnings.contains(&FitWarning::DegenerateLabels));
        let log_t = match fit.params {
            RecalibratorParams::Temperature { log_t } => log_t,
            _ => unreachable!(),
        };
        assert!(log_t.abs() <= LOG_T_BOUND);
        assert!(log_t < 0.0, "all-correct data should sharpen, got log_t={log_t}");
        assert!(fit.final_loss <= fit.initial_loss);
    }

    #[test]
    fn platt_needs_two_classes() {
        let d = CalibrationDataset::new(
            "k3",
            Array2::zeros((1, 0)),
            array![[0.0, 1.0, 2.0]],
            vec![2],
        )
        .unwrap();
        assert!(fit_recalibrator(&d, RecalibratorKind::Platt, &FitOptions::default()).is_err());
        assert!(fit_recalibrator(&d, RecalibratorKind::Temperature, &FitOptions::default()).is_ok());
    }

    #[test]
    fn serde_shape_is_tagged() {
        let p = RecalibratorParams::Temperature { log_t: 0.25 };
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["kind"], "temperature");
        assert_eq!(v["params"]["log_t"], 0.25);
        let back: RecalibratorParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
