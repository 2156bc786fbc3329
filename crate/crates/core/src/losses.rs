//! Selection losses, the coverage loss, and their combination.
//!
//! Every loss has a value-only function and a `_grad` variant returning the
//! partial derivatives with respect to the soft selector scores `g` and the
//! recalibrated confidences `h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONF_CLAMP: f64 = 1e-7;
const MIN_COVERAGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "s-tlbce")]
    STlbce,
    #[serde(rename = "s-mce")]
    SMce,
    #[serde(rename = "s-mmce")]
    SMmce,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s-tlbce" => Ok(Self::STlbce),
            "s-mce" => Ok(Self::SMce),
            "s-mmce" => Ok(Self::SMmce),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub q: f64,
    pub kernel_bandwidth: f64,
    pub lambda: f64,
    pub beta: f64,
    pub drop_denominator: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::STlbce,
            q: 2.0,
            kernel_bandwidth: 0.2,
            lambda: 32.0,
            beta: 0.8,
            drop_denominator: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 1.0) {
            return Err(Error::Config(format!("q must be >= 1, got {}", self.q)));
        }
        if !(self.kernel_bandwidth > 0.0) {
            return Err(Error::Config(format!(
                "kernel bandwidth must be > 0, got {}",
                self.kernel_bandwidth
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// A loss value and its partials.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d_g: Vec<f64>,
    /// Partial with respect to the confidence input (top-label confidence,
    /// or true-class probability for S-MCE).
    pub d_h: Vec<f64>,
}

fn check_len(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::Shape(format!("loss inputs have lengths {a}, {b}, {c}")));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamped value and the derivative of the clamp.
fn clamp_conf(h: f64) -> (f64, f64) {
    if h < CONF_CLAMP {
        (CONF_CLAMP, 0.0)
    } else if h > 1.0 - CONF_CLAMP {
        (1.0 - CONF_CLAMP, 0.0)
    } else {
        (h, 1.0)
    }
}

pub fn s_tlbce(g: &[f64], h: &[f64], correct: &[bool]) -> Result<f64> {
    Ok(s_tlbce_grad(g, h, correct)?.value)
}

/// Selective top-label binary cross entropy.
pub fn s_tlbce_grad(g: &[f64], h: &[f64], correct: &[bool]) -> Result<LossEval> {
    check_len(g.len(), h.len(), correct.len())?;
    let n = g.len() as f64;
    let mut value = 0.0;
    let mut d_g = Vec::with_capacity(g.len());
    let mut d_h = Vec::with_capacity(g.len());
    for ((&gi, &hi), &ci) in g.iter().zip(h).zip(correct) {
        let (hc, dclamp) = clamp_conf(hi);
        let (ll, dll) = if ci {
            (hc.ln(), 1.0 / hc)
        } else {
            ((1.0 - hc).ln(), -1.0 / (1.0 - hc))
        };
        value -= gi * ll;
        d_g.push(-ll / n);
        d_h.push(-gi * dll * dclamp / n);
    }
    Ok(LossEval {
        value: value / n,
        d_g,
        d_h,
    })
}

pub fn s_mce(g: &[f64], p_true: &[f64]) -> Result<f64> {
    Ok(s_mce_grad(g, p_true)?.value)
}

/// Selective multi-class cross entropy over the true-class probability.
pub fn s_mce_grad(g: &[f64], p_true: &[f64]) -> Result<LossEval> {
    check_len(g.len(), p_true.len(), g.len())?;
    let n = g.len() as f64;
    let mut value = 0.0;
    let mut d_g = Vec::with_capacity(g.len());
    let mut d_h = Vec::with_capacity(g.len());
    for (&gi, &pi) in g.iter().zip(p_true) {
        let (pc, dclamp) = clamp_conf(pi);
        value -= gi * pc.ln();
        d_g.push(-pc.ln() / n);
        d_h.push(-gi * dclamp / (pc * n));
    }
    Ok(LossEval {
        value: value / n,
        d_g,
        d_h,
    })
}

pub fn s_mmce(g: &[f64], h: &[f64], correct: &[bool], q: f64, bandwidth: f64) -> Result<f64> {
    Ok(s_mmce_grad(g, h, correct, q, bandwidth)?.value)
}

/// Selective kernel calibration error with a Laplacian kernel
/// `exp(-|a - b| / bandwidth)`, diagonal pairs included.
pub fn s_mmce_grad(
    g: &[f64],
    h: &[f64],
    correct: &[bool],
    q: f64,
    bandwidth: f64,
) -> Result<LossEval> {
    check_len(g.len(), h.len(), correct.len())?;
    let n = g.len();
    let nf = n as f64;
    // Residual powers e_i = |c_i - h_i|^q and their derivatives in h.
    let mut e = Vec::with_capacity(n);
    let mut de = Vec::with_capacity(n);
    let mut hc = Vec::with_capacity(n);
    for (&hi, &ci) in h.iter().zip(correct) {
        let (x, dclamp) = clamp_conf(hi);
        let y = if ci { 1.0 } else { 0.0 };
        let r = (y - x).abs();
        e.push(r.powf(q));
        // d|y - x|/dx = sign(x - y)
        de.push(q * r.powf(q - 1.0) * sign(x - y) * dclamp);
        hc.push((x, dclamp));
    }
    let u: Vec<f64> = e.iter().zip(g).map(|(e, g)| e * g).collect();

    let mut s = 0.0;
    // Row sums Σ_j u_j φ_kj and Σ_j u_j ∂φ_kj/∂h_k.
    let mut row = vec![0.0; n];
    let mut row_dphi = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        let mut acc_d = 0.0;
        for j in 0..n {
            let diff = hc[k].0 - hc[j].0;
            let phi = (-diff.abs() / bandwidth).exp();
            acc += u[j] * phi;
            acc_d += u[j] * (-sign(diff) / bandwidth) * phi;
        }
        s += u[k] * acc;
        row[k] = acc;
        row_dphi[k] = acc_d * hc[k].1;
    }
    s /= nf * nf;

    let value = if s > 0.0 { s.powf(1.0 / q) } else { 0.0 };
    let outer = if s > 0.0 { value / (q * s) } else { 0.0 };
    let scale = 2.0 / (nf * nf);
    let d_g = (0..n).map(|k| outer * scale * row[k] * e[k]).collect();
    let d_h = (0..n)
        .map(|k| outer * scale * (row[k] * g[k] * de[k] + u[k] * row_dphi[k]))
        .collect();
    Ok(LossEval { value, d_g, d_h })
}

/// `(beta - mean(g))²` and its gradient in `g`.
pub fn coverage_loss_grad(g: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    if g.is_empty() {
        return Err(Error::Config("coverage loss of an empty batch".into()));
    }
    let n = g.len() as f64;
    let gap = beta - g.iter().sum::<f64>() / n;
    Ok((gap * gap, vec![-2.0 * gap / n; g.len()]))
}

pub fn coverage_loss(g: &[f64], beta: f64) -> Result<f64> {
    Ok(coverage_loss_grad(g, beta)?.0)
}

/// `L_sel + λ L_cov`.
pub fn total_loss(selection: f64, coverage: f64, lambda: f64) -> f64 {
    selection + lambda * coverage
}

/// Selection loss divided by the soft coverage (clamped below at 1e-3).
pub fn with_denominator(selection: f64, mean_g: f64) -> f64 {
    selection / mean_g.max(MIN_COVERAGE)
}

/// Per-instance inputs to the training objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub g: &'a [f64],
    pub top_conf: &'a [f64],
    pub p_true: &'a [f64],
    pub correct: &'a [bool],
}

/// Combined objective and partials with respect to `g`, the top-label
/// confidences, and the true-class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub selection: f64,
    pub coverage: f64,
    pub d_g: Vec<f64>,
    pub d_top_conf: Vec<f64>,
    pub d_p_true: Vec<f64>,
}

pub fn objective(cfg: &LossConfig, x: ObjectiveInputs<'_>) -> Result<ObjectiveEval> {
    let n = x.g.len();
    check_len(n, x.top_conf.len(), x.correct.len())?;
    check_len(n, x.p_true.len(), n)?;
    let zeros = vec![0.0; n];
    let (sel, on_top) = match cfg.kind {
        LossKind::STlbce => (s_tlbce_grad(x.g, x.top_conf, x.correct)?, true),
        LossKind::SMce => (s_mce_grad(x.g, x.p_true)?, false),
        LossKind::SMmce => (
            s_mmce_grad(x.g, x.top_conf, x.correct, cfg.q, cfg.kernel_bandwidth)?,
            true,
        ),
    };
    let LossEval {
        value: mut selection,
        mut d_g,
        mut d_h,
    } = sel;
    if !cfg.drop_denominator {
        let mean_g = x.g.iter().sum::<f64>() / n as f64;
        let denom = mean_g.max(MIN_COVERAGE);
        let raw = selection;
        selection = raw / denom;
        let d_denom = if mean_g > MIN_COVERAGE {
            -raw / (denom * denom) / n as f64
        } else {
            0.0
        };
        d_g.iter_mut().for_each(|d| *d = *d / denom + d_denom);
        d_h.iter_mut().for_each(|d| *d /= denom);
    }
    let (coverage, d_cov) = coverage_loss_grad(x.g, cfg.beta)?;
    d_g.iter_mut()
        .zip(&d_cov)
        .for_each(|(d, c)| *d += cfg.lambda * c);
    let (d_top_conf, d_p_true) = if on_top { (d_h, zeros) } else { (zeros, d_h) };
    Ok(ObjectiveEval {
        value: total_loss(selection, coverage, cfg.lambda),
        selection,
        coverage,
        d_g,
        d_top_conf,
        d_p_true,
    })
}
