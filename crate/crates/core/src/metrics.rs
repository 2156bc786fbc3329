//! Calibration metrics over equal-mass bins, selective evaluation, and
//! coverage curves.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::math::ceil_tolerant;
use crate::recalibrate::RecalibratorParams;
use crate::selector::{choose_threshold, coverage_at};
use crate::train::TrainedModel;

pub const DEFAULT_BINS: usize = 15;

/// Sizes of `m` contiguous groups over `n` sorted items; sizes differ by at
/// most one and the larger groups come first.
pub fn equal_mass_sizes(n: usize, m: usize) -> Vec<usize> {
    let (base, rem) = (n / m, n % m);
    (0..m).map(|j| base + usize::from(j < rem)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin_index: usize,
    pub mean_conf: f64,
    pub accuracy: f64,
    pub count: usize,
}

fn check_inputs(conf: &[f64], correct: &[bool], m: usize) -> Result<()> {
    if conf.len() != correct.len() {
        return Err(Error::Shape(format!(
            "{} confidences vs {} correctness flags",
            conf.len(),
            correct.len()
        )));
    }
    if m == 0 || m > conf.len() {
        return Err(Error::Config(format!(
            "bin count {m} must be in 1..={}",
            conf.len()
        )));
    }
    Ok(())
}

/// Per-bin statistics over `m` equal-mass bins of the sorted confidences.
pub fn reliability_bins(conf: &[f64], correct: &[bool], m: usize) -> Result<Vec<BinRow>> {
    check_inputs(conf, correct, m)?;
    let mut pairs: Vec<(f64, bool)> = conf.iter().copied().zip(correct.iter().copied()).collect();
    // Sorting on both keys makes the result independent of input order.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut rows = Vec::with_capacity(m);
    let mut start = 0;
    for (j, size) in equal_mass_sizes(pairs.len(), m).into_iter().enumerate() {
        let bin = &pairs[start..start + size];
        start += size;
        let count = bin.len();
        let mean_conf = bin.iter().map(|p| p.0).sum::<f64>() / count as f64;
        let accuracy = bin.iter().filter(|p| p.1).count() as f64 / count as f64;
        rows.push(BinRow {
            bin_index: j,
            mean_conf,
            accuracy,
            count,
        });
    }
    Ok(rows)
}

/// ECE_q: the q-power mean over equal-mass bins of |accuracy − confidence|.
pub fn ece(conf: &[f64], correct: &[bool], q: u32, m: usize) -> Result<f64> {
    if q == 0 {
        return Err(Error::Config("ECE exponent must be >= 1".into()));
    }
    Ok(ece_from_bins(&reliability_bins(conf, correct, m)?, q))
}

fn ece_from_bins(rows: &[BinRow], q: u32) -> f64 {
    let mean = rows
        .iter()
        .map(|r| (r.accuracy - r.mean_conf).abs().powi(q as i32))
        .sum::<f64>()
        / rows.len() as f64;
    mean.powf(1.0 / q as f64)
}

/// Top-label Brier score.
pub fn brier(conf: &[f64], correct: &[bool]) -> Result<f64> {
    if conf.is_empty() {
        return Err(Error::Config("Brier score of no predictions".into()));
    }
    if conf.len() != correct.len() {
        return Err(Error::Shape("confidence/correctness length mismatch".into()));
    }
    let s: f64 = conf
        .iter()
        .zip(correct)
        .map(|(&c, &y)| (c - if y { 1.0 } else { 0.0 }).powi(2))
        .sum();
    Ok(s / conf.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalWarning {
    /// Fewer accepted instances than bins; the bin count was reduced.
    BinsReduced,
    /// Ties at the threshold pushed coverage above the target.
    DegenerateThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub beta_target: f64,
    pub coverage_achieved: f64,
    pub tau: f64,
    pub ece1: f64,
    pub ece2: f64,
    pub brier: f64,
    pub selective_accuracy: f64,
    pub n_accepted: usize,
    pub n_total: usize,
    pub bins_used: usize,
    pub bins: Vec<BinRow>,
    pub warnings: Vec<EvalWarning>,
}

/// Evaluates the recalibrated confidences of the rows with `scores >= tau`.
pub fn evaluate_at_threshold(
    scores: &[f64],
    tau: f64,
    recal: &RecalibratorParams,
    d: &CalibrationDataset,
    beta: f64,
    m: usize,
) -> Result<EvalReport> {
    if scores.len() != d.n() {
        return Err(Error::Shape(format!("{} scores for {} rows", scores.len(), d.n())));
    }
    let mask: Vec<bool> = scores.iter().map(|&s| s >= tau).collect();
    if !mask.iter().any(|&k| k) {
        return Err(Error::Validation(format!("threshold {tau} accepts no instances")));
    }
    evaluate_mask(&mask, tau, recal, d, beta, m)
}

/// Evaluates the recalibrated confidences of the rows where `mask` is set.
/// `tau` is only echoed into the report.
pub fn evaluate_mask(
    mask: &[bool],
    tau: f64,
    recal: &RecalibratorParams,
    d: &CalibrationDataset,
    beta: f64,
    m: usize,
) -> Result<EvalReport> {
    if d.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    if mask.len() != d.n() {
        return Err(Error::Shape(format!("mask of length {} for {} rows", mask.len(), d.n())));
    }
    if m == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    let accepted: Vec<usize> = (0..d.n()).filter(|&i| mask[i]).collect();
    if accepted.is_empty() {
        return Err(Error::Validation("selection accepts no instances".into()));
    }
    let (conf, correct) = recal.apply_dataset(&d.select_rows(&accepted))?;
    let mut warnings = Vec::new();
    let bins_used = if accepted.len() < m {
        warnings.push(EvalWarning::BinsReduced);
        accepted.len()
    } else {
        m
    };
    if accepted.len() > ceil_tolerant(beta * d.n() as f64).max(1) {
        warnings.push(EvalWarning::DegenerateThreshold);
    }
    let bins = reliability_bins(&conf, &correct, bins_used)?;
    Ok(EvalReport {
        beta_target: beta,
        coverage_achieved: accepted.len() as f64 / d.n() as f64,
        tau,
        ece1: ece_from_bins(&bins, 1),
        ece2: ece_from_bins(&bins, 2),
        brier: brier(&conf, &correct)?,
        selective_accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
        n_accepted: accepted.len(),
        n_total: d.n(),
        bins_used,
        bins,
        warnings,
    })
}

/// Chooses the threshold on `scores` for coverage `beta` and evaluates.
pub fn selective_eval_scores(
    scores: &[f64],
    recal: &RecalibratorParams,
    d: &CalibrationDataset,
    beta: f64,
    m: usize,
) -> Result<EvalReport> {
    let tau = choose_threshold(scores, beta)?;
    evaluate_at_threshold(scores, tau, recal, d, beta, m)
}

pub fn selective_eval(model: &TrainedModel, d: &CalibrationDataset, beta: f64, m: usize) -> Result<EvalReport> {
    let scores = model.scores(d)?;
    selective_eval_scores(&scores, &model.recalibrator, d, beta, m)
}

/// Threshold from a separate tuning set, evaluation on `d`.
pub fn selective_eval_tuned(
    model: &TrainedModel,
    tune: &CalibrationDataset,
    d: &CalibrationDataset,
    beta: f64,
    m: usize,
) -> Result<EvalReport> {
    let tau = choose_threshold(&model.scores(tune)?, beta)?;
    let scores = model.scores(d)?;
    let report = evaluate_at_threshold(&scores, tau, &model.recalibrator, d, beta, m)?;
    log::info!(
        "tuning coverage {:.4}, test coverage {:.4}",
        coverage_at(&model.scores(tune)?, tau),
        report.coverage_achieved
    );
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveAuc {
    pub ece1: f64,
    pub ece2: f64,
    pub brier: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub grid: Vec<f64>,
    pub ece1: Vec<f64>,
    pub ece2: Vec<f64>,
    pub brier: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub coverage: Vec<f64>,
    pub auc: CurveAuc,
}

/// Trapezoidal area under `values` over `grid`, divided by the grid span.
/// A single-point grid returns its value.
pub fn normalized_auc(grid: &[f64], values: &[f64]) -> f64 {
    if grid.len() == 1 {
        return values[0];
    }
    let area: f64 = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum();
    area / (grid[grid.len() - 1] - grid[0])
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty coverage grid".into()));
    }
    if grid.iter().any(|b| !(0.5 - 1e-12..=1.0 + 1e-12).contains(b)) {
        return Err(Error::Config(format!("coverage grid must lie in [0.5, 1.0]: {grid:?}")));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("coverage grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `start:end:step` grid, inclusive of `end` up to rounding.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad grid {spec:?}: {e}")))?;
    let [a, b, step] = parts[..] else {
        return Err(Error::Config(format!("grid must be start:end:step, got {spec:?}")));
    };
    if !(step > 0.0) || b < a {
        return Err(Error::Config(format!("bad grid {spec:?}")));
    }
    let count = ((b - a) / step + 1e-9).floor() as usize + 1;
    // Round to 1e-9 so 0.5 + 3 * 0.05 prints as 0.65.
    let grid = (0..count)
        .map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9)
        .collect::<Vec<_>>();
    validate_grid(&grid)?;
    Ok(grid)
}

pub fn coverage_curve_scores(
    scores: &[f64],
    recal: &RecalibratorParams,
    d: &CalibrationDataset,
    grid: &[f64],
    m: usize,
) -> Result<CoverageCurve> {
    validate_grid(grid)?;
    let reports = grid
        .par_iter()
        .map(|&beta| selective_eval_scores(scores, recal, d, beta, m))
        .collect::<Result<Vec<_>>>()?;
    let col = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let (ece1, ece2, brier, accuracy) = (
        col(|r| r.ece1),
        col(|r| r.ece2),
        col(|r| r.brier),
        col(|r| r.selective_accuracy),
    );
    Ok(CoverageCurve {
        grid: grid.to_vec(),
        auc: CurveAuc {
            ece1: normalized_auc(grid, &ece1),
            ece2: normalized_auc(grid, &ece2),
            brier: normalized_auc(grid, &brier),
            accuracy: normalized_auc(grid, &accuracy),
        },
        coverage: col(|r| r.coverage_achieved),
        ece1,
        ece2,
        brier,
        accuracy,
    })
}

pub fn coverage_auc(model: &TrainedModel, d: &CalibrationDataset, grid: &[f64], m: usize) -> Result<CoverageCurve> {
    let scores = model.scores(d)?;
    coverage_curve_scores(&scores, &model.recalibrator, d, grid, m)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

impl CoverageCurve {
    /// CSV with one row per grid point and a trailing `auc` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["beta", "ece1", "ece2", "brier", "accuracy"])?;
        for i in 0..self.grid.len() {
            out.write_record([
                fmt(self.grid[i]),
                fmt(self.ece1[i]),
                fmt(self.ece2[i]),
                fmt(self.brier[i]),
                fmt(self.accuracy[i]),
            ])?;
        }
        out.write_record([
            "auc".to_string(),
            fmt(self.auc.ece1),
            fmt(self.auc.ece2),
            fmt(self.auc.brier),
            fmt(self.auc.accuracy),
        ])?;
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn write_bins_csv<W: Write>(rows: &[BinRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_index", "mean_conf", "accuracy", "count"])?;
    for r in rows {
        out.write_record([
            r.bin_index.to_string(),
            fmt(r.mean_conf),
            fmt(r.accuracy),
            r.count.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
