//! Pre-training of the recalibrator followed by joint or sequential training
//! of the selector (and, in joint mode, the recalibrator).

pub mod adam;

use log::{debug, info};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::CalibrationDataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossKind, ObjectiveInputs};
use crate::math;
use crate::recalibrate::{self, FitOptions, RecalibratorKind, RecalibratorParams};
use crate::selector::SelectorParams;

pub use adam::{adam_step, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Selector and recalibrator updated together.
    Joint,
    /// Recalibrator frozen after pre-training.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub mode: TrainMode,
    pub recalibrator: RecalibratorKind,
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    /// Std of Gaussian noise added to training embeddings (0 disables).
    pub noise_std: f64,
    /// Train on a seeded subsample of this many rows.
    pub train_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            mode: TrainMode::Joint,
            recalibrator: RecalibratorKind::Temperature,
            hidden_dims: crate::selector::DEFAULT_HIDDEN.to_vec(),
            learning_rate: 5e-4,
            epochs: 1000,
            batch_size: 100,
            seed: 0,
            pretrain_steps: 500,
            pretrain_lr: 0.05,
            noise_std: 0.0,
            train_samples: None,
        }
    }
}

impl TrainConfig {
    /// Published hyperparameter presets: `camelyon`, `imagenet`, `ood`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let cfg = match name {
            "camelyon" => Self {
                learning_rate: 5e-4,
                loss: LossConfig { lambda: 32.0, ..base.loss },
                train_samples: Some(1000),
                epochs: 1000,
                batch_size: 100,
                hidden_dims: vec![128, 128],
                recalibrator: RecalibratorKind::Platt,
                ..base
            },
            "imagenet" => Self {
                learning_rate: 1e-5,
                loss: LossConfig { lambda: 32.0, ..base.loss },
                train_samples: Some(2000),
                epochs: 1000,
                batch_size: 200,
                hidden_dims: vec![128, 128],
                recalibrator: RecalibratorKind::Temperature,
                ..base
            },
            "ood" => Self {
                learning_rate: 1e-4,
                loss: LossConfig { lambda: 8.0, ..base.loss },
                train_samples: None,
                epochs: 50,
                batch_size: 256,
                hidden_dims: vec![64],
                recalibrator: RecalibratorKind::Temperature,
                noise_std: 1.0,
                ..base
            },
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !self.recalibrator.is_differentiable() {
            return Err(Error::Config(format!(
                "{:?} recalibrator cannot be trained jointly; use temperature or platt",
                self.recalibrator
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            steps: self.pretrain_steps,
            learning_rate: self.pretrain_lr,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Full-data objective before the first selector update.
    pub initial_loss: f64,
    /// Full-data objective after the last update.
    pub final_loss: f64,
    /// Mean mini-batch objective per epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub selector: SelectorParams,
    pub recalibrator: RecalibratorParams,
    pub config: TrainConfig,
    pub trace: TrainingTrace,
}

/// Rows of a dataset in the form the objective consumes.
#[derive(Debug, Clone)]
pub struct Batch {
    pub embeddings: Array2<f64>,
    pub logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_dataset(d: &CalibrationDataset) -> Self {
        Self {
            embeddings: d.embeddings_f64(),
            logits: (0..d.n()).map(|i| d.logit_row(i)).collect(),
            labels: d.labels().iter().map(|&l| l as usize).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select(Axis(0), idx),
            logits: idx.iter().map(|&i| self.logits[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Objective value with gradients for the selector (flat layout) and the
/// recalibrator parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub selection: f64,
    pub coverage: f64,
    pub mean_g: f64,
    pub d_selector: Vec<f64>,
    pub d_recalibrator: Vec<f64>,
}

pub fn objective_and_grad(
    selector: &SelectorParams,
    recal: &RecalibratorParams,
    batch: &Batch,
    cfg: &LossConfig,
) -> Result<ObjectiveGrad> {
    let cache = selector.forward_cached(batch.embeddings.view())?;
    let g = cache.scores().to_vec();
    let jets = batch
        .logits
        .iter()
        .zip(&batch.labels)
        .map(|(z, &y)| recal.jet(z, y))
        .collect::<Result<Vec<_>>>()?;
    let top: Vec<f64> = jets.iter().map(|j| j.top_conf).collect();
    let p_true: Vec<f64> = jets.iter().map(|j| j.p_true).collect();
    let correct: Vec<bool> = jets.iter().map(|j| j.correct).collect();
    let eval = losses::objective(
        cfg,
        ObjectiveInputs {
            g: &g,
            top_conf: &top,
            p_true: &p_true,
            correct: &correct,
        },
    )?;
    let d_selector = selector.backward(&cache, &eval.d_g)?;
    let mut d_recalibrator = vec![0.0; recal.param_vec()?.len()];
    for (i, jet) in jets.iter().enumerate() {
        for (k, d) in d_recalibrator.iter_mut().enumerate() {
            *d += eval.d_top_conf[i] * jet.d_top_conf[k] + eval.d_p_true[i] * jet.d_p_true[k];
        }
    }
    Ok(ObjectiveGrad {
        value: eval.value,
        selection: eval.selection,
        coverage: eval.coverage,
        mean_g: g.iter().sum::<f64>() / g.len() as f64,
        d_selector,
        d_recalibrator,
    })
}

/// Fits the recalibrator that seeds the main loop.
pub fn pretrain_recalibrator(d: &CalibrationDataset, cfg: &TrainConfig) -> Result<RecalibratorParams> {
    let fit = recalibrate::fit_recalibrator(d, cfg.recalibrator, &cfg.fit_options())?;
    if !fit.warnings.is_empty() {
        info!("pre-training warnings: {:?}", fit.warnings);
    }
    Ok(fit.params)
}

pub fn train_selective_recalibration(d_train: &CalibrationDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if d_train.embed_dim() == 0 {
        return Err(Error::Config(
            "training a selector needs embeddings (embed_dim = 0)".into(),
        ));
    }
    if d_train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if cfg.loss.kind == LossKind::SMce && cfg.recalibrator == RecalibratorKind::Platt {
        debug!("S-MCE with a Platt recalibrator uses the recalibrated true-class probability");
    }

    let data = match cfg.train_samples {
        Some(k) if k < d_train.n() => {
            let mut idx: Vec<usize> = (0..d_train.n()).collect();
            idx.shuffle(&mut math::rng(cfg.seed ^ 0x5eed_5a3b));
            idx.truncate(k);
            d_train.select_rows(&idx)
        }
        _ => d_train.clone(),
    };

    let mut recal = pretrain_recalibrator(&data, cfg)?;
    let mut selector = SelectorParams::init(data.embed_dim(), &cfg.hidden_dims, cfg.seed)?;
    let full = Batch::from_dataset(&data);
    let initial_loss = objective_and_grad(&selector, &recal, &full, &cfg.loss)?.value;

    let joint = cfg.mode == TrainMode::Joint;
    let n_sel = selector.num_params();
    let mut theta = selector.flat();
    if joint {
        theta.extend(recal.param_vec()?);
    }
    let mut adam = Adam::new(theta.len());
    let mut shuffle_rng = math::rng(cfg.seed.wrapping_add(1));
    let mut noise_rng = math::rng(cfg.seed.wrapping_add(2));
    let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).expect("validated"));

    let mut order: Vec<usize> = (0..full.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = full.rows(chunk);
            if let Some(noise) = &noise {
                batch
                    .embeddings
                    .mapv_inplace(|v| v + noise.sample(&mut noise_rng));
            }
            let og = objective_and_grad(&selector, &recal, &batch, &cfg.loss)?;
            if !og.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batches} \
                     (selection {}, coverage {}, mean g {})",
                    og.selection, og.coverage, og.mean_g
                )));
            }
            sum += og.value;
            batches += 1;

            let mut grad = og.d_selector;
            if joint {
                grad.extend(og.d_recalibrator);
            }
            adam.step(&mut theta, &grad, cfg.learning_rate)?;
            selector.set_flat(&theta[..n_sel]);
            if joint {
                recal.set_param_vec(&theta[n_sel..]);
                let clamped = recal.param_vec()?;
                theta[n_sel..].copy_from_slice(&clamped);
            }
        }
        epoch_losses.push(sum / batches as f64);
        if epoch % 100 == 0 {
            debug!("epoch {epoch}: mean batch loss {}", sum / batches as f64);
        }
    }

    // Stored models hold f32 weights; keep the in-memory model identical.
    selector.round_to_f32();
    let final_loss = objective_and_grad(&selector, &recal, &full, &cfg.loss)?.value;
    info!("trained: loss {initial_loss:.6} -> {final_loss:.6}");
    Ok(TrainedModel {
        selector,
        recalibrator: recal,
        config: cfg.clone(),
        trace: TrainingTrace {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    })
}

impl TrainedModel {
    /// Soft selector scores for every row of `d`.
    pub fn scores(&self, d: &CalibrationDataset) -> Result<Vec<f64>> {
        if d.embed_dim() != self.selector.input_dim {
            return Err(Error::Shape(format!(
                "data embed_dim {} does not match model embed_dim {}",
                d.embed_dim(),
                self.selector.input_dim
            )));
        }
        Ok(self.selector.forward(d.embeddings_f64().view())?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_values() {
        let c = TrainConfig::preset("camelyon").unwrap();
        assert_eq!(
            (c.learning_rate, c.loss.lambda, c.train_samples, c.epochs, c.batch_size),
            (5e-4, 32.0, Some(1000), 1000, 100)
        );
        assert_eq!(c.recalibrator, RecalibratorKind::Platt);
        let i = TrainConfig::preset("imagenet").unwrap();
        assert_eq!((i.learning_rate, i.train_samples, i.batch_size), (1e-5, Some(2000), 200));
        let o = TrainConfig::preset("ood").unwrap();
        assert_eq!((o.loss.lambda, o.epochs, o.batch_size, o.noise_std), (8.0, 50, 256, 1.0));
        assert_eq!(o.hidden_dims, vec![64]);
        assert!(TrainConfig::preset("cifar").is_err());
    }

    #[test]
    fn config_json_uses_field_names() {
        let v = serde_json::to_value(TrainConfig::default()).unwrap();
        for key in ["loss", "mode", "recalibrator", "hidden_dims", "learning_rate", "epochs", "batch_size", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["loss"]["kind"], "s-tlbce");
        let partial: TrainConfig =
            serde_json::from_str(r#"{"mode": "sequential", "loss": {"lambda": 8}}"#).unwrap();
        assert_eq!(partial.mode, TrainMode::Sequential);
        assert_eq!(partial.loss.lambda, 8.0);
        assert_eq!(partial.loss.q, 2.0);
    }

    #[test]
    fn binning_recalibrator_rejected_for_training() {
        let cfg = TrainConfig {
            recalibrator: RecalibratorKind::HistogramBins,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
