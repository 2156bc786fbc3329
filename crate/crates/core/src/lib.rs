//! Selective recalibration over precomputed classifier outputs.
//!
//! A soft selector over embeddings and a post-hoc recalibrator are trained
//! together so that the confidences of the accepted instances are calibrated
//! at a target coverage. The crate also ships the evaluation metrics, the
//! selection baselines, and a lab that evaluates population calibration
//! functionals on a perturbed truncated-Gaussian mixture.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model_file;
pub mod recalibrate;
pub mod selector;
pub mod theorylab;
pub mod train;

pub use dataset::{CalibrationDataset, DerivedOutputs};
pub use error::{Error, Result};
pub use metrics::{CoverageCurve, EvalReport};
pub use recalibrate::{RecalibratorKind, RecalibratorParams};
pub use selector::{CoverageBound, SelectorParams};
pub use train::{TrainConfig, TrainedModel};

/// Version string recorded in model-file provenance.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
