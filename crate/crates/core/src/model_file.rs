//! JSON model file: recalibrator parameters, selector weights as base64
//! little-endian f32 arrays, the training config echo and provenance.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recalibrate::RecalibratorParams;
use crate::selector::{Dense, SelectorParams};
use crate::train::{TrainConfig, TrainedModel, TrainingTrace};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    /// Base64 of the row-major f32 little-endian values.
    pub data: String,
}

impl Tensor {
    fn encode(shape: Vec<usize>, values: impl Iterator<Item = f64>) -> Self {
        let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
        Self { shape, data: STANDARD.encode(bytes) }
    }

    fn decode(&self, what: &str) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Format(format!("{what}: invalid base64: {e}")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != 4 * expected {
            return Err(Error::Corruption(format!(
                "{what}: shape {:?} needs {} bytes, found {}",
                self.shape,
                4 * expected,
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("{what}: non-finite weight")));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorFile {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub layers: Vec<LayerFile>,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub recalibrator: RecalibratorParams,
    pub selector: SelectorFile,
    pub train_config: TrainConfig,
    pub training: TrainingTrace,
    pub provenance: Provenance,
}

impl SelectorFile {
    pub fn from_params(p: &SelectorParams) -> Self {
        let layers = p
            .layers
            .iter()
            .map(|l| LayerFile {
                weight: Tensor::encode(l.weight.shape().to_vec(), l.weight.iter().copied()),
                bias: Tensor::encode(vec![l.bias.len()], l.bias.iter().copied()),
            })
            .collect();
        Self {
            input_dim: p.input_dim,
            hidden_dims: p.hidden_dims.clone(),
            layers,
            tau: p.tau,
        }
    }

    pub fn to_params(&self) -> Result<SelectorParams> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let [out, inp] = l.weight.shape[..] else {
                return Err(Error::Format(format!("layer {i}: weight shape must be [out, in]")));
            };
            let weight = Array2::from_shape_vec((out, inp), l.weight.decode(&format!("layer {i} weight"))?)
                .map_err(|e| Error::Shape(e.to_string()))?;
            if l.bias.shape != [out] {
                return Err(Error::Shape(format!(
                    "layer {i}: bias shape {:?} does not match {out} outputs",
                    l.bias.shape
                )));
            }
            let bias = Array1::from(l.bias.decode(&format!("layer {i} bias"))?);
            layers.push(Dense { weight, bias });
        }
        let p = SelectorParams {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            layers,
            tau: self.tau,
        };
        p.validate()?;
        Ok(p)
    }
}

impl ModelFile {
    pub fn from_model(m: &TrainedModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            recalibrator: m.recalibrator.clone(),
            selector: SelectorFile::from_params(&m.selector),
            train_config: m.config.clone(),
            training: m.trace.clone(),
            provenance: Provenance {
                seed: m.config.seed,
                tool_version: crate::TOOL_VERSION.to_string(),
            },
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.recalibrator.validate()?;
        Ok(TrainedModel {
            selector: self.selector.to_params()?,
            recalibrator: self.recalibrator,
            config: self.train_config,
            trace: self.training,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn save_model(m: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ModelFile::from_model(m).to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_json(&s)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TrainedModel {
        let mut selector = SelectorParams::init(3, &[4], 7).unwrap();
        selector.round_to_f32();
        TrainedModel {
            selector,
            recalibrator: RecalibratorParams::Temperature { log_t: 0.25 },
            config: TrainConfig::default(),
            trace: TrainingTrace {
                initial_loss: 1.0,
                final_loss: 0.5,
                epoch_losses: vec![0.7],
            },
        }
    }

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        let m = model();
        let json = ModelFile::from_model(&m).to_json().unwrap();
        let back = ModelFile::from_json(&json).unwrap().into_model().unwrap();
        assert_eq!(back, m);
        assert_eq!(ModelFile::from_model(&back).to_json().unwrap(), json);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["selector"]["tau"].is_null());
        assert_eq!(v["recalibrator"]["kind"], "temperature");
        assert_eq!(v["selector"]["layers"][0]["weight"]["shape"], serde_json::json!([4, 3]));
        assert_eq!(v["provenance"]["tool_version"], crate::TOOL_VERSION);
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let mut f = ModelFile::from_model(&model());
        f.selector.layers[0].weight.data = STANDARD.encode([0u8; 8]);
        assert!(matches!(f.into_model(), Err(Error::Corruption(_))));
        let mut f = ModelFile::from_model(&model());
        f.format_version = 9;
        assert!(f.into_model().unwrap_err().is_validation());
    }
}
