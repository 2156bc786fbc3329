//! Classifier outputs (embeddings, logits, labels) and the `.selc` container.
//!
//! Layout of a `.selc` file, all integers little-endian:
//!
//! ```text
//! "SELC" | u32 version | u64 header_len | header_len bytes of JSON
//! embeddings: n * embed_dim f32, row-major
//! logits:     n * num_classes f32, row-major
//! labels:     n u32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, argmax, softmax};

pub const MAGIC: &[u8; 4] = b"SELC";
pub const VERSION: u32 = 1;
pub const SECTIONS: [&str; 3] = ["embeddings", "logits", "labels"];

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    name: String,
    embeddings: Array2<f32>,
    logits: Array2<f32>,
    labels: Vec<u32>,
}

/// Softmax outputs and top-label statistics derived from the logits.
#[derive(Debug, Clone)]
pub struct DerivedOutputs {
    pub probs: Array2<f64>,
    pub top_conf: Vec<f64>,
    pub pred: Vec<usize>,
    pub correct: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    n: u64,
    embed_dim: u64,
    num_classes: u64,
    name: String,
    sections: Vec<String>,
}

impl CalibrationDataset {
    pub fn new(
        name: impl Into<String>,
        embeddings: Array2<f32>,
        logits: Array2<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let n = labels.len();
        if embeddings.nrows() != n || logits.nrows() != n {
            return Err(Error::Shape(format!(
                "row counts differ: embeddings {}, logits {}, labels {}",
                embeddings.nrows(),
                logits.nrows(),
                n
            )));
        }
        let k = logits.ncols();
        if k < 2 {
            return Err(Error::Validation(format!(
                "num_classes must be at least 2, got {k}"
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= k) {
            return Err(Error::Validation(format!(
                "label {l} at row {i} is not below num_classes {k}"
            )));
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite logit at row {}, class {}",
                pos / k,
                pos % k
            )));
        }
        Ok(Self {
            name: name.into(),
            embeddings,
            logits,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn embeddings(&self) -> &Array2<f32> {
        &self.embeddings
    }

    pub fn logits(&self) -> &Array2<f32> {
        &self.logits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Embeddings widened to f64.
    pub fn embeddings_f64(&self) -> Array2<f64> {
        self.embeddings.mapv(f64::from)
    }

    pub fn logit_row(&self, i: usize) -> Vec<f64> {
        self.logits.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn derived(&self) -> DerivedOutputs {
        let n = self.n();
        let k = self.num_classes();
        let mut probs = Array2::zeros((n, k));
        let mut top_conf = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        let mut correct = Vec::with_capacity(n);
        for (i, row) in self.logits.axis_iter(Axis(0)).enumerate() {
            let p = softmax(&widen(row));
            let j = argmax(&p);
            top_conf.push(p[j]);
            pred.push(j);
            correct.push(j == self.labels[i] as usize);
            probs.row_mut(i).assign(&ArrayView1::from(&p));
        }
        DerivedOutputs {
            probs,
            top_conf,
            pred,
            correct,
        }
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            embeddings: self.embeddings.select(Axis(0), rows),
            logits: self.logits.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Same rows with logits multiplied by `factor`.
    pub fn with_scaled_logits(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.name.clone(),
            self.embeddings.clone(),
            self.logits.mapv(|v| v * factor),
            self.labels.clone(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            n: self.n() as u64,
            embed_dim: self.embed_dim() as u64,
            num_classes: self.num_classes() as u64,
            name: self.name.clone(),
            sections: SECTIONS.iter().map(|s| s.to_string()).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let payload = 4 * (self.embeddings.len() + self.logits.len() + self.labels.len());
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        // Iteration over a standard-layout Array2 is row-major.
        for v in self.embeddings.iter().chain(self.logits.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[0..4] != MAGIC {
            return Err(Error::Format("missing SELC magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = 16usize
            .checked_add(usize::try_from(header_len).unwrap_or(usize::MAX))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Corruption("header extends past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.sections != SECTIONS {
            return Err(Error::Format(format!(
                "unexpected section list {:?}",
                header.sections
            )));
        }
        let (n, d, k) = (
            header.n as usize,
            header.embed_dim as usize,
            header.num_classes as usize,
        );
        let expected = n
            .checked_mul(d + k + 1)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Corruption("declared dimensions overflow".into()))?;
        let payload = &bytes[header_end..];
        if payload.len() != expected {
            return Err(Error::Corruption(format!(
                "payload is {} bytes, header declares {} (n={n}, embed_dim={d}, num_classes={k})",
                payload.len(),
                expected
            )));
        }
        let mut words = payload
            .chunks_exact(4)
            .map(|c| <[u8; 4]>::try_from(c).unwrap());
        let emb: Vec<f32> = words.by_ref().take(n * d).map(f32::from_le_bytes).collect();
        let logits: Vec<f32> = words.by_ref().take(n * k).map(f32::from_le_bytes).collect();
        let labels: Vec<u32> = words.map(u32::from_le_bytes).collect();
        let embeddings = Array2::from_shape_vec((n, d), emb).expect("length checked");
        let logits = Array2::from_shape_vec((n, k), logits).expect("length checked");
        Self::new(header.name, embeddings, logits, labels)
    }
}

fn widen(row: ArrayView1<'_, f32>) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<CalibrationDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CalibrationDataset::from_bytes(&bytes)
}

pub fn save_dataset(d: &CalibrationDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&d.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Seeded partition of the rows into parts with the given fractions.
pub fn split(d: &CalibrationDataset, fractions: &[f64], seed: u64) -> Result<Vec<CalibrationDataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    let n = d.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut math::rng(seed));

    let mut parts = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (j, f) in fractions.iter().enumerate() {
        cum += f;
        let end = if j + 1 == fractions.len() {
            n
        } else {
            ((n as f64 * cum) + 1e-9).floor().min(n as f64) as usize
        };
        parts.push(d.select_rows(&idx[start..end]));
        start = end;
    }
    Ok(parts)
}

/// Adds i.i.d. N(0, std²) noise to every embedding coordinate.
pub fn add_gaussian_noise(d: &CalibrationDataset, std: f64, seed: u64) -> Result<CalibrationDataset> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Config(format!("noise std must be >= 0, got {std}")));
    }
    let mut out = d.clone();
    if std == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, std).expect("std validated");
    let mut rng = math::rng(seed);
    out.embeddings
        .iter_mut()
        .for_each(|v| *v = (f64::from(*v) + normal.sample(&mut rng)) as f32);
    Ok(out)
}
