//! Labeled feature matrices and their binary container.
//!
//! Layout (little-endian): `b"APDS"`, `u32` version, `u32`+bytes JSON tag,
//! `u64` n, `u32` rank, `u64` per sample dim, `f32` features, `u8` labels.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"APDS";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Activations,
    Image,
    QValues,
    AutoencoderCode,
}

impl InputSource {
    pub fn as_str(self) -> &'static str {
        match self {
            InputSource::Activations => "activations",
            InputSource::Image => "image",
            InputSource::QValues => "q_values",
            InputSource::AutoencoderCode => "autoencoder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Penalized,
    NoPenalty,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Penalized, Variant::NoPenalty];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Penalized => "penalized",
            Variant::NoPenalty => "no_penalty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceTag {
    pub input: InputSource,
    pub variant: Variant,
}

/// `n` samples of a fixed shape with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    tag: SourceTag,
    features: Tensor<f32>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    /// `features` has shape `[n, sample dims...]`.
    pub fn new(tag: SourceTag, features: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        if features.shape().len() < 2 {
            return Err(Error::Shape(
                "dataset features need a batch axis and a sample shape".into(),
            ));
        }
        let n = features.batch();
        if n == 0 {
            return Err(Error::Contract("dataset is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{n} samples but {} labels",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        features.ensure_finite("dataset features")?;
        Ok(Self {
            tag,
            features,
            labels,
        })
    }

    pub fn tag(&self) -> SourceTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened feature count per sample.
    pub fn dim(&self) -> usize {
        self.features.sample_len()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.features.row(i)
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (self.len() - pos, pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (neg, pos) = self.class_counts();
        neg > 0 && pos > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Contract("empty subset".into()));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok(Self {
            tag: self.tag,
            features: Tensor::new(shape, data)?,
            labels,
        })
    }

    /// Same features with `labels` replaced.
    pub fn relabeled(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(self.tag, self.features.clone(), labels)
    }

    /// Labels permuted uniformly at random; the null model for leakage checks.
    pub fn label_shuffled<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut labels = self.labels.clone();
        labels.shuffle(rng);
        Self {
            tag: self.tag,
            features: self.features.clone(),
            labels,
        }
    }

    /// Same labels, features replaced (e.g. by a reduction or an encoder).
    pub fn with_features(&self, tag: SourceTag, features: Tensor<f32>) -> Result<Self> {
        Self::new(tag, features, self.labels.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.features.len() * 4 + self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let tag = serde_json::to_vec(&self.tag)?;
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(&tag);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        let dims = self.sample_shape();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in self.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let tag_len = cur.u32()? as usize;
        let tag: SourceTag = serde_json::from_slice(cur.take(tag_len)?)?;
        let n = cur.u64()? as usize;
        let rank = cur.u32()? as usize;
        let mut shape = vec![n];
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let total: usize = shape.iter().product();
        let raw = cur.take(total * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let labels = cur.take(n)?.to_vec();
        if cur.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after dataset".into()));
        }
        Self::new(tag, Tensor::new(shape, data)?, labels)
    }

    /// Inspection export: `label,f0,f1,...` with one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("dataset file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
