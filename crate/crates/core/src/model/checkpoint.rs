//! Binary checkpoint format:
//!
//! ```text
//! b"CNNX" | version: u32 LE | descriptor length: u32 LE | descriptor JSON
//!         | parameter values: f64 LE, layer order (weights then bias)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CnnModel, Layer, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CNNX";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epoch: Option<usize>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    param_count: usize,
    training: TrainingMetadata,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: CnnModel,
    pub metadata: TrainingMetadata,
}

pub fn encode_checkpoint(model: &CnnModel, metadata: &TrainingMetadata) -> Result<Vec<u8>> {
    let descriptor = Descriptor {
        input_shape: model.input_shape(),
        layers: model.specs(),
        shapes: model.layer_shapes()?,
        param_count: model.param_count(),
        training: metadata.clone(),
    };
    let json = serde_json::to_vec(&descriptor)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * descriptor.param_count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.parameters() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &CnnModel, metadata: &TrainingMetadata, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn take<'b>(bytes: &mut &'b [u8], n: usize, what: &str) -> Result<&'b [u8]> {
    if bytes.len() < n {
        return Err(Error::CorruptCheckpoint(format!(
            "truncated while reading {what}"
        )));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    let raw = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes(raw.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint> {
    if take(&mut bytes, 4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut bytes, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = read_u32(&mut bytes, "descriptor length")? as usize;
    let json = take(&mut bytes, len, "descriptor")?;
    let descriptor: Descriptor = serde_json::from_slice(json)
        .map_err(|e| Error::CorruptCheckpoint(format!("descriptor: {e}")))?;

    let mut values = |shape: &[usize]| -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = take(&mut bytes, 8 * n, "parameters")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    };
    let mut layers = Vec::with_capacity(descriptor.layers.len());
    for spec in &descriptor.layers {
        layers.push(match *spec {
            LayerSpec::Conv2d {
                filters,
                kernel,
                in_channels,
            } => Layer::Conv2d {
                kernels: values(&[filters, kernel, kernel, in_channels])?,
                bias: values(&[filters])?,
            },
            LayerSpec::Dense { units, inputs } => Layer::Dense {
                weights: values(&[units, inputs])?,
                bias: values(&[units])?,
            },
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d => Layer::MaxPool2d,
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Softmax => Layer::Softmax,
        });
    }
    if !bytes.is_empty() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len()
        )));
    }
    let model = CnnModel::from_layers(descriptor.input_shape, layers)
        .map_err(|e| Error::CorruptCheckpoint(format!("inconsistent architecture: {e}")))?;
    if model.param_count() != descriptor.param_count {
        return Err(Error::CorruptCheckpoint(
            "parameter count disagrees with descriptor".into(),
        ));
    }
    Ok(Checkpoint {
        model,
        metadata: descriptor.training,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

impl Checkpoint {
    /// Fails unless the stored layer stack equals `expected`.
    pub fn expect_architecture(
        &self,
        expected: &[LayerSpec],
        input_shape: [usize; 3],
    ) -> Result<()> {
        if self.model.input_shape() != input_shape || self.model.specs() != expected {
            return Err(Error::ArchitectureMismatch(format!(
                "checkpoint holds {:?} over input {:?}",
                self.model.specs(),
                self.model.input_shape()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, Mode};
    use crate::rng::Rng;

    fn small() -> CnnModel {
        Architecture::for_input(8, 12, 0.2)
            .build(&mut Rng::seeded(4))
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let model = small();
        let meta = TrainingMetadata {
            epoch: Some(3),
            metrics: [("val_acc".to_string(), 0.75)].into_iter().collect(),
        };
        let ck = decode_checkpoint(&encode_checkpoint(&model, &meta).unwrap()).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.metadata, meta);
        let x = Tensor::full(&[8, 12, 3], 0.3);
        let a = model.forward(&x, Mode::Inference).unwrap();
        let b = ck.model.forward(&x, Mode::Inference).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let bytes = encode_checkpoint(&small(), &TrainingMetadata::default()).unwrap();
        for cut in [2, 10, bytes.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut bumped = bytes.clone();
        bumped[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bumped),
            Err(Error::CorruptCheckpoint(_))
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(
            decode_checkpoint(&extra),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn architecture_mismatch_is_explicit() {
        let ck =
            decode_checkpoint(&encode_checkpoint(&small(), &TrainingMetadata::default()).unwrap())
                .unwrap();
        let other = Architecture::for_input(8, 16, 0.2)
            .build(&mut Rng::seeded(0))
            .unwrap();
        assert!(matches!(
            ck.expect_architecture(&other.specs(), other.input_shape()),
            Err(Error::ArchitectureMismatch(_))
        ));
    }
}
