//! Checkpoint file format.
//!
//! ```text
//! magic     6 bytes   "MTFER\x01"
//! hlen      u32 LE    length of the header in bytes
//! header    hlen      UTF-8 JSON: format_version, model_config,
//!                     class_names, tensors [{name, shape, offset}]
//! payload   ...       parameters as f32 LE, in manifest order
//! ```
//!
//! `offset` is the byte offset of a tensor inside the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::Head;
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"MTFER\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassNames {
    pub emotion: Vec<String>,
    pub gender: Vec<String>,
    pub race: Vec<String>,
    pub age: Vec<String>,
}

impl ClassNames {
    pub fn canonical() -> Self {
        let names = |h: Head| h.class_names().iter().map(|s| s.to_string()).collect();
        ClassNames {
            emotion: names(Head::Emotion),
            gender: names(Head::Gender),
            race: names(Head::Race),
            age: names(Head::Age),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub class_names: ClassNames,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let params = model.parameters();
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, t) in &params {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.len() as u64;
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        model_config: model.config().clone(),
        class_names: ClassNames::canonical(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &params {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 4 {
        return Err(Error::Corruption("truncated before header length".into()));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(Error::Corruption(format!(
            "header claims {hlen} bytes, only {} present",
            rest.len()
        )));
    }
    let (header_bytes, payload) = rest.split_at(hlen);

    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let probe: VersionProbe = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Corruption(format!("unreadable header: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Version(probe.format_version));
    }
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Corruption(format!("unreadable header: {e}")))?;
    if header.class_names != ClassNames::canonical() {
        return Err(Error::Corruption("class name lists differ from the canonical orderings".into()));
    }

    let mut model = Model::build(&header.model_config)
        .map_err(|e| Error::Corruption(format!("embedded model config is invalid: {e}")))?;
    let expected: Vec<(String, Vec<usize>)> = model
        .parameters()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(Error::Corruption(format!(
            "manifest lists {} tensors, model has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut offset = 0u64;
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape || entry.offset != offset {
            return Err(Error::Corruption(format!(
                "manifest entry {} {:?} @{} does not match expected {name} {shape:?} @{offset}",
                entry.name, entry.shape, entry.offset
            )));
        }
        offset += 4 * shape.iter().product::<usize>() as u64;
    }
    if payload.len() as u64 != offset {
        return Err(Error::Corruption(format!(
            "payload has {} bytes, manifest needs {offset}",
            payload.len()
        )));
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for t in model.parameters_mut() {
        for v in t.data_mut() {
            *v = values.next().expect("length checked");
        }
        if !t.is_finite() {
            return Err(Error::Corruption("payload contains non-finite values".into()));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and rejects it unless it was saved from `expected`
/// (ignoring the initialization seed).
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let mut saved = model.config().clone();
    saved.seed = expected.seed;
    if saved != *expected {
        return Err(Error::ConfigMismatch(
            "architecture in checkpoint differs from the configured model".into(),
        ));
    }
    Ok(model)
}

/// Overwrites a model's parameters with those of a same-architecture model.
pub fn restore_parameters(target: &mut Model, source: &Model) -> Result<()> {
    let src: Vec<Tensor> = source.parameters().into_iter().map(|(_, t)| t.clone()).collect();
    let dst = target.parameters_mut();
    if src.len() != dst.len() {
        return Err(Error::ConfigMismatch("parameter lists differ".into()));
    }
    for (d, s) in dst.into_iter().zip(src) {
        if d.shape() != s.shape() {
            return Err(Error::ConfigMismatch(format!(
                "shape {:?} vs {:?}",
                d.shape(),
                s.shape()
            )));
        }
        *d = s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::INPUT_SHAPE;
    use crate::rng::Rng;

    fn small() -> Model {
        Model::build(&ModelConfig::with_trunk(&[2, 2, 3, 3, 4, 4], 8)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = small();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
        let img = Rng::new(1).uniform(&INPUT_SHAPE, 0.0, 1.0).unwrap();
        let a = m.infer(&img).unwrap();
        let b = back.infer(&img).unwrap();
        for h in Head::ALL {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.get(h)), bits(b.get(h)));
        }
    }

    #[test]
    fn truncated_payload() {
        let bytes = to_bytes(&small());
        let err = from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "{err}");
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = to_bytes(&small());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(from_bytes(b"MTF"), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_version() {
        let bytes = to_bytes(&small());
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        let patched = header.replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert_eq!(patched.len(), header.len());
        let mut out = bytes[..10].to_vec();
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[10 + hlen..]);
        assert!(matches!(from_bytes(&out), Err(Error::Version(7))));
    }

    #[test]
    fn mismatched_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = small();
        save_checkpoint(&m, &path).unwrap();
        assert!(load_checkpoint_for(&path, m.config()).is_ok());
        let other = ModelConfig::with_trunk(&[2, 2, 3, 3, 4, 4], 9);
        assert!(matches!(
            load_checkpoint_for(&path, &other),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
