//! Binary checkpoint: `"DBNC"`, a little-endian `u32` version, a `u64`
//! metadata length, UTF-8 JSON metadata, then little-endian `f32` data in
//! manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointSection as Section, Error, Result};
use crate::loss::LossKind;
use crate::model::{init_model, Model, ModelConfig};
use crate::nn::{AdamConfig, AdamState, Real};

pub const MAGIC: &[u8; 4] = b"DBNC";
pub const VERSION: u32 = 1;

/// Training progress stored next to the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub loss: LossKind,
    pub adam: Option<AdamState<f32>>,
    /// Free-form run settings, written verbatim.
    pub extra: serde_json::Value,
}

impl TrainState {
    pub fn fresh(loss: LossKind) -> Self {
        TrainState { step: 0, loss, adam: None, extra: serde_json::Value::Null }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data block.
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: ModelConfig,
    step: u64,
    loss: LossKind,
    adam: Option<AdamMeta>,
    #[serde(default)]
    extra: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn collect<T: Real>(model: &Model<T>, state: &TrainState) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
    let to32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<f32>>();
    let mut map = BTreeMap::new();
    for p in model.params.iter() {
        map.insert(format!("param/{}", p.name), (p.value.dims().to_array().to_vec(), to32(p.value.data())));
    }
    for (name, bn) in model.net.bn_names.iter().zip(&model.bn) {
        map.insert(format!("bn/{name}.mean"), (vec![bn.channels()], to32(&bn.mean)));
        map.insert(format!("bn/{name}.var"), (vec![bn.channels()], to32(&bn.var)));
    }
    if let Some(adam) = &state.adam {
        if adam.m.len() != model.params.len() || adam.v.len() != model.params.len() {
            return Err(Error::dim("optimizer state does not match the parameter store"));
        }
        for (i, p) in model.params.iter().enumerate() {
            let shape = p.value.dims().to_array().to_vec();
            map.insert(format!("adam.m/{}", p.name), (shape.clone(), adam.m[i].clone()));
            map.insert(format!("adam.v/{}", p.name), (shape, adam.v[i].clone()));
        }
    }
    Ok(map)
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>, state: &TrainState) -> Result<Vec<u8>> {
    let tensors = collect(model, state)?;
    let mut entries = Vec::with_capacity(tensors.len());
    let mut data = Vec::new();
    for (name, (shape, values)) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset: data.len() as u64,
            len: values.len() as u64,
        });
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = Metadata {
        config: model.cfg().clone(),
        step: state.step,
        loss: state.loss,
        adam: state.adam.as_ref().map(|a| AdamMeta {
            lr: a.config.lr,
            beta1: a.config.beta1,
            beta2: a.config.beta2,
            eps: a.config.eps,
            step: a.step,
        }),
        extra: state.extra.clone(),
        tensors: entries,
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::checkpoint(Section::Metadata, e.to_string()))?;
    let mut out = Vec::with_capacity(16 + meta.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&data);
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, section: Section) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::checkpoint(section, format!("truncated: need {n} bytes, {} left", bytes.len())));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Decodes a whole checkpoint; nothing is returned unless every section
/// validates.
pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<(Model<f32>, TrainState)> {
    let magic = take(&mut bytes, 4, Section::Magic)?;
    if magic != MAGIC {
        return Err(Error::checkpoint(Section::Magic, format!("expected {MAGIC:?}, found {magic:?}")));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, Section::Version)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::checkpoint(Section::Version, format!("unsupported version {version}, expected {VERSION}")));
    }
    let meta_len = u64::from_le_bytes(take(&mut bytes, 8, Section::Metadata)?.try_into().expect("8 bytes"));
    let meta_len = usize::try_from(meta_len).map_err(|_| Error::checkpoint(Section::Metadata, "length overflow"))?;
    let meta: Metadata = serde_json::from_slice(take(&mut bytes, meta_len, Section::Metadata)?)
        .map_err(|e| Error::checkpoint(Section::Metadata, e.to_string()))?;
    meta.config.validate().map_err(|e| Error::checkpoint(Section::Metadata, e.to_string()))?;

    let mut expected = 0u64;
    for w in meta.tensors.windows(2) {
        if w[0].name >= w[1].name {
            return Err(Error::checkpoint(Section::Manifest, format!("entries not sorted at {}", w[1].name)));
        }
    }
    for e in &meta.tensors {
        if e.offset != expected {
            return Err(Error::checkpoint(Section::Manifest, format!("{} starts at {}, expected {expected}", e.name, e.offset)));
        }
        if e.shape.iter().product::<usize>() as u64 != e.len {
            return Err(Error::checkpoint(Section::Manifest, format!("{} shape {:?} holds {} values", e.name, e.shape, e.len)));
        }
        expected += 4 * e.len;
    }
    if bytes.len() as u64 != expected {
        return Err(Error::checkpoint(
            Section::Data,
            format!("data block has {} bytes, manifest describes {expected}", bytes.len()),
        ));
    }
    let mut tensors: BTreeMap<&str, (&TensorEntry, Vec<f32>)> = BTreeMap::new();
    for e in &meta.tensors {
        let raw = &bytes[e.offset as usize..(e.offset + 4 * e.len) as usize];
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.insert(e.name.as_str(), (e, values));
    }

    let mut model: Model<f32> = init_model(&meta.config)?;
    let mut fetch = |name: String, shape: &[usize]| -> Result<Vec<f32>> {
        let (e, v) = tensors.remove(name.as_str()).ok_or_else(|| Error::checkpoint(Section::Manifest, format!("missing {name}")))?;
        if e.shape != shape {
            return Err(Error::checkpoint(Section::Manifest, format!("{name}: shape {:?}, expected {shape:?}", e.shape)));
        }
        Ok(v)
    };
    for p in model.params.iter_mut() {
        let shape = p.value.dims().to_array();
        let v = fetch(format!("param/{}", p.name), &shape)?;
        p.value.data_mut().copy_from_slice(&v);
    }
    let names = model.net.bn_names.clone();
    for (name, bn) in names.iter().zip(model.bn.iter_mut()) {
        let c = [bn.channels()];
        bn.mean = fetch(format!("bn/{name}.mean"), &c)?;
        bn.var = fetch(format!("bn/{name}.var"), &c)?;
    }
    let adam = match meta.adam {
        None => None,
        Some(a) => {
            let mut m = Vec::with_capacity(model.params.len());
            let mut v = Vec::with_capacity(model.params.len());
            for p in model.params.iter() {
                let shape = p.value.dims().to_array();
                m.push(fetch(format!("adam.m/{}", p.name), &shape)?);
                v.push(fetch(format!("adam.v/{}", p.name), &shape)?);
            }
            let config = AdamConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps };
            Some(AdamState { config, step: a.step, m, v })
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(Error::checkpoint(Section::Manifest, format!("unexpected tensor {name}")));
    }
    Ok((model, TrainState { step: meta.step, loss: meta.loss, adam, extra: meta.extra }))
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, model: &Model<T>, state: &TrainState) -> Result<()> {
    let bytes = encode_checkpoint(model, state)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, TrainState)> {
    decode_checkpoint(&std::fs::read(path)?)
}
