//! Checkpoints: a named-tensor archive (`tensors.bin`), a JSON manifest,
//! and the loss history so far (`history.jsonl`).
//!
//! `tensors.bin` layout, little-endian:
//!
//! ```text
//! "FRGT"  u32 version  u32 count
//! per tensor: u32 name_len, name (UTF-8), u8 dtype, u32 rank, u64 dims[rank], data
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_history, write_atomic, write_history, write_json};
use crate::error::{Error, Result};
use crate::model::{shape_table_hash, Generator};
use crate::nn::Module;
use crate::tensor::{DType, Scalar, Tensor};
use crate::train::{Adam, TrainConfig, TrainState};

const TENSOR_MAGIC: &[u8; 4] = b"FRGT";
const TENSOR_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "frgan-checkpoint";

/// One named tensor, values widened to `f64` (exact for `f32` sources).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode_tensors(records: &[TensorRecord], dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let n: usize = r.shape.iter().product();
        if n != r.data.len() {
            return Err(Error::dim("encode_tensors", None, format!("{}: shape {:?} holds {n} values, got {}", r.name, r.shape, r.data.len())));
        }
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(dtype.tag());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &r.data {
            match dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: self.at as u64, detail: detail.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} remain", self.bytes.len() - self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<TensorRecord>> {
    let mut c = Cursor { bytes, at: 0, path };
    if c.take(4, "magic")? != TENSOR_MAGIC {
        c.at = 0;
        return Err(c.err("bad magic, expected \"FRGT\""));
    }
    let version = c.u32("version")?;
    if version != TENSOR_VERSION {
        c.at -= 4;
        return Err(c.err(format!("unsupported archive version {version}")));
    }
    let count = c.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?).map_err(|_| c.err("tensor name is not UTF-8"))?.to_string();
        let tag = c.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| c.err(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = c.u32("rank")? as usize;
        if rank > 8 {
            return Err(c.err(format!("{name}: rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("extent")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| c.err(format!("{name}: extents {shape:?} overflow")))?;
        let raw = c.take(n.checked_mul(dtype.size()).ok_or_else(|| c.err("payload size overflows"))?, "tensor data")?;
        let data = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect(),
        };
        out.push(TensorRecord { name, shape, data });
    }
    if c.at != bytes.len() {
        return Err(c.err(format!("{} trailing bytes", bytes.len() - c.at)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: usize,
    pub adam_g_t: u64,
    pub adam_d_t: u64,
    pub shape_table_hash: String,
    pub train_config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F32 => "f32",
        DType::F64 => "f64",
    }
}

fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn module_records<S: Scalar, M: Module<S>>(prefix: &str, m: &mut M, out: &mut Vec<TensorRecord>) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for p in m.params_mut() {
        shapes.push(p.tensor.shape().to_vec());
        out.push(TensorRecord { name: format!("{prefix}/{}", p.name), shape: p.tensor.shape().to_vec(), data: p.tensor.to_f64_vec() });
    }
    for b in m.buffers_mut() {
        out.push(TensorRecord { name: format!("{prefix}/{}", b.name), shape: vec![b.values.len()], data: to_f64(b.values) });
    }
    shapes
}

fn adam_records<S: Scalar>(prefix: &str, names: &[String], shapes: &[Vec<usize>], a: &Adam<S>, out: &mut Vec<TensorRecord>) {
    for (which, moments) in [("m", &a.m), ("v", &a.v)] {
        for ((name, shape), values) in names.iter().zip(shapes).zip(moments.iter()) {
            out.push(TensorRecord { name: format!("{prefix}/{which}/{name}"), shape: shape.clone(), data: to_f64(values) });
        }
    }
}

fn param_names<S: Scalar, M: Module<S>>(m: &mut M) -> Vec<String> {
    m.params_mut().into_iter().map(|p| p.name).collect()
}

/// Writes `tensors.bin`, `manifest.json`, and `history.jsonl` into `dir`.
pub fn save_checkpoint<S: Scalar>(dir: &Path, state: &mut TrainState<S>, cfg: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    let g_shapes = module_records("generator", &mut state.generator, &mut records);
    let d_shapes = module_records("discriminator", &mut state.discriminator, &mut records);
    let g_names = param_names(&mut state.generator);
    let d_names = param_names(&mut state.discriminator);
    adam_records("adam_g", &g_names, &g_shapes, &state.adam_g, &mut records);
    adam_records("adam_d", &d_names, &d_shapes, &state.adam_d, &mut records);
    write_atomic(&dir.join("tensors.bin"), &encode_tensors(&records, S::DTYPE)?)?;
    write_history(&dir.join("history.jsonl"), &state.history)?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        dtype: dtype_name(S::DTYPE).into(),
        seed: cfg.seed,
        step: state.step,
        epoch: state.epoch,
        adam_g_t: state.adam_g.t,
        adam_d_t: state.adam_d.t,
        shape_table_hash: shape_table_hash(&cfg.generator.shape_table()),
        train_config: *cfg,
        tensors: records.iter().map(|r| TensorEntry { name: r.name.clone(), shape: r.shape.clone() }).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn read_manifest(dir: &Path) -> Result<(CheckpointManifest, TrainConfig)> {
    let path = dir.join("manifest.json");
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(&path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format { path, offset: 0, detail: format!("format {:?} is not {CHECKPOINT_FORMAT:?}", manifest.format) });
    }
    let mut cfg = manifest.train_config;
    cfg.seed = manifest.seed;
    let hash = shape_table_hash(&cfg.generator.shape_table());
    if hash != manifest.shape_table_hash {
        return Err(Error::Format { path, offset: 0, detail: format!("shape table hash {} does not match the recorded {}", hash, manifest.shape_table_hash) });
    }
    Ok((manifest, cfg))
}

struct Records {
    path: std::path::PathBuf,
    map: std::collections::HashMap<String, TensorRecord>,
}

impl Records {
    fn take<S: Scalar>(&mut self, name: &str, shape: &[usize]) -> Result<Vec<S>> {
        let r = self.map.remove(name).ok_or_else(|| Error::Format { path: self.path.clone(), offset: 0, detail: format!("missing tensor {name}") })?;
        if r.shape != shape {
            return Err(Error::Format { path: self.path.clone(), offset: 0, detail: format!("{name}: shape {:?}, model expects {shape:?}", r.shape) });
        }
        Ok(r.data.iter().map(|&v| S::of(v)).collect())
    }

    fn fill_module<S: Scalar, M: Module<S>>(&mut self, prefix: &str, m: &mut M) -> Result<()> {
        for p in m.params_mut() {
            let shape = p.tensor.shape().to_vec();
            let values = self.take(&format!("{prefix}/{}", p.name), &shape)?;
            *p.tensor = Tensor::from_vec(values, &shape)?.requires_grad();
        }
        for b in m.buffers_mut() {
            let n = b.values.len();
            *b.values = self.take(&format!("{prefix}/{}", b.name), &[n])?;
        }
        Ok(())
    }

    fn fill_adam<S: Scalar, M: Module<S>>(&mut self, prefix: &str, m: &mut M, a: &mut Adam<S>) -> Result<()> {
        let params: Vec<(String, Vec<usize>)> = m.params_mut().into_iter().map(|p| (p.name, p.tensor.shape().to_vec())).collect();
        for (k, (name, shape)) in params.iter().enumerate() {
            a.m[k] = self.take(&format!("{prefix}/m/{name}"), shape)?;
            a.v[k] = self.take(&format!("{prefix}/v/{name}"), shape)?;
        }
        Ok(())
    }
}

fn read_records(dir: &Path) -> Result<Records> {
    let path = dir.join("tensors.bin");
    let recs = decode_tensors(&std::fs::read(&path)?, &path)?;
    let mut map = std::collections::HashMap::with_capacity(recs.len());
    for r in recs {
        let name = r.name.clone();
        if map.insert(name.clone(), r).is_some() {
            return Err(Error::Format { path, offset: 0, detail: format!("duplicate tensor {name}") });
        }
    }
    Ok(Records { path, map })
}

/// Restores the full training state saved by [`save_checkpoint`].
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(TrainState<S>, TrainConfig)> {
    let (manifest, cfg) = read_manifest(dir)?;
    let mut recs = read_records(dir)?;
    let mut state = TrainState::<S>::new(&cfg)?;
    recs.fill_module("generator", &mut state.generator)?;
    recs.fill_module("discriminator", &mut state.discriminator)?;
    recs.fill_adam("adam_g", &mut state.generator, &mut state.adam_g)?;
    recs.fill_adam("adam_d", &mut state.discriminator, &mut state.adam_d)?;
    if let Some(extra) = recs.map.keys().min() {
        return Err(Error::Format { path: recs.path, offset: 0, detail: format!("unexpected tensor {extra}") });
    }
    state.step = manifest.step;
    state.epoch = manifest.epoch;
    state.adam_g.t = manifest.adam_g_t;
    state.adam_d.t = manifest.adam_d_t;
    state.history = read_history(&dir.join("history.jsonl"))?;
    Ok((state, cfg))
}

/// Loads only the generator weights, for synthesis.
pub fn load_generator<S: Scalar>(dir: &Path) -> Result<Generator<S>> {
    let (_, cfg) = read_manifest(dir)?;
    let mut recs = read_records(dir)?;
    let mut g = Generator::new(cfg.generator, cfg.generator_seed())?;
    recs.fill_module("generator", &mut g)?;
    Ok(g)
}
