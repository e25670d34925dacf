use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors. Names are canonical dotted paths such as
/// `seq.layers.0.feb.weight`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Copies all values from `other`, which must have the same layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            *a = b.clone();
        }
        Ok(())
    }
}

/// Uniform(-bound, bound) with bound = sqrt(6 / (fan_in + fan_out)).
pub fn xavier(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = store.tensors[i].data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

const ARCHIVE_MAGIC: &[u8; 8] = b"CFCKPT01";

#[derive(Serialize, Deserialize)]
struct ArchiveEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ArchiveHeader {
    meta: serde_json::Value,
    params: Vec<ArchiveEntry>,
}

/// Writes a single-file archive: magic, u64 header length, JSON header
/// (caller metadata + parameter names/shapes), then every parameter as
/// little-endian `f64` in header order.
pub fn save_archive(path: &Path, meta: serde_json::Value, store: &ParamStore) -> Result<()> {
    let header = ArchiveHeader {
        meta,
        params: store
            .iter()
            .map(|(n, t)| ArchiveEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let hjson = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + hjson.len() + store.n_scalars() * 8);
    buf.extend_from_slice(ARCHIVE_MAGIC);
    buf.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    buf.extend_from_slice(&hjson);
    for (_, t) in store.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_archive(path: &Path) -> Result<(serde_json::Value, ParamStore)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..8] != ARCHIVE_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let hlen = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let body = buf
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: ArchiveHeader = serde_json::from_slice(body)?;
    let mut off = 16 + hlen;
    let mut store = ParamStore::new();
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let bytes = buf
            .get(off..off + n * 8)
            .ok_or_else(|| Error::Checkpoint(format!("truncated data for {}", e.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(e.name, Tensor::new(&e.shape, data));
        off += n * 8;
    }
    if off != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((header.meta, store))
}
