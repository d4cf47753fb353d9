use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Named parameter tensors with gradient buffers and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics if `init` does not match `shape` or the
    /// name is already taken.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Vec<f64>) -> ParamId {
        let spec = ParamSpec {
            name: name.to_string(),
            shape: shape.to_vec(),
        };
        assert_eq!(spec.numel(), init.len(), "parameter {name}: init length");
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let n = init.len();
        self.specs.push(spec);
        self.values.push(init);
        self.grads.push(vec![0.0; n]);
        self.m.push(vec![0.0; n]);
        self.v.push(vec![0.0; n]);
        ParamId(self.specs.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn contains(&self, id: ParamId) -> bool {
        id.0 < self.specs.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.specs.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    /// Number of Adam steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Multiplies every gradient by `c` (e.g. to average over a batch).
    pub fn scale_grads(&mut self, c: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Adds another store's gradients into this one. Both stores must share
    /// the same layout.
    pub fn add_grads_from(&mut self, other: &ParamStore) {
        assert_eq!(self.specs, other.specs, "add_grads_from: layout mismatch");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// A copy with the same values and zeroed gradients and optimizer state.
    pub fn fresh_copy(&self) -> ParamStore {
        let mut s = ParamStore::default();
        for (spec, v) in self.specs.iter().zip(&self.values) {
            s.add(&spec.name, &spec.shape, v.clone());
        }
        s
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are then cleared.
    ///
    /// If any gradient is non-finite nothing is modified and an error naming
    /// the parameter is returned.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (spec, g) in self.specs.iter().zip(&self.grads) {
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(AutodiffError::NonFiniteGradient {
                    name: spec.name.clone(),
                    index,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in 0..self.specs.len() {
            let (w, g, m, v) = (
                &mut self.values[p],
                &mut self.grads[p],
                &mut self.m[p],
                &mut self.v[p],
            );
            for k in 0..w.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                w[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
                g[k] = 0.0;
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"DCILCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    params: Vec<ParamSpec>,
    metadata: serde_json::Value,
}

/// Parameter values plus free-form metadata, stored as a small binary file:
/// magic, version, a JSON header with the shape manifest, then the raw
/// little-endian `f64` values in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub specs: Vec<ParamSpec>,
    pub values: Vec<Vec<f64>>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: serde_json::Value) -> Self {
        Self {
            specs: store.specs.clone(),
            values: store.values.clone(),
            metadata,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::to_vec(&Header {
            params: self.specs.clone(),
            metadata: self.metadata.clone(),
        })
        .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.values {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AutodiffError::Checkpoint("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| AutodiffError::Checkpoint(format!("bad header: {e}")))?;
        let mut values = Vec::with_capacity(header.params.len());
        for spec in &header.params {
            let mut v = Vec::with_capacity(spec.numel());
            for _ in 0..spec.numel() {
                r.read_exact(&mut b8)
                    .map_err(|_| AutodiffError::Checkpoint("truncated payload".into()))?;
                v.push(f64::from_le_bytes(b8));
            }
            values.push(v);
        }
        if r.read(&mut b8)? != 0 {
            return Err(AutodiffError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            specs: header.params,
            values,
            metadata: header.metadata,
        })
    }

    /// Copies the stored values into `store`, which must have exactly the same
    /// parameter names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.specs.len() != store.specs.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                self.specs.len(),
                store.specs.len()
            )));
        }
        for (a, b) in self.specs.iter().zip(&store.specs) {
            if a != b {
                return Err(AutodiffError::ParamShape {
                    name: b.name.clone(),
                    expected: b.shape.clone(),
                    got: if a.name == b.name {
                        a.shape.clone()
                    } else {
                        vec![]
                    },
                });
            }
        }
        for (dst, src) in store.values.iter_mut().zip(&self.values) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn into_store(self) -> ParamStore {
        let mut s = ParamStore::default();
        for (spec, v) in self.specs.iter().zip(self.values) {
            s.add(&spec.name, &spec.shape, v);
        }
        s
    }
}
