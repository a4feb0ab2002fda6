use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named, ordered trainable parameters with matching gradient buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        let grad = Tensor::zeros(value.shape());
        if let Some(i) = self.index_of(&name) {
            self.values[i] = value;
            self.grads[i] = grad;
        } else {
            self.names.push(name);
            self.values.push(value);
            self.grads.push(grad);
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| tape.leaf(v.clone(), true))
            .collect()
    }

    /// Like [`bind`](Self::bind) but with selected parameters frozen.
    pub fn bind_with(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Vec<Var> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| tape.leaf(v.clone(), trainable(n)))
            .collect()
    }

    /// Adds `scale ×` the tape gradients of `vars` (as returned by `bind`)
    /// into the stored gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var], scale: f64) {
        for (buf, v) in self.grads.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(*v) {
                for (b, x) in buf.data_mut().iter_mut().zip(g.data()) {
                    *b += scale * x;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub(crate) fn split_mut(&mut self) -> (&[String], &mut [Tensor], &[Tensor]) {
        (&self.names, &mut self.values, &self.grads)
    }
}

/// Parameters plus string metadata, persisted as a key/value manifest and a
/// raw little-endian `f64` blob.
///
/// Manifest layout (one `key = value` per line, UTF-8):
///
/// ```text
/// format = simper-checkpoint/1
/// blob = model.bin
/// meta.<key> = <value>
/// param.<i>.name = layer0.weight
/// param.<i>.shape = 768x24
/// param.<i>.offset = 0          # byte offset into the blob
/// param.<i>.len = 18432         # element count
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: BTreeMap<String, String>,
}

const CHECKPOINT_FORMAT: &str = "simper-checkpoint/1";

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            params,
            meta: BTreeMap::new(),
        }
    }

    pub fn blob_path(manifest: &Path) -> PathBuf {
        manifest.with_extension("bin")
    }

    /// Serializes to `(manifest text, blob bytes)`.
    pub fn encode(&self, blob_name: &str) -> (String, Vec<u8>) {
        let mut text = format!("format = {CHECKPOINT_FORMAT}\nblob = {blob_name}\n");
        for (k, v) in &self.meta {
            text.push_str(&format!("meta.{k} = {v}\n"));
        }
        let mut blob = Vec::with_capacity(self.params.num_scalars() * 8);
        for (i, (name, value)) in self.params.names.iter().zip(&self.params.values).enumerate() {
            let shape = if value.shape().is_empty() {
                "scalar".to_string()
            } else {
                value
                    .shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            };
            text.push_str(&format!(
                "param.{i}.name = {name}\nparam.{i}.shape = {shape}\nparam.{i}.offset = {}\nparam.{i}.len = {}\n",
                blob.len(),
                value.len()
            ));
            for v in value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        (text, blob)
    }

    pub fn decode(text: &str, blob: &[u8]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| {
                Error::Data(format!("checkpoint manifest line {}: expected `key = value`", lineno + 1))
            })?;
            entries.insert(k.to_string(), v.to_string());
        }
        match entries.get("format") {
            Some(f) if f == CHECKPOINT_FORMAT => {}
            other => return Err(Error::Data(format!("unsupported checkpoint format {other:?}"))),
        }
        let mut meta = BTreeMap::new();
        for (k, v) in &entries {
            if let Some(key) = k.strip_prefix("meta.") {
                meta.insert(key.to_string(), v.clone());
            }
        }
        let mut params = ParamStore::new();
        for i in 0.. {
            let Some(name) = entries.get(&format!("param.{i}.name")) else {
                break;
            };
            let field = |f: &str| -> Result<&String> {
                entries
                    .get(&format!("param.{i}.{f}"))
                    .ok_or_else(|| Error::Data(format!("checkpoint param {i} lacks `{f}`")))
            };
            let shape: Vec<usize> = match field("shape")?.as_str() {
                "scalar" => Vec::new(),
                s => s
                    .split('x')
                    .map(|d| d.parse().map_err(|_| Error::Data(format!("bad shape `{s}`"))))
                    .collect::<Result<_>>()?,
            };
            let offset: usize = field("offset")?
                .parse()
                .map_err(|_| Error::Data("bad offset".into()))?;
            let len: usize = field("len")?
                .parse()
                .map_err(|_| Error::Data("bad len".into()))?;
            let end = offset + len * 8;
            if end > blob.len() {
                return Err(Error::Data(format!(
                    "param `{name}` spans bytes {offset}..{end} but the blob has {}",
                    blob.len()
                )));
            }
            let data = blob[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(Self { params, meta })
    }

    pub fn save(&self, manifest: &Path) -> Result<()> {
        let blob_path = Self::blob_path(manifest);
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", manifest.display())))?
            .to_string();
        let (text, blob) = self.encode(&blob_name);
        if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(manifest, text).map_err(|e| Error::io(manifest, e))?;
        fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
        Ok(())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let blob_name = text
            .lines()
            .find_map(|l| l.strip_prefix("blob = "))
            .ok_or_else(|| Error::Data(format!("{} names no blob", manifest.display())))?;
        let blob_path = manifest
            .parent()
            .map(|d| d.join(blob_name))
            .unwrap_or_else(|| PathBuf::from(blob_name));
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::decode(&text, &blob)
    }
}
