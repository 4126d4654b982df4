//! Named `f32` tensor containers on disk (safetensors layout) with a string
//! metadata map. Used for encoder checkpoints, classifier heads, optimizer
//! state and grade templates.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::nn::Module;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        TensorEntry {
            name: name.into(),
            shape,
            data,
        }
    }
}

/// Contents of one container file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    pub tensors: Vec<TensorEntry>,
    pub metadata: BTreeMap<String, String>,
}

impl Store {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Metadata value that must be present.
    pub fn require_meta(&self, key: &str, path: &Path) -> Result<&str> {
        self.meta(key).ok_or_else(|| checkpoint_err(path, format!("missing metadata `{key}`")))
    }

    /// Tensor that must be present with the given element count.
    pub fn require(&self, name: &str, len: usize, path: &Path) -> Result<&TensorEntry> {
        let entry = self
            .get(name)
            .ok_or_else(|| checkpoint_err(path, format!("missing tensor `{name}`")))?;
        if entry.data.len() != len {
            return Err(checkpoint_err(
                path,
                format!("tensor `{name}` has {} values, expected {len}", entry.data.len()),
            ));
        }
        Ok(entry)
    }
}

pub(crate) fn checkpoint_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Serializes a store to bytes. Tensor names are sorted by the format.
pub fn encode_store(store: &Store) -> Result<Vec<u8>> {
    let bytes: Vec<Vec<u8>> = store
        .tensors
        .iter()
        .map(|t| t.data.iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let views = store
        .tensors
        .iter()
        .zip(&bytes)
        .map(|(t, b)| {
            TensorView::new(Dtype::F32, t.shape.clone(), b)
                .map(|v| (t.name.clone(), v))
                .map_err(|e| Error::Shape(format!("tensor `{}`: {e}", t.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata: HashMap<String, String> = store.metadata.clone().into_iter().collect();
    let bytes = safetensors::serialize(views, Some(metadata)).map_err(|e| Error::Data(format!("serialize tensors: {e}")))?;
    canonical_header(&bytes)
}

/// Rewrites the JSON header with sorted keys so equal stores encode to equal
/// bytes; the serializer emits metadata in hash-map order.
fn canonical_header(bytes: &[u8]) -> Result<Vec<u8>> {
    let err = |m: String| Error::Data(format!("serialize tensors: {m}"));
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).map_err(|e| err(e.to_string()))?;
    let mut text = serde_json::to_vec(&header).map_err(|e| err(e.to_string()))?;
    text.resize(text.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(8 + text.len() + bytes.len() - 8 - len);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&bytes[8 + len..]);
    Ok(out)
}

/// Parses a store, keeping `f32` tensors accepted by `keep`. A kept tensor of
/// another dtype is an error.
pub fn decode_store(bytes: &[u8], path: &Path, keep: impl Fn(&str) -> bool) -> Result<Store> {
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| checkpoint_err(path, e.to_string()))?;
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| checkpoint_err(path, e.to_string()))?;
    let metadata = meta.metadata().clone().unwrap_or_default().into_iter().collect();
    let mut out = Vec::new();
    let mut names: Vec<&str> = tensors.names();
    names.sort_unstable();
    for name in names {
        if !keep(name) {
            continue;
        }
        let view = tensors.tensor(name).map_err(|e| checkpoint_err(path, e.to_string()))?;
        if view.dtype() != Dtype::F32 {
            return Err(checkpoint_err(
                path,
                format!("tensor `{name}` has dtype {:?}, expected F32", view.dtype()),
            ));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(TensorEntry::new(name, view.shape().to_vec(), data));
    }
    Ok(Store { tensors: out, metadata })
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_store(path: &Path, store: &Store) -> Result<()> {
    let bytes = encode_store(store)?;
    write_atomic(path, &bytes)
}

pub fn read_store(path: &Path) -> Result<Store> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes, path, |_| true)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Every parameter and buffer of a module, in visiting order.
pub fn module_entries(module: &dyn Module, prefix: &str) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    module.visit(prefix, &mut |name, p| {
        out.push(TensorEntry::new(name, p.shape.clone(), p.value.clone()))
    });
    out
}

/// Overwrites every parameter and buffer of a module from a store. Missing
/// names and shape mismatches are errors; extra tensors are ignored.
pub fn assign_module(module: &mut dyn Module, prefix: &str, store: &Store, path: &Path) -> Result<()> {
    let mut failure = None;
    module.visit_mut(prefix, &mut |name, p| {
        if failure.is_some() {
            return;
        }
        match store.get(name) {
            None => failure = Some(format!("missing tensor `{name}`")),
            Some(t) if t.shape != p.shape => {
                failure = Some(format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape, p.shape))
            }
            Some(t) => p.value.copy_from_slice(&t.data),
        }
    });
    match failure {
        Some(reason) => Err(checkpoint_err(path, reason)),
        None => Ok(()),
    }
}
