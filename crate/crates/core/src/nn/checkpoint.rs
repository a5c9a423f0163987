use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

/// Single-file checkpoint: named arrays plus string metadata, stored as
/// safetensors.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub arch: String,
    pub step: u64,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "hrssr-ckpt-v1";

    pub fn new(arch: impl Into<String>, step: u64) -> Self {
        Self {
            arch: arch.into(),
            step,
            ..Default::default()
        }
    }

    /// Adds every tensor of `values` under `prefix.`.
    pub fn insert_all(&mut self, prefix: &str, values: BTreeMap<String, Tensor>) {
        for (k, v) in values {
            self.tensors.insert(format!("{prefix}.{k}"), v);
        }
    }

    /// Entries under `prefix.` with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let head = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&head).map(|rest| (rest.to_string(), v.clone())))
            .collect()
    }

    pub fn has_section(&self, prefix: &str) -> bool {
        let head = format!("{prefix}.");
        self.tensors.keys().any(|k| k.starts_with(&head))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut meta: HashMap<String, String> = self.meta.clone().into_iter().collect();
        meta.insert("format".into(), Self::FORMAT.into());
        meta.insert("arch".into(), self.arch.clone());
        meta.insert("step".into(), self.step.to_string());
        let contiguous: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.contiguous()?)))
            .collect::<Result<_>>()?;
        safetensors::serialize_to_file(contiguous, Some(meta), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut meta: BTreeMap<String, String> = header
            .metadata()
            .clone()
            .unwrap_or_default()
            .into_iter()
            .collect();
        if meta.remove("format").as_deref() != Some(Self::FORMAT) {
            return Err(Error::Checkpoint(format!(
                "{}: not a {} checkpoint",
                path.display(),
                Self::FORMAT
            )));
        }
        let arch = meta.remove("arch").unwrap_or_default();
        let step = meta
            .remove("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing step counter".into()))?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?
            .into_iter()
            .collect();
        Ok(Self {
            arch,
            step,
            meta,
            tensors,
        })
    }
}
