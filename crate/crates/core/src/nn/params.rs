use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named parameter with a shared trainable flag.
///
/// Frozen parameters hand out detached tensors, so no gradient is ever
/// recorded for them.
#[derive(Clone)]
pub struct Param {
    name: Arc<str>,
    var: Var,
    trainable: Arc<AtomicBool>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn tensor(&self) -> Tensor {
        if self.is_trainable() {
            self.var.as_tensor().clone()
        } else {
            self.var.as_tensor().detach()
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable.load(Ordering::Relaxed)
    }

    pub fn set_trainable(&self, on: bool) {
        self.trainable.store(on, Ordering::Relaxed)
    }

    pub fn numel(&self) -> usize {
        self.var.as_tensor().elem_count()
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// `U(-b, b)` with `b = gain·sqrt(3 / fan_in)`.
    Uniform { fan_in: usize, gain: f64 },
    Normal { std: f64 },
    Const(f64),
}

impl Init {
    pub fn kaiming(fan_in: usize) -> Self {
        Init::Uniform { fan_in, gain: 1.0 }
    }
}

struct Inner {
    dtype: DType,
    params: Mutex<BTreeMap<String, Param>>,
    rng: Mutex<ChaCha8Rng>,
}

/// Ordered registry of all parameters of one model.
#[derive(Clone)]
pub struct ParamStore {
    inner: Arc<Inner>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            inner: Arc::new(Inner {
                dtype,
                params: Mutex::new(BTreeMap::new()),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            }),
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.dtype
    }

    pub fn root(&self) -> ParamBuilder {
        ParamBuilder {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Result<Param> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = {
            let mut rng = self.inner.rng.lock().expect("param rng poisoned");
            match init {
                Init::Uniform { fan_in, gain } => {
                    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                }
                Init::Normal { std } => {
                    let d = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
                    (0..n).map(|_| d.sample(&mut *rng)).collect()
                }
                Init::Const(c) => vec![c; n],
            }
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype())?;
        let p = Param {
            name: Arc::from(name.as_str()),
            var: Var::from_tensor(&t)?,
            trainable: Arc::new(AtomicBool::new(true)),
        };
        let mut params = self.inner.params.lock().expect("param map poisoned");
        if params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        params.insert(name, p.clone());
        Ok(p)
    }

    pub fn params(&self) -> Vec<Param> {
        self.inner
            .params
            .lock()
            .expect("param map poisoned")
            .values()
            .cloned()
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Param> {
        self.inner.params.lock().expect("param map poisoned").get(name).cloned()
    }

    pub fn trainable(&self) -> Vec<Param> {
        self.params().into_iter().filter(Param::is_trainable).collect()
    }

    pub fn set_all_trainable(&self, on: bool) {
        for p in self.params() {
            p.set_trainable(on);
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(Param::numel).sum()
    }

    /// Current values keyed by name. The tensors own their storage:
    /// `Var::set` writes in place, so a shared buffer would follow later
    /// updates.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.params()
            .into_iter()
            .map(|p| {
                let owned = p.var().as_tensor().copy().expect("copying a CPU tensor");
                (p.name().to_string(), owned.detach())
            })
            .collect()
    }

    /// Overwrites values by name; every parameter must be present with the
    /// same shape. Extra entries are ignored.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for p in self.params() {
            let v = values
                .get(p.name())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name())))?;
            if v.dims() != p.var().as_tensor().dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}`: shape {:?} vs {:?}",
                    p.name(),
                    v.dims(),
                    p.var().as_tensor().dims()
                )));
            }
            p.var().set(&v.to_dtype(self.dtype())?)?;
        }
        Ok(())
    }

    /// Copies values from another store with the same layout.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        self.load(&other.snapshot())
    }

    /// SHA-256 over names and raw parameter bytes, in name order.
    pub fn hash(&self) -> String {
        hash_tensors(self.params().iter().map(|p| (p.name().to_string(), p.var().as_tensor().clone())))
    }

    /// Per-parameter hashes.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.params()
            .iter()
            .map(|p| {
                (
                    p.name().to_string(),
                    hash_tensors(std::iter::once((p.name().to_string(), p.var().as_tensor().clone()))),
                )
            })
            .collect()
    }
}

pub(crate) fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    let flat = t.flatten_all().expect("flatten");
    match t.dtype() {
        DType::F64 => flat
            .to_vec1::<f64>()
            .expect("f64 data")
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
        _ => flat
            .to_dtype(DType::F32)
            .and_then(|t| t.to_vec1::<f32>())
            .expect("f32 data")
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    }
}

fn hash_tensors(items: impl Iterator<Item = (String, Tensor)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in items {
        h.update(name.as_bytes());
        h.update(tensor_bytes(&t));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hierarchical name scope used while building a model.
#[derive(Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    prefix: String,
}

impl ParamBuilder {
    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Param> {
        self.store.create(self.pp(name).prefix, shape, init)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_does_not_follow_updates() {
        let s = ParamStore::new(DType::F32, 0);
        let p = s.root().param("w", &[3], Init::Const(1.0)).unwrap();
        let snap = s.snapshot();
        p.var().set(&Tensor::new(&[5.0f32, 5.0, 5.0], &candle_core::Device::Cpu).unwrap()).unwrap();
        assert_eq!(snap["w"].to_vec1::<f32>().unwrap(), vec![1.0; 3]);
        s.load(&snap).unwrap();
        assert_eq!(p.var().as_tensor().to_vec1::<f32>().unwrap(), vec![1.0; 3]);
        s.load(&s.snapshot()).unwrap();
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let build = |seed| {
            let s = ParamStore::new(DType::F32, seed);
            s.root().pp("a").param("w", &[4, 3], Init::kaiming(3)).unwrap();
            s.root().param("b", &[2], Init::Const(1.0)).unwrap();
            s
        };
        assert_eq!(build(1).hash(), build(1).hash());
        assert_ne!(build(1).hash(), build(2).hash());
        let s = build(1);
        assert!(s.get("a.w").is_some());
        assert_eq!(s.num_params(), 14);
    }

    #[test]
    fn frozen_params_are_detached() {
        let s = ParamStore::new(DType::F64, 0);
        let p = s.root().param("w", &[3], Init::Const(2.0)).unwrap();
        let loss = p.tensor().sqr().unwrap().sum_all().unwrap();
        assert!(loss.backward().unwrap().get(p.var().as_tensor()).is_some());
        p.set_trainable(false);
        let loss = p.tensor().sqr().unwrap().sum_all().unwrap();
        assert!(loss.backward().unwrap().get(p.var().as_tensor()).is_none());
        assert!(s.trainable().is_empty());
    }

    #[test]
    fn duplicate_names_rejected() {
        let s = ParamStore::new(DType::F32, 0);
        s.root().param("w", &[1], Init::Const(0.0)).unwrap();
        assert!(s.root().param("w", &[1], Init::Const(0.0)).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let a = ParamStore::new(DType::F32, 0);
        a.root().param("w", &[2, 2], Init::kaiming(2)).unwrap();
        let b = ParamStore::new(DType::F32, 9);
        b.root().param("w", &[2, 2], Init::kaiming(2)).unwrap();
        b.copy_from(&a).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ParamStore::new(DType::F32, 0);
        c.root().param("w", &[4], Init::kaiming(2)).unwrap();
        assert!(c.copy_from(&a).is_err());
    }
}
