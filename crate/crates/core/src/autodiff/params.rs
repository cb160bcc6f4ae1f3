use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable arrays with paired gradients. Iteration is in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub version_tag: String,
    entries: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreDoc {
    version_tag: String,
    entries: Vec<EntryDoc>,
}

impl ParamStore {
    pub fn new(version_tag: impl Into<String>) -> Self {
        ParamStore {
            version_tag: version_tag.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Inserts (or replaces) a parameter, allocating its gradient.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t.with_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            match t.grad.as_mut() {
                Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
                None => t.grad = Some(vec![0.0; t.data.len()]),
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter_map(|t| t.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for t in self.entries.values_mut() {
                if let Some(g) = t.grad.as_mut() {
                    g.iter_mut().for_each(|x| *x *= k);
                }
            }
        }
        norm
    }

    /// All parameter values concatenated in iteration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries.values().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|t| match &t.grad {
                Some(g) => g.clone(),
                None => vec![0.0; t.len()],
            })
            .collect()
    }

    /// Overwrites parameter values from a flat slice in iteration order.
    pub fn set_flat_values(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut off = 0;
        for t in self.entries.values_mut() {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|t| t.all_finite())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let doc = StoreDoc {
            version_tag: self.version_tag.clone(),
            entries: self
                .entries
                .iter()
                .map(|(name, t)| EntryDoc {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("parameter store serializes")
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let doc: StoreDoc =
            serde_json::from_value(v).map_err(|e| Error::json("parameter store", e))?;
        let mut store = ParamStore::new(doc.version_tag);
        for e in doc.entries {
            let n: usize = e.shape.iter().product();
            if n != e.data.len() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?} but {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            if store.entries.contains_key(&e.name) {
                return Err(Error::Config(format!("duplicate parameter {}", e.name)));
            }
            store.insert(e.name, Tensor::new(e.shape, e.data));
        }
        Ok(store)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("parameter store serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::json("parameter store", e))?;
        Self::from_json_value(v)
    }
}
