//! Named learnable parameters, gradient accumulation from a tape, and the
//! JSON checkpoint format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    pub grad_set: bool,
}

/// Parameter collection with stable insertion order; names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<usize> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Config(format!(
                "parameter `{name}`: shape {:?} does not match {} values",
                shape,
                values.len()
            )));
        }
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape,
            grad: vec![0.0; values.len()],
            values,
            grad_set: false,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Register every parameter as a leaf on `tape`; returns vars aligned
    /// with parameter indices.
    pub fn register(&self, tape: &mut Tape, needs_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                tape.leaf(p.shape.clone(), p.values.clone(), needs_grad)
                    .expect("parameter shapes are validated at insertion")
            })
            .collect()
    }

    /// Add tape gradients into parameter gradients (accumulating).
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            for (g, &d) in p.grad.iter_mut().zip(tape.grad(v)) {
                *g += d;
            }
            p.grad_set = true;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
            p.grad_set = false;
        }
    }

    pub(crate) fn values_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn set_value(&mut self, idx: usize, coord: usize, value: f64) {
        self.params[idx].values[coord] = value;
    }

    /// Snapshot of all values, for best-weights restore.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.values.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f64>]) {
        for (p, s) in self.params.iter_mut().zip(snap) {
            p.values.copy_from_slice(s);
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| CheckpointParam {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.values.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&doc)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Load checkpoint values into an existing store; names and shapes must
    /// match exactly.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let doc: CheckpointDoc = serde_json::from_str(&text)?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format_version {}",
                doc.format_version
            )));
        }
        if doc.params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model expects {}",
                doc.params.len(),
                self.params.len()
            )));
        }
        for cp in doc.params {
            let idx = self
                .index_of(&cp.name)
                .ok_or_else(|| Error::Config(format!("unknown parameter `{}`", cp.name)))?;
            let p = &mut self.params[idx];
            if p.shape != cp.shape {
                return Err(Error::Config(format!(
                    "parameter `{}`: checkpoint shape {:?} vs model shape {:?}",
                    cp.name, cp.shape, p.shape
                )));
            }
            p.values = cp.values;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    params: Vec<CheckpointParam>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}
