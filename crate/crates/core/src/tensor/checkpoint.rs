use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors plus free-form string metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_params(ps: &ParamSet, meta: BTreeMap<String, String>) -> Self {
        let tensors = ps.ids().map(|id| (ps.name(id).to_string(), ps.get(id).clone())).collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            meta,
            tensors,
        }
    }

    /// Overwrites every parameter of `ps`; all names and shapes must match.
    pub fn load_into(&self, ps: &mut ParamSet) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.tensors.len() != ps.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                ps.len()
            )));
        }
        for id in ps.ids().collect::<Vec<_>>() {
            let name = ps.name(id).to_string();
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != ps.get(id).shape() || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", t.shape())));
            }
            *ps.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
