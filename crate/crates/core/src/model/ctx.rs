use std::collections::HashMap;

use super::{ModelError, Result};
use crate::graph::{Graph, Var};
use crate::nn::{ConvSpec, ParamStore};
use crate::tensor::Tensor;

/// Binary masks and mean gains used by one cascade, captured for inspection.
#[derive(Clone, Debug)]
pub struct MaskRecord {
    /// Decoder level (0 = full resolution).
    pub level: usize,
    /// Cascade index within the level.
    pub rtc: usize,
    pub rain: Tensor,
    pub unaffected: Tensor,
    pub rain_gain: Tensor,
    pub unaffected_gain: Tensor,
}

/// One forward pass: the tape plus the parameters bound into it.
///
/// Parameters are bound lazily by path. With `trainable` set they become
/// gradient leaves, otherwise constants (inference records no backward
/// state).
pub struct Ctx<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: HashMap<String, Var>,
    trainable: bool,
    masks: Option<Vec<MaskRecord>>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self {
            g: Graph::new(),
            store,
            bound: HashMap::new(),
            trainable,
            masks: None,
        }
    }

    /// Enables mask capture for subsequent cascades.
    pub fn record_masks(&mut self) {
        self.masks.get_or_insert_with(Vec::new);
    }

    pub fn take_masks(&mut self) -> Vec<MaskRecord> {
        self.masks.take().unwrap_or_default()
    }

    pub(crate) fn recording_masks(&self) -> bool {
        self.masks.is_some()
    }

    pub(crate) fn push_mask(&mut self, rec: MaskRecord) {
        if let Some(m) = &mut self.masks {
            m.push(rec);
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, path: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(path) {
            return Ok(v);
        }
        let t = self.store.get(path)?.clone();
        let v = if self.trainable {
            self.g.param(t)?
        } else {
            self.g.constant(t)?
        };
        self.bound.insert(path.to_string(), v);
        Ok(v)
    }

    fn param_shaped(&mut self, path: &str, expected: &[usize]) -> Result<Var> {
        let v = self.param(path)?;
        let found = self.g.shape(v);
        if found.iter().product::<usize>() != expected.iter().product::<usize>() {
            return Err(ModelError::ParamShape {
                path: path.to_string(),
                found: found.to_vec(),
                expected: expected.to_vec(),
            });
        }
        Ok(v)
    }

    /// Convolution whose weights live at `{prefix}/weight` and `{prefix}/bias`.
    pub fn conv(&mut self, x: Var, prefix: &str, spec: ConvSpec) -> Result<Var> {
        let w = self.param_shaped(&format!("{prefix}/weight"), &spec.weight_shape())?;
        let b = if spec.has_bias {
            Some(self.param_shaped(&format!("{prefix}/bias"), &[spec.out_channels])?)
        } else {
            None
        };
        Ok(self.g.conv2d(x, w, b, spec)?)
    }

    /// Channel layer norm with `{prefix}/gamma` and `{prefix}/beta`.
    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}/gamma"))?;
        let beta = self.param(&format!("{prefix}/beta"))?;
        Ok(self.g.layer_norm(x, gamma, beta)?)
    }

    /// Paths bound so far.
    pub fn bound_paths(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    /// Runs backward from `loss` and returns one gradient per stored
    /// parameter, in store order. Unbound parameters get zeros.
    pub fn backward(mut self, loss: Var) -> Result<ParamStore> {
        let mut grads = self.g.backward(loss)?;
        let mut out = ParamStore::new();
        for (path, t) in self.store.iter() {
            let g = match self.bound.get(path).and_then(|&v| grads.take(v)) {
                Some(g) => g,
                None => Tensor::zeros(t.shape())?,
            };
            out.insert(path, g)?;
        }
        Ok(out)
    }
}
