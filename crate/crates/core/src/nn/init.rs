//! Deterministic parameter initialization from a declarative layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamError, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-bound, bound)`.
    Uniform {
        bound: f64,
    },
    Constant(f64),
}

impl Init {
    /// Uniform with bound `1/√fan_in`.
    pub fn fan_in(fan_in: usize) -> Self {
        Self::Uniform {
            bound: 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Materializes `layout` in order, drawing uniform values from one ChaCha8
/// stream seeded with `seed`.
pub fn initialize(layout: &[ParamSpec], seed: u64) -> Result<ParamStore, ParamError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in layout {
        let t = match spec.init {
            Init::Uniform { bound } => Tensor::from_fn(spec.shape.clone(), |_| {
                bound * (2.0 * rng.gen::<f64>() - 1.0)
            }),
            Init::Constant(v) => Tensor::full(spec.shape.clone(), v),
        }
        .expect("layout shapes are non-empty");
        store.insert(spec.path.clone(), t)?;
    }
    Ok(store)
}
