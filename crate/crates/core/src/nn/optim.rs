//! AdamW with decoupled weight decay.

use thiserror::Error;

use super::params::ParamStore;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("shape mismatch for `{path}`: param {param:?}, other {other:?}")]
    Shape {
        path: String,
        param: Vec<usize>,
        other: Vec<usize>,
    },
    #[error("optimizer state tracks {state} tensors but the store holds {params}")]
    Layout { state: usize, params: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub hyper: AdamW,
    pub lr: f64,
    /// Number of completed updates.
    pub t: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl OptimState {
    /// Zeroed moments mirroring `params`.
    pub fn new(params: &ParamStore, hyper: AdamW, lr: f64) -> Self {
        let mut m = params.clone();
        m.zero_all();
        Self {
            hyper,
            lr,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update at the current `lr`. `grads` must hold one tensor per
    /// parameter path with matching shape.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<(), OptimError> {
        if self.m.len() != params.len() {
            return Err(OptimError::Layout {
                state: self.m.len(),
                params: params.len(),
            });
        }
        for (path, p) in params.iter() {
            let g = grads
                .get(path)
                .map_err(|_| OptimError::MissingGrad(path.to_string()))?;
            for other in [
                g,
                self.m
                    .get(path)
                    .map_err(|_| OptimError::MissingGrad(path.to_string()))?,
            ] {
                if other.shape() != p.shape() {
                    return Err(OptimError::Shape {
                        path: path.to_string(),
                        param: p.shape().to_vec(),
                        other: other.shape().to_vec(),
                    });
                }
            }
        }

        self.t += 1;
        let AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.lr;
        for ((path, p), (m, v)) in params.iter_mut().zip(
            self.m
                .iter_mut()
                .map(|(_, t)| t)
                .zip(self.v.iter_mut().map(|(_, t)| t)),
        ) {
            let g = grads.get(path).expect("checked above").data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, pv) in p.data_mut().iter_mut().enumerate() {
                *pv -= lr * weight_decay * *pv;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
