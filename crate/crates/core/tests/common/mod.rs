#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regformer::nn::{initialize, ParamSpec, ParamStore};
use regformer::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).unwrap()
}

/// Random binary `1×h×w` map with at least one zero and one one.
pub fn random_binary(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    loop {
        let t = Tensor::from_fn([1, h, w], |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).unwrap();
        let ones = t.sum();
        if ones > 0.0 && ones < (h * w) as f64 {
            return t;
        }
    }
}

/// Parameters of `layout` with every tensor redrawn so that biases,
/// norms and temperatures are generic rather than at their init values.
pub fn generic_params(layout: &[ParamSpec], seed: u64) -> ParamStore {
    let mut store = initialize(layout, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for (path, t) in store.iter_mut() {
        let (lo, hi) = if path.ends_with("gamma") || path.ends_with("temperature") {
            (0.5, 1.5)
        } else {
            (-0.5, 0.5)
        };
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = r.gen_range(lo..hi));
    }
    store
}
