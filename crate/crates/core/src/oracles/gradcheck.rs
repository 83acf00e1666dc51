//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OracleError, Result};
use crate::graph::{Graph, Var};
use crate::model::{forward, l1_loss, Ctx, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::{Tensor, TensorError};

/// A scalar function of several tensors together with a claimed gradient.
pub trait Differentiable {
    fn value(&self, inputs: &[Tensor]) -> Result<f64>;
    /// One gradient tensor per input, shaped like that input.
    fn gradient(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>>;
}

/// Adapts a closure that records onto the tape. Inputs are bound as
/// trainable leaves, the closure must return a one-element result.
pub struct TapeFn<F>(pub F);

impl<F> TapeFn<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    fn record(&self, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = inputs
            .iter()
            .map(|t| g.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = (self.0)(&mut g, &vars)?;
        if g.value(out).numel() != 1 {
            return Err(OracleError::NonScalar(g.value(out).shape().to_vec()));
        }
        Ok((g, vars, out))
    }
}

impl<F> Differentiable for TapeFn<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    fn value(&self, inputs: &[Tensor]) -> Result<f64> {
        let (g, _, out) = self.record(inputs)?;
        Ok(g.value(out).data()[0])
    }

    fn gradient(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let (mut g, vars, out) = self.record(inputs)?;
        let mut grads = g.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| match grads.take(v) {
                Some(gt) => Ok(gt),
                None => Ok(Tensor::zeros(t.shape())?),
            })
            .collect()
    }
}

/// Mean absolute error of the whole network on one fixed pair, as a
/// function of every parameter tensor (in store order).
pub struct ModelLoss<'a> {
    pub cfg: &'a ModelConfig,
    pub template: &'a ParamStore,
    pub input: Tensor,
    pub target: Tensor,
}

impl ModelLoss<'_> {
    pub fn params(&self) -> Vec<Tensor> {
        self.template.iter().map(|(_, t)| t.clone()).collect()
    }

    fn store(&self, inputs: &[Tensor]) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for ((path, _), t) in self.template.iter().zip(inputs) {
            s.insert(path, t.clone())
                .map_err(|e| OracleError::Eval(e.to_string()))?;
        }
        Ok(s)
    }

    fn loss(&self, ctx: &mut Ctx) -> Result<Var> {
        let eval = |e: crate::model::ModelError| OracleError::Eval(e.to_string());
        let x = ctx.g.constant(self.input.clone())?;
        let y = forward(ctx, x, self.cfg).map_err(eval)?;
        l1_loss(ctx, y, &self.target).map_err(eval)
    }
}

impl Differentiable for ModelLoss<'_> {
    fn value(&self, inputs: &[Tensor]) -> Result<f64> {
        let store = self.store(inputs)?;
        let mut ctx = Ctx::new(&store, false);
        let l = self.loss(&mut ctx)?;
        Ok(ctx.g.value(l).data()[0])
    }

    fn gradient(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let store = self.store(inputs)?;
        let mut ctx = Ctx::new(&store, true);
        let l = self.loss(&mut ctx)?;
        let grads = ctx
            .backward(l)
            .map_err(|e| OracleError::Eval(e.to_string()))?;
        Ok(grads.iter().map(|(_, t)| t.clone()).collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check this many coordinates drawn without replacement across all
    /// inputs; `None` checks every coordinate.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            samples: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    /// Largest relative error seen on each input (0 when none was sampled).
    pub fn per_input_max(&self, inputs: usize) -> Vec<f64> {
        let mut out = vec![0.0; inputs];
        for c in &self.checks {
            out[c.input] = f64::max(out[c.input], c.rel_err);
        }
        out
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.rel_err <= self.tol)
    }
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-8)
}

/// Compares `f.gradient` with central differences `(f(x+ε) − f(x−ε)) / 2ε`.
pub fn grad_check(
    f: &dyn Differentiable,
    inputs: &[Tensor],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = f.gradient(inputs)?;
    if analytic.len() != inputs.len() {
        return Err(OracleError::Shape(format!(
            "{} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    for (a, x) in analytic.iter().zip(inputs) {
        if a.shape() != x.shape() {
            return Err(OracleError::Shape(format!(
                "gradient {:?} for input {:?}",
                a.shape(),
                x.shape()
            )));
        }
    }

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = match opts.samples {
        Some(n) if n < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| coords[k]).collect()
        }
        _ => coords,
    };

    let mut work = inputs.to_vec();
    let mut checks = Vec::with_capacity(chosen.len());
    for (i, j) in chosen {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + opts.eps;
        let plus = f.value(&work)?;
        work[i].data_mut()[j] = orig - opts.eps;
        let minus = f.value(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let a = analytic[i].data()[j];
        checks.push(CoordCheck {
            input: i,
            index: j,
            analytic: a,
            numeric,
            rel_err: relative_error(a, numeric),
        });
    }
    Ok(GradCheckReport {
        tol: opts.tol,
        checks,
    })
}
