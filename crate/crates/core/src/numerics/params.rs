use std::ops::Index;

use rand::Rng;
use rayon::prelude::*;

use super::{Gradients, NumericsError, Real, Tape, Tensor, Var};

/// Index of a parameter within a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Adam moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub m: Tensor<R>,
    pub v: Tensor<R>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<R> {
    pub name: String,
    pub value: Tensor<R>,
    pub grad: Tensor<R>,
    pub adam: AdamState<R>,
}

impl<R: Real> Parameter<R> {
    pub fn new(name: impl Into<String>, value: Tensor<R>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self { name: name.into(), grad: zeros.clone(), adam: AdamState { m: zeros.clone(), v: zeros, step: 0 }, value }
    }
}

/// Ordered collection of the learnable tensors of one model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<R> {
    params: Vec<Parameter<R>>,
}

/// Parameters bound as leaves of one tape, indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> ParamId {
        let name = name.into();
        assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter name {name}");
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Uniform `U(-bound, bound)` initialisation.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let t = Tensor::from_fn(shape, |_| R::of(rng.random_range(-bound..=bound)));
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: &[usize], v: f64) -> ParamId {
        self.add(name, Tensor::from_fn(shape, |_| R::of(v)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<R> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<R> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<R>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<R>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<R>> {
        self.params.iter_mut()
    }

    /// Registers every parameter as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<R>) -> Bound {
        Bound(self.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = R::zero());
        }
    }

    /// `grad += scale * adjoint` for every bound parameter.
    pub fn accumulate(&mut self, grads: &Gradients<R>, bound: &Bound, scale: f64) {
        let s = R::of(scale);
        for (p, &v) in self.params.iter_mut().zip(bound.vars()) {
            if let Some(g) = grads.get(v) {
                p.grad.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += s * b);
            }
        }
    }

    /// Copy with every tensor converted to another precision.
    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    adam: AdamState { m: p.adam.m.cast(), v: p.adam.v.cast(), step: p.adam.step },
                })
                .collect(),
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.data().iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt()
    }
}

/// Runs one forward/backward per item and stores the batch-mean gradient.
///
/// Each item gets its own tape. Per-item adjoints are summed in item order, so
/// the result does not depend on whether items ran in parallel.
pub fn batch_gradients<R, T, F>(
    store: &mut ParamStore<R>,
    items: &[T],
    parallel: bool,
    loss_fn: F,
) -> Result<f64, NumericsError>
where
    R: Real,
    T: Sync,
    F: Fn(&mut Tape<R>, &Bound, &T) -> Result<Var, NumericsError> + Sync,
{
    if items.is_empty() {
        return Err(NumericsError::InvalidArgument("empty batch".into()));
    }
    let shared: &ParamStore<R> = store;
    let run = |item: &T| -> Result<(f64, Vec<Option<Vec<R>>>), NumericsError> {
        let mut tape = Tape::new();
        let bound = shared.bind(&mut tape);
        let loss = loss_fn(&mut tape, &bound, item)?;
        let value = tape.value(loss).item().as_f64();
        let grads = tape.backward(loss)?;
        Ok((value, bound.vars().iter().map(|&v| grads.get(v).map(|g| g.to_vec())).collect()))
    };
    let results: Vec<_> = if parallel { items.par_iter().map(run).collect() } else { items.iter().map(run).collect() };
    store.zero_grad();
    let scale = R::of(1.0 / items.len() as f64);
    let mut total = 0.0;
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        for (p, g) in store.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                p.grad.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += scale * b);
            }
        }
    }
    Ok(total / items.len() as f64)
}
