use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Element, Tape, Tensor, Var};

/// Index of a parameter in its [`ParamStore`].
///
/// A store binds its parameters as the first leaves of a fresh tape, so a
/// `ParamId` doubles as the [`Var`] of that parameter on such a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn var(self) -> Var {
        Var(self.0)
    }
}

/// Named, ordered parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamStore<E> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<E>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<E> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<E>] {
        &mut self.tensors
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Fresh tape whose first leaves are these parameters, in order.
    pub fn bind(&self) -> Tape<E> {
        let mut tape = Tape::new();
        for t in &self.tensors {
            tape.leaf(t.clone(), true);
        }
        tape
    }

    /// Gradient of every parameter after a backward pass on a bound tape;
    /// parameters the loss never reached get zeros.
    pub fn grads(&self, tape: &Tape<E>) -> Vec<Tensor<E>> {
        self.ids()
            .map(|id| {
                tape.grad(id.var())
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.get(id).shape()))
            })
            .collect()
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights for LeakyReLU nets: `N(0, 2/fan_in)`. Drawn in f64 so
    /// both dtypes start from the same values up to rounding.
    pub fn he_normal<E: Element>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<E> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| E::from_f64(dist.sample(&mut self.rng)))
    }
}
