use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried along with the weights (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<E> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<E>,
}

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<E> {
    params: Vec<Param<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        kind: ParamKind,
        value: Vec<E>,
    ) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param {name}");
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.params.push(Param {
            name,
            shape,
            kind,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        kind: ParamKind,
    ) -> ParamId {
        let len = shape.iter().product();
        self.add(name, shape, kind, vec![E::zero(); len])
    }

    pub fn filled(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        kind: ParamKind,
        v: E,
    ) -> ParamId {
        let len = shape.iter().product();
        self.add(name, shape, kind, vec![v; len])
    }

    /// He-normal initialisation, std = sqrt(2 / fan_in).
    pub fn he_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid std");
        let len: usize = shape.iter().product();
        let value = (0..len).map(|_| E::of(dist.sample(rng))).collect();
        self.add(name, shape, ParamKind::Trainable, value)
    }

    pub fn get(&self, id: ParamId) -> &Param<E> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[E] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<E> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; buffers and untouched
/// parameters have empty entries.
#[derive(Clone, Debug)]
pub struct Gradients<E> {
    grads: Vec<Vec<E>>,
}

impl<E: Element> Gradients<E> {
    pub(crate) fn new(n: usize) -> Self {
        Gradients {
            grads: vec![Vec::new(); n],
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [E] {
        let g = &mut self.grads[id.0];
        if g.is_empty() {
            g.resize(len, E::zero());
        }
        g
    }

    pub fn get(&self, id: ParamId) -> Option<&[E]> {
        let g = &self.grads[id.0];
        (!g.is_empty()).then_some(g.as_slice())
    }
}
