use rand::Rng;

use crate::diffcore::tape::{Gradients, Tape};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub(crate) usize);

/// A named set of parameters sharing one learning rate and weight decay.
/// `weight_decay > 0` selects the decoupled (AdamW) update for the group.
#[derive(Debug, Clone)]
pub struct ParamGroup<T> {
    pub name: String,
    pub learning_rate: T,
    pub weight_decay: T,
    members: Vec<ParamId>,
}

impl<T> ParamGroup<T> {
    pub fn members(&self) -> &[ParamId] {
        &self.members
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Param<T> {
    pub(crate) name: String,
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Tensor<T>,
    pub(crate) has_grad: bool,
    pub(crate) group: GroupId,
}

/// Owner of every trainable tensor. Each parameter belongs to exactly one
/// group, fixed at registration.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    pub(crate) params: Vec<Param<T>>,
    pub(crate) groups: Vec<ParamGroup<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn add_group(&mut self, name: &str, learning_rate: T, weight_decay: T) -> Result<GroupId> {
        if !(learning_rate > T::zero()) {
            return Err(Error::invalid(format!(
                "group {name}: learning rate must be positive"
            )));
        }
        if weight_decay < T::zero() {
            return Err(Error::invalid(format!(
                "group {name}: weight decay must be non-negative"
            )));
        }
        if self.groups.iter().any(|g| g.name == name) {
            return Err(Error::invalid(format!("duplicate group {name}")));
        }
        self.groups.push(ParamGroup {
            name: name.to_string(),
            learning_rate,
            weight_decay,
            members: Vec::new(),
        });
        Ok(GroupId(self.groups.len() - 1))
    }

    pub fn add(&mut self, group: GroupId, name: &str, value: Tensor<T>) -> ParamId {
        let id = ParamId(self.params.len());
        let [r, c] = value.shape();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            has_grad: false,
            group,
        });
        self.groups[group.0].members.push(id);
        id
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` for an `out × in` matrix.
    pub fn add_dense<R: Rng + ?Sized>(
        &mut self,
        group: GroupId,
        name: &str,
        out: usize,
        inp: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (out + inp) as f64).sqrt();
        let t = uniform(out, inp, limit, rng);
        self.add(group, name, t)
    }

    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        group: GroupId,
        name: &str,
        rows: usize,
        cols: usize,
        limit: f64,
        rng: &mut R,
    ) -> ParamId {
        let t = uniform(rows, cols, limit, rng);
        self.add(group, name, t)
    }

    pub fn add_zeros(&mut self, group: GroupId, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(group, name, Tensor::zeros(rows, cols))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        let p = &self.params[id.0];
        p.has_grad.then_some(&p.grad)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group_of(&self, id: ParamId) -> GroupId {
        self.params[id.0].group
    }

    pub fn groups(&self) -> &[ParamGroup<T>] {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> &ParamGroup<T> {
        &self.groups[id.0]
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut ParamGroup<T> {
        &mut self.groups[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Adds the gradients of every parameter leaf on `tape` into the store.
    pub fn accumulate(&mut self, tape: &Tape<T>, grads: &Gradients<T>) {
        for (node, pid) in tape.param_leaves() {
            if let Some(g) = grads.wrt(crate::diffcore::tape::Var::from_index(node)) {
                let p = &mut self.params[pid.0];
                p.grad.add_assign(g);
                p.has_grad = true;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
            p.has_grad = false;
        }
    }

    pub fn any_grad(&self) -> bool {
        self.params.iter().any(|p| p.has_grad)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

fn uniform<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::of(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}
