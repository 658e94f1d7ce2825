//! Affine layers and multilayer perceptrons on top of the tape.

use rand::Rng;

use crate::diffcore::params::{GroupId, ParamId, ParamStore};
use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Affine layer bound to tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl DenseVars {
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.dense(x, self.w, self.b)
    }
}

/// Affine layer values (`w: out × in`, `b: 1 × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub w: Tensor<T>,
    pub b: Option<Tensor<T>>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(out: usize, inp: usize, bias: bool) -> Self {
        DenseParams {
            w: Tensor::zeros(out, inp),
            b: bias.then(|| Tensor::zeros(1, out)),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<DenseVars> {
        Ok(DenseVars {
            w: tape.constant(self.w.clone())?,
            b: self.b.as_ref().map(|b| tape.constant(b.clone())).transpose()?,
        })
    }
}

/// Affine layer stored in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseIds {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl DenseIds {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        group: GroupId,
        name: &str,
        out: usize,
        inp: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_dense(group, &format!("{name}.w"), out, inp, rng);
        let b = bias.then(|| store.add_zeros(group, &format!("{name}.b"), 1, out));
        DenseIds { w, b }
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, trainable: bool) -> DenseVars {
        let mut get = |id| {
            if trainable {
                tape.param(store, id)
            } else {
                tape.frozen_param(store, id)
            }
        };
        let w = get(self.w);
        let b = self.b.map(&mut get);
        DenseVars { w, b }
    }

    pub fn values<T: Scalar>(&self, store: &ParamStore<T>) -> DenseParams<T> {
        DenseParams {
            w: store.value(self.w).clone(),
            b: self.b.map(|b| store.value(b).clone()),
        }
    }
}

/// Applies layers with ReLU between them (none after the last).
pub fn mlp<T: Scalar>(tape: &mut Tape<T>, x: Var, layers: &[DenseVars]) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(tape, h)?;
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    Ok(h)
}
