//! Minimal reverse-mode differentiable numerics: tensors, a tape, parameter
//! groups, an adaptive-moment optimizer, and finite-difference checks.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

use rand::Rng;
use rand_distr::StandardNormal;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use layers::{mlp, DenseIds, DenseParams, DenseVars};
pub use optim::Adam;
pub use params::{GroupId, ParamGroup, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Standard-normal noise tensor drawn from an explicit source.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}

/// Reparameterized draw `mean + stddev ⊙ eps`. `eps` enters as a constant, so
/// gradients reach `mean` and `stddev` only.
pub fn gaussian_sample<T: Scalar>(
    tape: &mut Tape<T>,
    mean: Var,
    stddev: Var,
    eps: Tensor<T>,
) -> Result<Var> {
    if tape.value(stddev).data().iter().any(|&s| !(s > T::zero())) {
        return Err(Error::invalid("gaussian_sample: stddev must be strictly positive"));
    }
    if tape.shape(mean) != eps.shape() {
        return Err(Error::Shape {
            op: "gaussian_sample",
            left: tape.shape(mean),
            right: eps.shape(),
        });
    }
    let eps = tape.constant(eps)?;
    let scaled = tape.mul(stddev, eps)?;
    tape.add(mean, scaled)
}

/// Value-level convenience: relu, sigmoid, softplus and row softmax applied
/// to a tensor without recording gradients.
pub mod eval {
    use super::*;

    pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max(T::zero()))
    }

    pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        x.map(Scalar::sigmoid)
    }

    pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        x.map(Scalar::softplus)
    }

    pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone())?;
        let y = tape.softmax(v);
        Ok(tape.value(y).clone())
    }

    pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let wv = tape.constant(w.clone())?;
        let bv = b.map(|b| tape.constant(b.clone())).transpose()?;
        let y = tape.dense(xv, wv, bv)?;
        Ok(tape.value(y).clone())
    }
}
