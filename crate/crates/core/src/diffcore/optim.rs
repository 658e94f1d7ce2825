//! Adaptive-moment optimizer. Groups with a positive weight decay receive
//! the decoupled (AdamW) update; groups with zero decay the plain Adam update.

use crate::diffcore::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_betas(store, T::of(0.9), T::of(0.999), T::of(1e-8))
            .expect("default betas are valid")
    }

    pub fn with_betas(store: &ParamStore<T>, beta1: T, beta2: T, epsilon: T) -> Result<Self> {
        let unit = |b: T| b > T::zero() && b < T::one();
        if !unit(beta1) || !unit(beta2) {
            return Err(Error::invalid("betas must lie in (0, 1)"));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        let zeros = |p: &crate::diffcore::params::Param<T>| vec![T::zero(); p.value.len()];
        Ok(Adam {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: store.params.iter().map(zeros).collect(),
            second: store.params.iter().map(zeros).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter holding a gradient, at its
    /// group's rate, then clears all gradients. Parameters without a gradient
    /// this step keep their value and moments.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.params.len() != self.first.len() {
            return Err(Error::invalid(
                "optimizer state does not match parameter store",
            ));
        }
        if !store.any_grad() {
            return Err(Error::invalid(
                "optimizer step without gradients; run a backward pass first",
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, p) in store.params.iter_mut().enumerate() {
            if !p.has_grad {
                continue;
            }
            let group = &store.groups[p.group.0];
            let lr = group.learning_rate;
            let wd = group.weight_decay;
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for ((x, &g), (mk, vk)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mk = self.beta1 * *mk + (T::one() - self.beta1) * g;
                *vk = self.beta2 * *vk + (T::one() - self.beta2) * g * g;
                let mhat = *mk / bc1;
                let vhat = *vk / bc2;
                if wd > T::zero() {
                    *x -= lr * wd * *x;
                }
                *x -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
