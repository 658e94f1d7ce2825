//! Factorized Gaussian view encoders and the closed-form diagonal KL.

use rand::Rng;

use crate::diffcore::{gaussian_sample, standard_normal, DenseIds, DenseParams, DenseVars, GroupId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower bound added to every standard deviation.
pub const STDDEV_FLOOR: f64 = 1e-4;

/// Mean, per-dimension standard deviation and one reparameterized sample.
/// Tensors are `b × d`; a single code has `b = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCode<T> {
    pub mean: Tensor<T>,
    pub stddev: Tensor<T>,
    pub sample: Tensor<T>,
}

impl<T: Scalar> GaussianCode<T> {
    /// A code whose sample sits at the mean.
    pub fn from_moments(mean: Tensor<T>, stddev: Tensor<T>) -> Result<Self> {
        if mean.shape() != stddev.shape() {
            return Err(Error::Shape {
                op: "gaussian code",
                left: mean.shape(),
                right: stddev.shape(),
            });
        }
        if stddev.data().iter().any(|&s| !(s > T::zero())) {
            return Err(Error::invalid("stddev must be strictly positive"));
        }
        Ok(GaussianCode {
            sample: mean.clone(),
            mean,
            stddev,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CodeVars {
    pub mean: Var,
    pub stddev: Var,
    pub sample: Var,
}

#[derive(Debug, Clone)]
pub struct GaussianHeadVars {
    pub trunk: Vec<DenseVars>,
    pub mean: DenseVars,
    pub scale: DenseVars,
}

/// Shared ReLU trunk followed by a mean map and a raw-scale map; the raw
/// scale passes through softplus plus [`STDDEV_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeadParams<T> {
    pub trunk: Vec<DenseParams<T>>,
    pub mean: DenseParams<T>,
    pub scale: DenseParams<T>,
}

impl<T: Scalar> GaussianHeadParams<T> {
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<GaussianHeadVars> {
        Ok(GaussianHeadVars {
            trunk: self.trunk.iter().map(|l| l.bind(tape)).collect::<Result<_>>()?,
            mean: self.mean.bind(tape)?,
            scale: self.scale.bind(tape)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianHeadIds {
    pub trunk: Vec<DenseIds>,
    pub mean: DenseIds,
    pub scale: DenseIds,
}

impl GaussianHeadIds {
    /// Two trunk layers of width `hidden` and two output maps of width `dim`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        group: GroupId,
        input: usize,
        hidden: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let trunk = vec![
            DenseIds::new(store, group, "gauss.trunk0", hidden, input, true, rng),
            DenseIds::new(store, group, "gauss.trunk1", hidden, hidden, true, rng),
        ];
        GaussianHeadIds {
            trunk,
            mean: DenseIds::new(store, group, "gauss.mean", dim, hidden, true, rng),
            scale: DenseIds::new(store, group, "gauss.scale", dim, hidden, true, rng),
        }
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, trainable: bool) -> GaussianHeadVars {
        GaussianHeadVars {
            trunk: self.trunk.iter().map(|l| l.bind(tape, store, trainable)).collect(),
            mean: self.mean.bind(tape, store, trainable),
            scale: self.scale.bind(tape, store, trainable),
        }
    }

    pub fn values<T: Scalar>(&self, store: &ParamStore<T>) -> GaussianHeadParams<T> {
        GaussianHeadParams {
            trunk: self.trunk.iter().map(|l| l.values(store)).collect(),
            mean: self.mean.values(store),
            scale: self.scale.values(store),
        }
    }
}

/// Encodes a batch of views (`b × m`) into Gaussian codes. `eps` is the
/// `b × d` standard-normal noise of the reparameterized sample.
pub fn encode_view_graph<T: Scalar>(
    tape: &mut Tape<T>,
    view: Var,
    head: &GaussianHeadVars,
    eps: Tensor<T>,
) -> Result<CodeVars> {
    let mut h = view;
    for layer in &head.trunk {
        h = layer.apply(tape, h)?;
        h = tape.relu(h);
    }
    let mean = head.mean.apply(tape, h)?;
    let raw = head.scale.apply(tape, h)?;
    let sp = tape.softplus(raw);
    let stddev = tape.affine(sp, T::one(), T::of(STDDEV_FLOOR));
    let sample = gaussian_sample(tape, mean, stddev, eps)?;
    Ok(CodeVars {
        mean,
        stddev,
        sample,
    })
}

pub fn encode_view<T: Scalar, R: Rng + ?Sized>(
    view: &Tensor<T>,
    head: &GaussianHeadParams<T>,
    noise: &mut R,
) -> Result<GaussianCode<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(view.clone())?;
    let h = head.bind(&mut tape)?;
    let dim = head.mean.w.rows();
    let eps = standard_normal(view.rows(), dim, noise);
    let c = encode_view_graph(&mut tape, v, &h, eps)?;
    Ok(GaussianCode {
        mean: tape.value(c.mean).clone(),
        stddev: tape.value(c.stddev).clone(),
        sample: tape.value(c.sample).clone(),
    })
}

/// Row-wise `KL(a ‖ b)` for diagonal Gaussians given as `(mean, stddev)`
/// nodes: `b × d → b × 1`.
pub fn kl_diag_graph<T: Scalar>(
    tape: &mut Tape<T>,
    a: (Var, Var),
    b: (Var, Var),
) -> Result<Var> {
    let (mu_a, sd_a) = a;
    let (mu_b, sd_b) = b;
    let log_a = tape.log(sd_a);
    let log_b = tape.log(sd_b);
    let log_ratio = tape.sub(log_b, log_a)?;
    let var_a = tape.square(sd_a);
    let diff = tape.sub(mu_a, mu_b)?;
    let diff2 = tape.square(diff);
    let num = tape.add(var_a, diff2)?;
    let var_b = tape.square(sd_b);
    let den = tape.scale(var_b, T::of(2.0));
    let frac = tape.div(num, den)?;
    let terms = tape.add(log_ratio, frac)?;
    let terms = tape.affine(terms, T::one(), T::of(-0.5));
    Ok(tape.sum_cols(terms))
}

/// `KL(a ‖ b) = Σ_i log(σb_i/σa_i) + (σa_i² + (μa_i − μb_i)²) / (2σb_i²) − ½`
/// for two single (`1 × d`) diagonal Gaussians.
pub fn kl_diag_gaussians<T: Scalar>(a: &GaussianCode<T>, b: &GaussianCode<T>) -> Result<T> {
    if a.mean.shape() != b.mean.shape() {
        return Err(Error::Shape {
            op: "kl_diag_gaussians",
            left: a.mean.shape(),
            right: b.mean.shape(),
        });
    }
    if a.mean.rows() != 1 {
        return Err(Error::invalid("kl_diag_gaussians expects single codes"));
    }
    let mut tape = Tape::new();
    let ma = tape.constant(a.mean.clone())?;
    let sa = tape.constant(a.stddev.clone())?;
    let mb = tape.constant(b.mean.clone())?;
    let sb = tape.constant(b.stddev.clone())?;
    let kl = kl_diag_graph(&mut tape, (ma, sa), (mb, sb))?;
    Ok(tape.value(kl).item().max(T::zero()))
}
