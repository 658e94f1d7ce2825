//! Information-plane estimates `I(x; z)` and `I(z; y)` from frozen
//! representations, and tail trimming.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::objective::{critic_scores, fit_critic, CriticFit, CriticParams};

/// Share of values removed from each tail before averaging.
pub const TRIM_FRACTION: f64 = 0.05;

/// Smallest sample for which trimming leaves both tails non-empty.
pub const MIN_PLANE_SAMPLES: usize = 40;

/// Sorts `values` and drops `floor(0.05 · N)` from each end.
pub fn trim_tails(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = (TRIM_FRACTION * v.len() as f64).floor() as usize;
    v[cut..v.len() - cut].to_vec()
}

pub fn trimmed_mean(values: &[f64]) -> Result<f64> {
    let kept = trim_tails(values);
    if kept.is_empty() {
        return Err(Error::invalid("trimmed mean of an empty sample"));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Per-row energy-based values `T(a_r, b_r) − log mean_j exp T(a_r, b_j)`.
pub fn energy_values(a: &Tensor<f64>, b: &Tensor<f64>, critic: &CriticParams<f64>) -> Result<Vec<f64>> {
    let n = a.rows();
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let mut tape = Tape::new();
        let c = critic.bind(&mut tape)?;
        let ar = a.select_rows(&vec![r; n]);
        let av = tape.constant(ar)?;
        let bv = tape.constant(b.clone())?;
        let scores = critic_scores(&mut tape, av, bv, &c)?;
        let s = tape.value(scores).data().to_vec();
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lme = max + (s.iter().map(|v| (v - max).exp()).sum::<f64>() / n as f64).ln();
        out.push(s[r] - lme);
    }
    Ok(out)
}

/// Trains a fresh critic with the JSD objective on one half of the pairs and
/// returns the trimmed mean of the energy-based values on the other half.
pub fn mutual_information(a: &Tensor<f64>, b: &Tensor<f64>, fit: &CriticFit, seed: u64) -> Result<f64> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "mutual_information",
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.rows() < MIN_PLANE_SAMPLES {
        return Err(Error::invalid(format!(
            "information plane needs at least {MIN_PLANE_SAMPLES} samples, got {}",
            a.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..a.rows()).collect();
    order.shuffle(&mut rng);
    let (fit_rows, eval_rows) = order.split_at(a.rows() / 2);
    let critic = fit_critic(&a.select_rows(fit_rows), &b.select_rows(fit_rows), fit, &mut rng)?;
    let values = energy_values(&a.select_rows(eval_rows), &b.select_rows(eval_rows), &critic)?;
    trimmed_mean(&values)
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor<f64>> {
    let mut t = Tensor::zeros(labels.len().max(1), classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} outside {classes} classes")));
        }
        t.set(r, l, 1.0);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoPlane {
    pub i_xz: f64,
    pub i_zy: f64,
}

impl InfoPlane {
    /// `I(x; z) − I(z; y)`: information in the code beyond what the label needs.
    pub fn excess(&self) -> f64 {
        self.i_xz - self.i_zy
    }
}

/// `x` is the aggregated representation `v(x)`, `z` the sampled code and
/// `labels` the 0-based classes of the same rows.
pub fn information_plane(
    x: &Tensor<f64>,
    z: &Tensor<f64>,
    labels: &[usize],
    classes: usize,
    fit: &CriticFit,
    seed: u64,
) -> Result<InfoPlane> {
    if labels.len() != z.rows() || x.rows() != z.rows() {
        return Err(Error::invalid("information plane inputs must have one row per label"));
    }
    let y = one_hot(labels, classes)?;
    Ok(InfoPlane {
        i_xz: mutual_information(x, z, fit, seed)?,
        i_zy: mutual_information(z, &y, fit, seed.wrapping_add(1))?,
    })
}
