//! Jensen-Shannon mutual-information estimation with a learned critic.
//!
//! For codes `(z1, z2)` the critic `T` scores aligned pairs (positives) and
//! pairs whose second element is shuffled by an in-batch derangement
//! (negatives). The bound is `E_pos[−softplus(−T)] − E_neg[softplus(T)]`,
//! which equals `−ln 4` for a constant-zero critic and approaches `0` when
//! positives and negatives are perfectly separated.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffcore::{mlp, Adam, DenseIds, DenseParams, DenseVars, GroupId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LN_4: f64 = 1.386_294_361_119_890_6;

#[derive(Debug, Clone)]
pub struct CriticVars {
    pub layers: Vec<DenseVars>,
}

/// Scalar-output ReLU network on the concatenation `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams<T> {
    pub layers: Vec<DenseParams<T>>,
}

impl<T: Scalar> CriticParams<T> {
    /// The constant-zero critic `T ≡ 0`.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        CriticParams {
            layers: dims.windows(2).map(|w| DenseParams::zeros(w[1], w[0], true)).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Result<CriticVars> {
        Ok(CriticVars {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticIds {
    pub layers: Vec<DenseIds>,
}

impl CriticIds {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        group: GroupId,
        name: &str,
        input: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseIds::new(store, group, &format!("{name}{i}"), w[1], w[0], true, rng))
            .collect();
        CriticIds { layers }
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, trainable: bool) -> CriticVars {
        CriticVars {
            layers: self.layers.iter().map(|l| l.bind(tape, store, trainable)).collect(),
        }
    }

    pub fn values<T: Scalar>(&self, store: &ParamStore<T>) -> CriticParams<T> {
        CriticParams {
            layers: self.layers.iter().map(|l| l.values(store)).collect(),
        }
    }
}

/// Critic scores `T(a_r, b_r)` for every row: `b × 1`.
pub fn critic_scores<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, critic: &CriticVars) -> Result<Var> {
    let joint = tape.concat_cols(a, b)?;
    mlp(tape, joint, &critic.layers)
}

/// A uniformly random cyclic permutation (Sattolo), hence without fixed points.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid("a derangement needs at least 2 elements"));
    }
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    Ok(p)
}

/// The JSD lower bound as a `1 × 1` node; `negatives[r]` is the row of `z2`
/// paired with row `r` of `z1` in the negative set.
pub fn jsd_graph<T: Scalar>(
    tape: &mut Tape<T>,
    z1: Var,
    z2: Var,
    critic: &CriticVars,
    negatives: &[usize],
) -> Result<Var> {
    let [rows, _] = tape.shape(z1);
    if rows < 2 {
        return Err(Error::invalid("JSD estimation needs a batch of at least 2"));
    }
    let pos = critic_scores(tape, z1, z2, critic)?;
    let shuffled = tape.select_rows(z2, negatives)?;
    let neg = critic_scores(tape, z1, shuffled, critic)?;
    let neg_pos = tape.scale(pos, -T::one());
    let sp_pos = tape.softplus(neg_pos);
    let e_pos = tape.mean(sp_pos);
    let sp_neg = tape.softplus(neg);
    let e_neg = tape.mean(sp_neg);
    let total = tape.add(e_pos, e_neg)?;
    Ok(tape.scale(total, -T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsdEstimate<T> {
    /// `E_pos[−softplus(−T)] − E_neg[softplus(T)]`, in `(−∞, 0)`.
    pub bound: T,
}

impl<T: Scalar> JsdEstimate<T> {
    /// Loss minimized by the critic.
    pub fn critic_loss(&self) -> T {
        -self.bound
    }

    /// The bound shifted by `ln 4`, so that independent pairs score about `0`
    /// and fully dependent pairs approach `ln 4`.
    pub fn estimate(&self) -> T {
        self.bound + T::of(LN_4)
    }
}

pub fn jsd_mi_lower_bound<T: Scalar, R: Rng + ?Sized>(
    z1: &Tensor<T>,
    z2: &Tensor<T>,
    critic: &CriticParams<T>,
    rng: &mut R,
) -> Result<JsdEstimate<T>> {
    if z1.rows() != z2.rows() {
        return Err(Error::Shape {
            op: "jsd_mi_lower_bound",
            left: z1.shape(),
            right: z2.shape(),
        });
    }
    let perm = derangement(z1.rows(), rng)?;
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone())?;
    let b = tape.constant(z2.clone())?;
    let c = critic.bind(&mut tape)?;
    let bound = jsd_graph(&mut tape, a, b, &c, &perm)?;
    Ok(JsdEstimate {
        bound: tape.value(bound).item(),
    })
}

/// Settings for training a stand-alone critic.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticFit {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for CriticFit {
    fn default() -> Self {
        CriticFit {
            hidden: vec![64, 64],
            steps: 600,
            batch: 128,
            learning_rate: 1e-3,
        }
    }
}

/// Trains a fresh critic to maximize the JSD bound on the paired rows of
/// `a` and `b`.
pub fn fit_critic<T: Scalar, R: Rng + ?Sized>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    fit: &CriticFit,
    rng: &mut R,
) -> Result<CriticParams<T>> {
    if a.rows() != b.rows() {
        return Err(Error::Shape {
            op: "fit_critic",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = a.rows();
    if n < 2 {
        return Err(Error::invalid("critic fitting needs at least 2 pairs"));
    }
    let mut store = ParamStore::new();
    let group = store.add_group("critic", T::of(fit.learning_rate), T::zero())?;
    let ids = CriticIds::new(&mut store, group, "critic", a.cols() + b.cols(), &fit.hidden, rng);
    let mut opt = Adam::new(&store);
    let batch = fit.batch.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    for _ in 0..fit.steps {
        if cursor + batch > n {
            order.shuffle(rng);
            cursor = 0;
        }
        let rows = &order[cursor..cursor + batch];
        cursor += batch;
        let perm = derangement(batch, rng)?;
        let mut tape = Tape::new();
        let za = tape.constant(a.select_rows(rows))?;
        let zb = tape.constant(b.select_rows(rows))?;
        let critic = ids.bind(&mut tape, &store, true);
        let bound = jsd_graph(&mut tape, za, zb, &critic, &perm)?;
        let loss = tape.scale(bound, -T::one());
        let grads = tape.backward(loss)?;
        store.accumulate(&tape, &grads);
        opt.step(&mut store)?;
    }
    Ok(ids.values(&store))
}
