//! The two views of a tokenized dialogue and their gated aggregation.
//!
//! All graph builders operate on a batch: `emb` is `b × (n·m)` (one row per
//! sample, `n` slots of width `m`), `mask` holds `b·n` flags.

use crate::diffcore::{Tape, Tensor, Var};
use crate::encoder::vocab::{EncodedSequence, Vocabulary};
use crate::encoder::sample::DialogueSample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `n` embedding vectors of width `m` with a validity mask. Masked rows hold
/// zeros and at least one row is real.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence<T> {
    embeddings: Tensor<T>,
    mask: Vec<bool>,
}

impl<T: Scalar> TokenEmbeddingSequence<T> {
    pub fn new(mut embeddings: Tensor<T>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != embeddings.rows() {
            return Err(Error::Shape {
                op: "token sequence mask",
                left: embeddings.shape(),
                right: [mask.len(), 1],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("token sequence has no real tokens"));
        }
        let m = embeddings.cols();
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                embeddings.data_mut()[i * m..(i + 1) * m].fill(T::zero());
            }
        }
        Ok(TokenEmbeddingSequence { embeddings, mask })
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn width(&self) -> usize {
        self.embeddings.cols()
    }

    /// The sequence flattened into one `1 × (n·m)` row.
    pub fn flattened(&self) -> Tensor<T> {
        Tensor::row(self.embeddings.data().to_vec())
    }
}

/// Looks up every token of `sample` in `table` (`V × m`).
pub fn tokenize_and_embed<T: Scalar>(
    sample: &DialogueSample,
    vocab: &Vocabulary,
    table: &Tensor<T>,
    max_len: usize,
) -> Result<TokenEmbeddingSequence<T>> {
    if table.rows() != vocab.len() {
        return Err(Error::invalid(format!(
            "embedding table has {} rows, vocabulary has {} tokens",
            table.rows(),
            vocab.len()
        )));
    }
    let EncodedSequence { ids, mask } = vocab.encode(sample, max_len)?;
    let mut tape = Tape::new();
    let t = tape.constant(table.clone())?;
    let e = tape.embed(t, &ids, &mask, max_len)?;
    let flat = tape.value(e).data().to_vec();
    TokenEmbeddingSequence::new(Tensor::new(max_len, table.cols(), flat)?, mask)
}

/// Adaptive reception field weights: `W1` is `r1 × (n·m)`, `w` stacks the `n`
/// per-position row vectors into an `n × r1` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveFieldParams<T> {
    pub w1: Tensor<T>,
    pub w: Tensor<T>,
}

impl<T: Scalar> AdaptiveFieldParams<T> {
    pub fn zeros(n: usize, m: usize, r1: usize) -> Self {
        AdaptiveFieldParams {
            w1: Tensor::zeros(r1, n * m),
            w: Tensor::zeros(n, r1),
        }
    }

    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        let r1 = self.w1.rows();
        if self.w1.cols() != n * m || self.w.shape() != [n, r1] {
            return Err(Error::Shape {
                op: "adaptive_field params",
                left: self.w1.shape(),
                right: self.w.shape(),
            });
        }
        if r1 >= m {
            return Err(Error::invalid(format!(
                "bottleneck width r1={r1} must be smaller than embedding width m={m}"
            )));
        }
        Ok(())
    }
}

/// Gate weights: `W2` is `r2 × m`, `W3` is `m × r2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationGateParams<T> {
    pub w2: Tensor<T>,
    pub w3: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair<T> {
    pub v1: Tensor<T>,
    pub v2: Tensor<T>,
    pub v: Tensor<T>,
}

fn pool_weights<T: Scalar>(mask: &[bool], n: usize) -> Result<Tensor<T>> {
    let rows = mask.len() / n;
    let mut w = Tensor::zeros(rows, n);
    for r in 0..rows {
        let m = &mask[r * n..(r + 1) * n];
        let count = m.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::invalid(format!("row {r}: all positions masked")));
        }
        let inv = T::one() / T::from_usize(count).expect("count fits scalar");
        for (i, &keep) in m.iter().enumerate() {
            if keep {
                w.set(r, i, inv);
            }
        }
    }
    Ok(w)
}

/// Mean of the unmasked token embeddings of each row.
pub fn global_pool_graph<T: Scalar>(
    tape: &mut Tape<T>,
    emb: Var,
    mask: &[bool],
    n: usize,
    m: usize,
) -> Result<Var> {
    let w = pool_weights(mask, n)?;
    let w = tape.constant(w)?;
    tape.token_weighted_sum(w, emb, m)
}

/// Token weights `softmax(α)` over unmasked positions, with
/// `α_i = σ(w_i · ReLU(W1 · s))`.
pub fn adaptive_weights_graph<T: Scalar>(
    tape: &mut Tape<T>,
    emb: Var,
    mask: &[bool],
    w1: Var,
    w: Var,
) -> Result<Var> {
    let h = tape.dense(emb, w1, None)?;
    let h = tape.relu(h);
    let alpha = tape.dense(h, w, None)?;
    let alpha = tape.sigmoid(alpha);
    tape.masked_softmax(alpha, mask)
}

/// Adaptive reception field view; returns `(view, token_weights)`.
pub fn adaptive_field_graph<T: Scalar>(
    tape: &mut Tape<T>,
    emb: Var,
    mask: &[bool],
    m: usize,
    w1: Var,
    w: Var,
) -> Result<(Var, Var)> {
    let weights = adaptive_weights_graph(tape, emb, mask, w1, w)?;
    let view = tape.token_weighted_sum(weights, emb, m)?;
    Ok((view, weights))
}

/// `β ⊗ v1 + (1 − β) ⊗ v2` with `β = σ(W3 · ReLU(W2 · (v1 + v2)))`; returns
/// `(aggregate, β)`.
pub fn aggregate_graph<T: Scalar>(
    tape: &mut Tape<T>,
    v1: Var,
    v2: Var,
    w2: Var,
    w3: Var,
) -> Result<(Var, Var)> {
    let sum = tape.add(v1, v2)?;
    let h = tape.dense(sum, w2, None)?;
    let h = tape.relu(h);
    let beta = tape.dense(h, w3, None)?;
    let beta = tape.sigmoid(beta);
    let diff = tape.sub(v1, v2)?;
    let gated = tape.mul(beta, diff)?;
    let out = tape.add(v2, gated)?;
    Ok((out, beta))
}

/// Un-gated aggregation `(v1 + v2) / 2`.
pub fn mean_aggregate_graph<T: Scalar>(tape: &mut Tape<T>, v1: Var, v2: Var) -> Result<Var> {
    let sum = tape.add(v1, v2)?;
    Ok(tape.scale(sum, T::of(0.5)))
}

fn seq_graph<T: Scalar>(tape: &mut Tape<T>, seq: &TokenEmbeddingSequence<T>) -> Result<Var> {
    tape.constant(seq.flattened())
}

pub fn global_pool<T: Scalar>(seq: &TokenEmbeddingSequence<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let e = seq_graph(&mut tape, seq)?;
    let v = global_pool_graph(&mut tape, e, seq.mask(), seq.len(), seq.width())?;
    Ok(tape.value(v).clone())
}

pub fn adaptive_field<T: Scalar>(
    seq: &TokenEmbeddingSequence<T>,
    params: &AdaptiveFieldParams<T>,
) -> Result<Tensor<T>> {
    Ok(adaptive_field_with_weights(seq, params)?.0)
}

/// The view together with the per-token softmax weights.
pub fn adaptive_field_with_weights<T: Scalar>(
    seq: &TokenEmbeddingSequence<T>,
    params: &AdaptiveFieldParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    params.check(seq.len(), seq.width())?;
    let mut tape = Tape::new();
    let e = seq_graph(&mut tape, seq)?;
    let w1 = tape.constant(params.w1.clone())?;
    let w = tape.constant(params.w.clone())?;
    let (v, a) = adaptive_field_graph(&mut tape, e, seq.mask(), seq.width(), w1, w)?;
    Ok((tape.value(v).clone(), tape.value(a).clone()))
}

pub fn aggregate_views<T: Scalar>(
    v1: &Tensor<T>,
    v2: &Tensor<T>,
    gate: &AggregationGateParams<T>,
) -> Result<Tensor<T>> {
    Ok(aggregate_with_gate(v1, v2, gate)?.0)
}

/// Aggregate and gate values `(v, β)`.
pub fn aggregate_with_gate<T: Scalar>(
    v1: &Tensor<T>,
    v2: &Tensor<T>,
    gate: &AggregationGateParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let a = tape.constant(v1.clone())?;
    let b = tape.constant(v2.clone())?;
    let w2 = tape.constant(gate.w2.clone())?;
    let w3 = tape.constant(gate.w3.clone())?;
    let (v, beta) = aggregate_graph(&mut tape, a, b, w2, w3)?;
    Ok((tape.value(v).clone(), tape.value(beta).clone()))
}

/// Both views of one sequence and their aggregate.
pub fn build_views<T: Scalar>(
    seq: &TokenEmbeddingSequence<T>,
    field: &AdaptiveFieldParams<T>,
    gate: &AggregationGateParams<T>,
) -> Result<ViewPair<T>> {
    let v1 = global_pool(seq)?;
    let v2 = adaptive_field(seq, field)?;
    let v = aggregate_views(&v1, &v2, gate)?;
    Ok(ViewPair { v1, v2, v })
}
