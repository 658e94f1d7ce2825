//! The full Caro network: embeddings, both views, the gate, the classifier
//! and the bottleneck heads, stored in one two-group parameter store.

use rand::Rng;

use crate::data::IntentInventory;
use crate::diffcore::{DenseIds, DenseVars, GroupId, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{
    adaptive_field_graph, aggregate_graph, global_pool_graph, mean_aggregate_graph, DialogueSample, EncodedSequence,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::objective::{CriticIds, CriticVars, GaussianHeadIds, GaussianHeadVars};
use crate::pipeline::config::TrainingConfig;

/// Scale of the uniform embedding initialization.
pub const EMBED_INIT: f64 = 0.1;

/// Slope of the classifier's leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelIds {
    pub embedding: ParamId,
    pub field_w1: ParamId,
    pub field_w: ParamId,
    pub gate_w2: ParamId,
    pub gate_w3: ParamId,
    pub classifier: [DenseIds; 2],
    pub gauss: GaussianHeadIds,
    pub critic: CriticIds,
}

/// Graph handles of every parameter for one tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embedding: Var,
    pub field_w1: Var,
    pub field_w: Var,
    pub gate_w2: Var,
    pub gate_w3: Var,
    pub classifier: [DenseVars; 2],
    pub gauss: GaussianHeadVars,
    pub critic: CriticVars,
}

/// A batch of encoded samples: `rows · n` ids and mask flags.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub rows: usize,
}

impl Batch {
    pub fn gather(encoded: &[EncodedSequence], rows: &[usize]) -> Self {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for &r in rows {
            ids.extend_from_slice(&encoded[r].ids);
            mask.extend_from_slice(&encoded[r].mask);
        }
        Batch {
            ids,
            mask,
            rows: rows.len(),
        }
    }
}

/// Views and aggregate of one batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub v1: Var,
    pub v2: Var,
    pub v: Var,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
}

pub struct CaroModel {
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub intents: IntentInventory,
    pub store: ParamStore<f64>,
    pub ids: ModelIds,
    pub encoder_group: GroupId,
    pub head_group: GroupId,
}

impl CaroModel {
    pub fn new<R: Rng + ?Sized>(
        config: TrainingConfig,
        vocab: Vocabulary,
        intents: IntentInventory,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (n, m) = (config.max_len, config.embed_dim);
        let mut store = ParamStore::new();
        let enc = store.add_group("encoder", config.encoder_lr, config.weight_decay)?;
        let heads = store.add_group("heads", config.head_lr, 0.0)?;
        let embedding = store.add_uniform(enc, "embedding", vocab.len(), m, EMBED_INIT, rng);
        let field_w1 = store.add_dense(enc, "field.w1", config.r1, n * m, rng);
        let field_w = store.add_dense(enc, "field.w", n, config.r1, rng);
        let gate_w2 = store.add_dense(heads, "gate.w2", config.r2, m, rng);
        let gate_w3 = store.add_dense(heads, "gate.w3", m, config.r2, rng);
        let classifier = [
            DenseIds::new(&mut store, heads, "cls0", config.classifier_hidden, m, true, rng),
            DenseIds::new(&mut store, heads, "cls1", intents.num_classes(), config.classifier_hidden, true, rng),
        ];
        let gauss = GaussianHeadIds::new(&mut store, heads, m, config.gauss_hidden, config.proj_dim, rng);
        let critic = CriticIds::new(&mut store, heads, "critic", 2 * config.proj_dim, &[config.critic_hidden], rng);
        Ok(CaroModel {
            config,
            vocab,
            intents,
            store,
            ids: ModelIds {
                embedding,
                field_w1,
                field_w,
                gate_w2,
                gate_w3,
                classifier,
                gauss,
                critic,
            },
            encoder_group: enc,
            head_group: heads,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.intents.num_classes()
    }

    pub fn encode(&self, samples: &[DialogueSample]) -> Result<Vec<EncodedSequence>> {
        let cut = self.config.max_context_turns;
        samples
            .iter()
            .map(|s| match cut {
                Some(t) => self.vocab.encode(&s.truncated(t), self.config.max_len),
                None => self.vocab.encode(s, self.config.max_len),
            })
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape<f64>, trainable: bool) -> ModelVars {
        let s = &self.store;
        let p = |tape: &mut Tape<f64>, id| if trainable { tape.param(s, id) } else { tape.frozen_param(s, id) };
        let ids = &self.ids;
        ModelVars {
            embedding: p(tape, ids.embedding),
            field_w1: p(tape, ids.field_w1),
            field_w: p(tape, ids.field_w),
            gate_w2: p(tape, ids.gate_w2),
            gate_w3: p(tape, ids.gate_w3),
            classifier: [
                ids.classifier[0].bind(tape, s, trainable),
                ids.classifier[1].bind(tape, s, trainable),
            ],
            gauss: ids.gauss.bind(tape, s, trainable),
            critic: ids.critic.bind(tape, s, trainable),
        }
    }

    /// Builds both views and their aggregate. `dropout` supplies the two
    /// perturbation masks of the no-multiview ablation during training.
    pub fn encode_graph<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        vars: &ModelVars,
        batch: &Batch,
        dropout: Option<&mut R>,
    ) -> Result<Encoded> {
        let (n, m) = (self.config.max_len, self.config.embed_dim);
        let emb = tape.embed(vars.embedding, &batch.ids, &batch.mask, n)?;
        let pooled = global_pool_graph(tape, emb, &batch.mask, n, m)?;
        let (v1, v2, alpha) = if self.config.ablations.no_multiview {
            match dropout {
                Some(rng) => {
                    let p = self.config.dropout;
                    let a = dropout_mask(batch.rows, m, p, rng);
                    let b = dropout_mask(batch.rows, m, p, rng);
                    let a = tape.constant(a)?;
                    let b = tape.constant(b)?;
                    (tape.mul(pooled, a)?, tape.mul(pooled, b)?, None)
                }
                None => (pooled, pooled, None),
            }
        } else {
            let (v2, alpha) = adaptive_field_graph(tape, emb, &batch.mask, m, vars.field_w1, vars.field_w)?;
            (pooled, v2, Some(alpha))
        };
        let (v, beta) = if self.config.ablations.no_gate {
            (mean_aggregate_graph(tape, v1, v2)?, None)
        } else {
            let (v, beta) = aggregate_graph(tape, v1, v2, vars.gate_w2, vars.gate_w3)?;
            (v, Some(beta))
        };
        Ok(Encoded { v1, v2, v, alpha, beta })
    }

    /// Two-layer classifier with a leaky ReLU: `b × m → b × (k+1)`.
    pub fn head_graph(&self, tape: &mut Tape<f64>, vars: &ModelVars, v: Var) -> Result<Var> {
        let h = vars.classifier[0].apply(tape, v)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        vars.classifier[1].apply(tape, h)
    }

    /// Evaluation-mode forward over `rows` of `encoded`, in chunks.
    pub fn forward_eval(&self, encoded: &[EncodedSequence], rows: &[usize]) -> Result<EvalOutput> {
        let mut out = EvalOutput::default();
        for chunk in rows.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.bind(&mut tape, false);
            let batch = Batch::gather(encoded, chunk);
            let e = self.encode_graph::<rand_chacha::ChaCha8Rng>(&mut tape, &vars, &batch, None)?;
            let logits = self.head_graph(&mut tape, &vars, e.v)?;
            let rows_of = |t: &Tensor<f64>| (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect::<Vec<_>>();
            out.logits.extend(rows_of(tape.value(logits)));
            out.v.extend(rows_of(tape.value(e.v)));
            out.v1.extend(rows_of(tape.value(e.v1)));
            out.v2.extend(rows_of(tape.value(e.v2)));
            if let Some(a) = e.alpha {
                out.alpha.extend(rows_of(tape.value(a)));
            }
            if let Some(b) = e.beta {
                out.beta.extend(rows_of(tape.value(b)));
            }
        }
        Ok(out)
    }

    /// Aggregated representations `v(x)` of `samples`, one row each.
    pub fn representations(&self, samples: &[DialogueSample]) -> Result<Vec<Vec<f64>>> {
        let enc = self.encode(samples)?;
        let rows: Vec<usize> = (0..enc.len()).collect();
        Ok(self.forward_eval(&enc, &rows)?.v)
    }

    pub fn check_vocab(&self, fingerprint: u64) -> Result<()> {
        if self.vocab.fingerprint() != fingerprint {
            return Err(Error::Checkpoint(format!(
                "vocabulary fingerprint {:016x} does not match {:016x}",
                self.vocab.fingerprint(),
                fingerprint
            )));
        }
        Ok(())
    }
}

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Default)]
pub struct EvalOutput {
    pub logits: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v1: Vec<Vec<f64>>,
    pub v2: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

/// Inverted-dropout mask: entries are `0` with probability `p`, else `1/(1−p)`.
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Tensor<f64> {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}
