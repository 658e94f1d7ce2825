//! The two training stages, OOD mining and classification.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{IntentInventory, SplitBundle, UnlabeledPool};
use crate::diffcore::{standard_normal, Adam, Tape, Tensor};
use crate::encoder::{DialogueSample, EncodedSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::objective::{combined_loss_graph, cross_entropy_graph, derangement, encode_view_graph, ib_graph, LossBreakdown};
use crate::pipeline::config::TrainingConfig;
use crate::pipeline::model::{Batch, CaroModel};

/// A synthetic OOD point in representation space.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOodSample {
    pub representation: Vec<f64>,
    /// Source classes `(a, b)`, always distinct.
    pub classes: (usize, usize),
    /// Weight `c` of the first source.
    pub coefficient: f64,
}

/// Draws `count` mixes `c · r_a + (1 − c) · r_b` of representations from two
/// different classes, with `c ~ Uniform(lo, hi)`.
pub fn synthesize_pseudo_ood<R: Rng + ?Sized>(
    representations: &[Vec<f64>],
    labels: &[usize],
    count: usize,
    bounds: (f64, f64),
    rng: &mut R,
) -> Result<Vec<PseudoOodSample>> {
    if representations.len() != labels.len() {
        return Err(Error::invalid("one label per representation required"));
    }
    let (lo, hi) = bounds;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!("mixing bounds ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let present: Vec<usize> = (0..classes).filter(|&c| !by_class[c].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::invalid("pseudo-OOD synthesis needs at least two IND classes"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ia = rng.random_range(0..present.len());
        let mut ib = rng.random_range(0..present.len() - 1);
        if ib >= ia {
            ib += 1;
        }
        let (ca, cb) = (present[ia], present[ib]);
        let ra = &representations[*by_class[ca].choose(rng).unwrap()];
        let rb = &representations[*by_class[cb].choose(rng).unwrap()];
        let c = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let representation = ra.iter().zip(rb).map(|(a, b)| c * a + (1.0 - c) * b).collect();
        out.push(PseudoOodSample {
            representation,
            classes: (ca, cb),
            coefficient: c,
        });
    }
    Ok(out)
}

/// Index of the largest score; exact ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `k` means rejected as OOD.
    pub label: usize,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        Prediction {
            label: argmax(logits),
            probs: softmax(logits),
        }
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

pub fn classify(model: &CaroModel, samples: &[DialogueSample]) -> Result<Vec<Prediction>> {
    let enc = model.encode(samples)?;
    classify_encoded(model, &enc)
}

fn classify_encoded(model: &CaroModel, enc: &[EncodedSequence]) -> Result<Vec<Prediction>> {
    let rows: Vec<usize> = (0..enc.len()).collect();
    let out = model.forward_eval(enc, &rows)?;
    Ok(out.logits.iter().map(|l| Prediction::from_logits(l)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedSample {
    /// Position in the unlabeled pool.
    pub index: usize,
    pub sample_id: String,
    pub predicted: usize,
    pub confidence: f64,
}

/// `D_O`: pool members predicted as OOD.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinedPool {
    pub members: Vec<MinedSample>,
}

impl MinedPool {
    /// Selects the rows whose argmax is the OOD class `k`.
    pub fn from_logits(ids: &[String], logits: &[Vec<f64>], k: usize) -> Self {
        let members = ids
            .iter()
            .zip(logits)
            .enumerate()
            .filter_map(|(index, (id, l))| {
                let p = Prediction::from_logits(l);
                (p.label == k).then(|| MinedSample {
                    index,
                    sample_id: id.clone(),
                    predicted: p.label,
                    confidence: p.max_prob(),
                })
            })
            .collect();
        MinedPool { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `|D_O|` then one `id<TAB>confidence` line per member.
    pub fn manifest(&self) -> String {
        let mut s = format!("mined\t{}\n", self.members.len());
        for m in &self.members {
            s.push_str(&format!("{}\t{}\n", m.sample_id, m.confidence));
        }
        s
    }
}

pub fn mine_ood(model: &CaroModel, pool: &UnlabeledPool) -> Result<MinedPool> {
    if pool.is_empty() {
        return Ok(MinedPool::default());
    }
    let enc = model.encode(pool.samples())?;
    let rows: Vec<usize> = (0..enc.len()).collect();
    let out = model.forward_eval(&enc, &rows)?;
    let ids: Vec<String> = pool.samples().iter().map(|s| s.id.clone()).collect();
    Ok(MinedPool::from_logits(&ids, &out.logits, model.intents.k()))
}

/// Fraction of `samples` whose argmax equals their label.
pub fn accuracy(model: &CaroModel, samples: &[DialogueSample]) -> Result<Option<f64>> {
    Ok(validation_score(model, samples)?.map(|v| v.accuracy))
}

/// Accuracy and mean cross-entropy over labeled samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationScore {
    pub accuracy: f64,
    pub loss: f64,
}

impl ValidationScore {
    /// Higher accuracy wins; equal accuracy falls back to lower loss, so a
    /// saturated accuracy does not freeze progress tracking.
    pub fn improves_on(&self, best: &ValidationScore) -> bool {
        self.accuracy > best.accuracy || (self.accuracy == best.accuracy && self.loss < best.loss)
    }
}

pub fn validation_score(model: &CaroModel, samples: &[DialogueSample]) -> Result<Option<ValidationScore>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let preds = classify(model, samples)?;
    let mut hits = 0;
    let mut loss = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        let y = s.label.ok_or_else(|| Error::invalid(format!("validation sample {} is unlabeled", s.id)))?;
        hits += usize::from(p.label == y);
        loss -= p.probs[y].max(f64::MIN_POSITIVE).ln();
    }
    let n = samples.len() as f64;
    Ok(Some(ValidationScore {
        accuracy: hits as f64 / n,
        loss: loss / n,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub stage: u8,
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// Mean total loss per epoch, Stage 1 then Stage 2.
    pub epoch_loss: Vec<(u8, f64)>,
    pub stage1_valid_acc: Vec<f64>,
    pub stage2_valid_acc: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(LossBreakdown::TSV_HEADER);
        s.push('\n');
        for r in &self.steps {
            s.push_str(&r.loss.tsv_row(r.step, r.stage));
            s.push('\n');
        }
        s
    }
}

/// Everything the training stages may read: no hidden labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub intents: &'a IntentInventory,
    pub train: &'a [DialogueSample],
    pub unlabeled: &'a UnlabeledPool,
    pub valid: &'a [DialogueSample],
}

impl<'a> TrainingData<'a> {
    pub fn from_bundle(b: &'a SplitBundle) -> Self {
        TrainingData {
            intents: &b.intents,
            train: &b.train,
            unlabeled: &b.unlabeled,
            valid: &b.valid,
        }
    }
}

pub struct TrainOutcome {
    pub model: CaroModel,
    pub log: TrainLog,
    pub mined: MinedPool,
}

/// Vocabulary over every text training may see.
pub fn training_vocabulary(data: &TrainingData<'_>, config: &TrainingConfig) -> Vocabulary {
    let unlabeled: &[DialogueSample] = if config.ablations.no_unlabeled {
        &[]
    } else {
        data.unlabeled.samples()
    };
    Vocabulary::build(data.train.iter().chain(data.valid).chain(unlabeled))
}

struct Trainer {
    model: CaroModel,
    opt: Adam<f64>,
    rng: ChaCha8Rng,
    log: TrainLog,
    step: usize,
}

enum Row {
    Real(usize),
    Pseudo(usize),
}

impl Trainer {
    fn apply(&mut self, tape: &Tape<f64>, loss: crate::diffcore::Var) -> Result<()> {
        let grads = tape.backward(loss)?;
        self.model.store.accumulate(tape, &grads);
        self.opt.step(&mut self.model.store)?;
        if !self.model.store.all_finite() {
            return Err(Error::NonFinite("parameters after optimizer step"));
        }
        Ok(())
    }

    fn stage1(&mut self, train: &[DialogueSample], enc: &[EncodedSequence], valid: &[DialogueSample]) -> Result<()> {
        let cfg = self.model.config.clone();
        let k = self.model.intents.k();
        let labels: Vec<usize> = train.iter().map(|s| s.label.expect("D_I is labeled")).collect();
        let count = cfg
            .pseudo_ood_count
            .unwrap_or_else(|| (train.len() as f64 / k as f64).round() as usize);
        let mut pseudo: Vec<PseudoOodSample> = Vec::new();
        for epoch in 0..cfg.stage1_epochs {
            if count > 0 && (epoch == 0 || cfg.refresh_pseudo_ood) {
                let rows: Vec<usize> = (0..enc.len()).collect();
                let reps = self.model.forward_eval(enc, &rows)?.v;
                pseudo = synthesize_pseudo_ood(&reps, &labels, count, (cfg.mix_lo, cfg.mix_hi), &mut self.rng)?;
            }
            let mut order: Vec<Row> = (0..train.len()).map(Row::Real).chain((0..pseudo.len()).map(Row::Pseudo)).collect();
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let real: Vec<usize> = chunk.iter().filter_map(|r| if let Row::Real(i) = r { Some(*i) } else { None }).collect();
                let fake: Vec<usize> = chunk.iter().filter_map(|r| if let Row::Pseudo(i) = r { Some(*i) } else { None }).collect();
                let mut tape = Tape::new();
                let vars = self.model.bind(&mut tape, true);
                let mut batch_labels: Vec<usize> = real.iter().map(|&i| labels[i]).collect();
                let mut v = None;
                if !real.is_empty() {
                    let batch = Batch::gather(enc, &real);
                    let e = self.model.encode_graph(&mut tape, &vars, &batch, Some(&mut self.rng))?;
                    v = Some(e.v);
                }
                if !fake.is_empty() {
                    let rows: Vec<Vec<f64>> = fake.iter().map(|&j| pseudo[j].representation.clone()).collect();
                    let p = tape.constant(Tensor::from_rows(&rows)?)?;
                    batch_labels.extend(std::iter::repeat_n(k, fake.len()));
                    v = Some(match v {
                        Some(r) => tape.concat_rows(r, p)?,
                        None => p,
                    });
                }
                let v = v.expect("chunks are non-empty");
                let logits = self.model.head_graph(&mut tape, &vars, v)?;
                let ce = cross_entropy_graph(&mut tape, logits, &batch_labels)?;
                let (loss, breakdown) = combined_loss_graph(&mut tape, Some(ce), None, 0.0)?;
                self.apply(&tape, loss)?;
                total += breakdown.total;
                batches += 1;
                self.step += 1;
                self.log.steps.push(StepRecord {
                    stage: 1,
                    step: self.step,
                    loss: breakdown,
                });
            }
            self.log.epoch_loss.push((1, total / batches.max(1) as f64));
            if let Some(acc) = accuracy(&self.model, valid)? {
                self.log.stage1_valid_acc.push(acc);
            }
        }
        Ok(())
    }

    fn stage2(
        &mut self,
        ce_samples: &[DialogueSample],
        ce_enc: &[EncodedSequence],
        pool_enc: &[EncodedSequence],
        valid: &[DialogueSample],
    ) -> Result<()> {
        let cfg = self.model.config.clone();
        let lambda = cfg.effective_lambda();
        let use_ib = lambda > 0.0 && pool_enc.len() >= 2;
        let labels: Vec<usize> = ce_samples.iter().map(|s| s.label.expect("CE pool is labeled")).collect();
        let mut ib_order: Vec<usize> = (0..pool_enc.len()).collect();
        let mut ib_cursor = ib_order.len();
        let ib_batch = cfg.batch_size.min(pool_enc.len());
        let mut best: Option<ValidationScore> = None;
        let mut stale = 0;
        for _ in 0..cfg.stage2_epochs {
            let mut order: Vec<usize> = (0..ce_samples.len()).collect();
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let mut tape = Tape::new();
                let vars = self.model.bind(&mut tape, true);
                let batch = Batch::gather(ce_enc, chunk);
                let e = self.model.encode_graph(&mut tape, &vars, &batch, Some(&mut self.rng))?;
                let logits = self.model.head_graph(&mut tape, &vars, e.v)?;
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let ce = cross_entropy_graph(&mut tape, logits, &batch_labels)?;
                let ib = if use_ib {
                    if ib_cursor + ib_batch > ib_order.len() {
                        ib_order.shuffle(&mut self.rng);
                        ib_cursor = 0;
                    }
                    let rows = &ib_order[ib_cursor..ib_cursor + ib_batch];
                    ib_cursor += ib_batch;
                    let ub = Batch::gather(pool_enc, rows);
                    let u = self.model.encode_graph(&mut tape, &vars, &ub, Some(&mut self.rng))?;
                    let d = cfg.proj_dim;
                    let eps1 = standard_normal(ib_batch, d, &mut self.rng);
                    let eps2 = standard_normal(ib_batch, d, &mut self.rng);
                    let c1 = encode_view_graph(&mut tape, u.v1, &vars.gauss, eps1)?;
                    let c2 = encode_view_graph(&mut tape, u.v2, &vars.gauss, eps2)?;
                    let perm = derangement(ib_batch, &mut self.rng)?;
                    Some(ib_graph(&mut tape, &c1, &c2, &vars.critic, &perm)?)
                } else {
                    None
                };
                let (loss, breakdown) = combined_loss_graph(&mut tape, Some(ce), ib.as_ref(), lambda)?;
                self.apply(&tape, loss)?;
                total += breakdown.total;
                batches += 1;
                self.step += 1;
                self.log.steps.push(StepRecord {
                    stage: 2,
                    step: self.step,
                    loss: breakdown,
                });
            }
            self.log.epoch_loss.push((2, total / batches.max(1) as f64));
            if let Some(score) = validation_score(&self.model, valid)? {
                self.log.stage2_valid_acc.push(score.accuracy);
                if best.is_none_or(|b| score.improves_on(&b)) {
                    best = Some(score);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        self.log.stopped_early = true;
                        break;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs Stage 1, mining and Stage 2 as configured.
pub fn train_caro(config: &TrainingConfig, data: TrainingData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("D_I is empty"));
    }
    let ood = data.intents.ood_label();
    if let Some(s) = data.train.iter().find(|s| s.label.is_none_or(|l| l >= ood)) {
        return Err(Error::invalid(format!("D_I sample {} is not labeled IND", s.id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = training_vocabulary(&data, config);
    let model = CaroModel::new(config.clone(), vocab, data.intents.clone(), &mut rng)?;
    let opt = Adam::new(&model.store);
    let mut t = Trainer {
        model,
        opt,
        rng,
        log: TrainLog::default(),
        step: 0,
    };
    let train_enc = t.model.encode(data.train)?;
    t.stage1(data.train, &train_enc, data.valid)?;
    log::info!(
        "stage 1 done: {} steps, valid acc {:?}",
        t.step,
        t.log.stage1_valid_acc.last()
    );
    if config.ablations.no_unlabeled {
        return Ok(TrainOutcome {
            model: t.model,
            log: t.log,
            mined: MinedPool::default(),
        });
    }
    let mined = mine_ood(&t.model, data.unlabeled)?;
    log::info!("mined {} of {} unlabeled samples as OOD", mined.len(), data.unlabeled.len());
    let pool = data.unlabeled.samples();
    let pool_enc = t.model.encode(pool)?;
    let mut ce_samples = data.train.to_vec();
    let mut ce_enc = train_enc;
    for m in &mined.members {
        let mut s = pool[m.index].clone();
        s.label = Some(ood);
        ce_samples.push(s);
        ce_enc.push(pool_enc[m.index].clone());
    }
    t.stage2(&ce_samples, &ce_enc, &pool_enc, data.valid)?;
    log::info!("stage 2 done: {} steps, early stop {}", t.step, t.log.stopped_early);
    Ok(TrainOutcome {
        model: t.model,
        log: t.log,
        mined,
    })
}
