//! Training, unlabeled, validation and test partitions.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::corpus::{Corpus, IntentInventory, SplitTag};
use crate::encoder::DialogueSample;
use crate::error::{Error, Result};

/// Share of untagged samples carved out for test, and of `D_I` for
/// validation, when the corpus has no such partition.
pub const CARVE_FRACTION: f64 = 0.10;

/// Unlabeled dialogues as seen by training: every sample has `label: None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnlabeledPool {
    samples: Vec<DialogueSample>,
}

impl UnlabeledPool {
    pub fn samples(&self) -> &[DialogueSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// True labels of the unlabeled pool, aligned with [`UnlabeledPool::samples`].
/// Kept apart from the pool so training code never receives them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HiddenLabels {
    labels: Vec<usize>,
}

impl HiddenLabels {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub intents: IntentInventory,
    /// `D_I`: labeled IND.
    pub train: Vec<DialogueSample>,
    /// `D_U`.
    pub unlabeled: UnlabeledPool,
    pub unlabeled_truth: HiddenLabels,
    /// `D_V`: IND only.
    pub valid: Vec<DialogueSample>,
    /// `D_T`: IND and OOD, labels kept for scoring.
    pub test: Vec<DialogueSample>,
}

fn build_pool(samples: Vec<DialogueSample>) -> (UnlabeledPool, HiddenLabels) {
    let labels = samples.iter().map(|s| s.label.expect("corpus samples are labeled")).collect();
    let samples = samples.iter().map(DialogueSample::unlabeled).collect();
    (UnlabeledPool { samples }, HiddenLabels { labels })
}

impl SplitBundle {
    /// Assembles a bundle, checking the partition invariants.
    pub fn new(
        intents: IntentInventory,
        train: Vec<DialogueSample>,
        unlabeled: Vec<DialogueSample>,
        valid: Vec<DialogueSample>,
        test: Vec<DialogueSample>,
    ) -> Result<Self> {
        let ood = intents.ood_label();
        if let Some(s) = train.iter().chain(&valid).find(|s| s.label.is_none_or(|l| l >= ood)) {
            return Err(Error::invalid(format!("sample {} in D_I/D_V is not labeled IND", s.id)));
        }
        if let Some(s) = test.iter().find(|s| s.label.is_none_or(|l| l > ood)) {
            return Err(Error::invalid(format!("test sample {} has no valid label", s.id)));
        }
        let mut seen = HashMap::new();
        for (tag, part) in [("train", &train), ("unlabeled", &unlabeled), ("valid", &valid), ("test", &test)] {
            for s in part {
                if let Some(prev) = seen.insert(s.id.as_str(), tag) {
                    return Err(Error::invalid(format!("sample {} appears in both {prev} and {tag}", s.id)));
                }
            }
        }
        let (pool, truth) = build_pool(unlabeled);
        Ok(SplitBundle {
            intents,
            train,
            unlabeled: pool,
            unlabeled_truth: truth,
            valid,
            test,
        })
    }

    pub fn k(&self) -> usize {
        self.intents.k()
    }

    /// Drops all but the most recent `max_turns` history turns everywhere;
    /// `0` leaves only the current utterance.
    pub fn truncate_contexts(&self, max_turns: usize) -> SplitBundle {
        let cut = |v: &[DialogueSample]| v.iter().map(|s| s.truncated(max_turns)).collect::<Vec<_>>();
        SplitBundle {
            intents: self.intents.clone(),
            train: cut(&self.train),
            unlabeled: UnlabeledPool {
                samples: cut(&self.unlabeled.samples),
            },
            unlabeled_truth: self.unlabeled_truth.clone(),
            valid: cut(&self.valid),
            test: cut(&self.test),
        }
    }

    /// A copy whose unlabeled pool keeps the first `fraction` of its samples
    /// (floored), in pool order.
    #[must_use = "returns a new bundle"]
    pub fn downsample_unlabeled(&self, fraction: f64) -> Result<SplitBundle> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(format!("unlabeled fraction {fraction} outside [0, 1]")));
        }
        let keep = (fraction * self.unlabeled.len() as f64).floor() as usize;
        let mut out = self.clone();
        out.unlabeled.samples.truncate(keep);
        out.unlabeled_truth.labels.truncate(keep);
        Ok(out)
    }

    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[DialogueSample]| v.iter().map(|s| s.id.clone()).collect();
        let mut parts = BTreeMap::new();
        parts.insert(SplitTag::Train, ids(&self.train));
        parts.insert(SplitTag::Unlabeled, ids(&self.unlabeled.samples));
        parts.insert(SplitTag::Valid, ids(&self.valid));
        parts.insert(SplitTag::Test, ids(&self.test));
        SplitManifest { parts }
    }
}

/// Free function form of [`SplitBundle::truncate_contexts`].
pub fn truncate_contexts(bundle: &SplitBundle, max_turns: usize) -> SplitBundle {
    bundle.truncate_contexts(max_turns)
}

fn carve(pool: &mut Vec<DialogueSample>, fraction: f64) -> Vec<DialogueSample> {
    let n = (fraction * pool.len() as f64).floor() as usize;
    pool.drain(..n).collect()
}

/// Builds `D_I, D_U, D_V, D_T` from a corpus.
///
/// Tagged partitions are kept. Without a test partition, 10% of the untagged
/// samples are carved out first. Then `floor(hidden_fraction · |IND|)` IND
/// training samples and all training OOD samples form `D_U`; a corpus with an
/// explicit `unlabeled` partition uses it instead of hiding IND samples.
/// Without a validation partition, 10% of the remaining `D_I` is carved out.
pub fn make_splits(corpus: &Corpus, hidden_fraction: f64, seed: u64) -> Result<SplitBundle> {
    if !(0.0..1.0).contains(&hidden_fraction) {
        return Err(Error::invalid(format!("hidden IND fraction {hidden_fraction} outside [0, 1)")));
    }
    let ood = corpus.intents().ood_label();
    let mut by_tag: BTreeMap<Option<SplitTag>, Vec<DialogueSample>> = BTreeMap::new();
    for e in corpus.entries() {
        by_tag.entry(e.split).or_default().push(e.sample.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = by_tag.remove(&Some(SplitTag::Train)).unwrap_or_default();
    let mut untagged = by_tag.remove(&None).unwrap_or_default();
    untagged.shuffle(&mut rng);

    let test = match by_tag.remove(&Some(SplitTag::Test)) {
        Some(t) => t,
        None => carve(&mut untagged, CARVE_FRACTION),
    };
    train.append(&mut untagged);

    let (mut ind, train_ood): (Vec<_>, Vec<_>) = train.into_iter().partition(|s| s.label != Some(ood));
    let unlabeled = match by_tag.remove(&Some(SplitTag::Unlabeled)) {
        Some(mut u) => {
            u.extend(train_ood);
            u
        }
        None => {
            ind.shuffle(&mut rng);
            let mut u = carve(&mut ind, hidden_fraction);
            u.extend(train_ood);
            u.shuffle(&mut rng);
            u
        }
    };
    if !unlabeled.iter().any(|s| s.label == Some(ood)) {
        log::warn!("corpus has no training OOD samples; D_U holds IND samples only");
    }

    let valid = match by_tag.remove(&Some(SplitTag::Valid)) {
        Some(v) => {
            let before = v.len();
            let v: Vec<_> = v.into_iter().filter(|s| s.label != Some(ood)).collect();
            if v.len() < before {
                log::warn!("dropped {} OOD samples from the validation partition", before - v.len());
            }
            v
        }
        None => {
            ind.shuffle(&mut rng);
            carve(&mut ind, CARVE_FRACTION)
        }
    };
    if ind.is_empty() {
        return Err(Error::invalid("no labeled IND samples left for training"));
    }
    SplitBundle::new(corpus.intents().clone(), ind, unlabeled, valid, test)
}

/// Sample ids per partition, written as `split<TAB>id` lines.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitManifest {
    pub parts: BTreeMap<SplitTag, Vec<String>>,
}

impl SplitManifest {
    pub fn ids(&self, tag: SplitTag) -> &[String] {
        self.parts.get(&tag).map_or(&[], Vec::as_slice)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (tag, ids) in &self.parts {
            for id in ids {
                writeln!(w, "{tag}\t{id}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut parts: BTreeMap<SplitTag, Vec<String>> = BTreeMap::new();
        for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let (tag, id) = line.split_once('\t').ok_or_else(|| bad("expected split<TAB>id".into()))?;
            let tag = SplitTag::parse(tag).ok_or_else(|| bad(format!("unknown split {tag:?}")))?;
            parts.entry(tag).or_default().push(id.to_string());
        }
        Ok(SplitManifest { parts })
    }

    /// Rebuilds the bundle the manifest was written from.
    pub fn apply(&self, corpus: &Corpus) -> Result<SplitBundle> {
        let index: HashMap<&str, &DialogueSample> = corpus.samples().map(|s| (s.id.as_str(), s)).collect();
        let take = |tag| -> Result<Vec<DialogueSample>> {
            self.ids(tag)
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .map(|s| (*s).clone())
                        .ok_or_else(|| Error::invalid(format!("manifest id {id} not in corpus")))
                })
                .collect()
        };
        SplitBundle::new(
            corpus.intents().clone(),
            take(SplitTag::Train)?,
            take(SplitTag::Unlabeled)?,
            take(SplitTag::Valid)?,
            take(SplitTag::Test)?,
        )
    }
}
