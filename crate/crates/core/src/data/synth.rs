//! Procedural multi-turn dialogues for desk-scale experiments.
//!
//! Every intent owns a set of keywords. The current utterance carries one or
//! two keywords of its intent plus shared filler words. History turns are
//! either on-topic (filler plus intent keywords; OOD dialogues borrow the
//! keywords of an IND intent) or noise turns drawn from a separate chit-chat
//! vocabulary. OOD intents pick their keywords from one shared out-of-domain
//! word pool. Test OOD samples come from OOD intents that never appear in the
//! unlabeled pool, so they are new combinations of out-of-domain words.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::data::corpus::{Corpus, CorpusEntry, IntentInventory, SplitTag};
use crate::data::splits::SplitBundle;
use crate::encoder::{DialogueSample, Turn};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Number of IND intents.
    pub k: usize,
    /// OOD intents feeding the unlabeled pool.
    pub ood_intents: usize,
    /// OOD intents reserved for the test split.
    pub heldout_ood_intents: usize,
    pub keywords_per_intent: usize,
    /// Size of the out-of-domain word pool shared by all OOD intents.
    pub ood_pool_words: usize,
    pub filler_words: usize,
    pub noise_words: usize,
    /// Expected number of on-topic history turns per sample.
    pub mean_topic_turns: f64,
    /// Noise turns injected into every history, on top of the on-topic ones.
    pub noise_turns: usize,
    /// Probability that an on-topic user turn of an IND dialogue mentions a
    /// different IND intent.
    pub ind_drift: f64,
    pub train: usize,
    pub unlabeled: usize,
    pub valid: usize,
    pub test: usize,
    pub unlabeled_ood_fraction: f64,
    pub test_ood_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k: 5,
            ood_intents: 4,
            heldout_ood_intents: 3,
            keywords_per_intent: 6,
            ood_pool_words: 12,
            filler_words: 30,
            noise_words: 80,
            mean_topic_turns: 5.0,
            noise_turns: 1,
            ind_drift: 0.3,
            train: 2000,
            unlabeled: 1000,
            valid: 500,
            test: 500,
            unlabeled_ood_fraction: 0.3,
            test_ood_fraction: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        frac("unlabeled_ood_fraction", self.unlabeled_ood_fraction)?;
        frac("test_ood_fraction", self.test_ood_fraction)?;
        frac("ind_drift", self.ind_drift)?;
        if self.k < 2 {
            return Err(Error::Config("synthetic corpus needs k >= 2 IND intents".into()));
        }
        if self.keywords_per_intent < 2 || self.filler_words < 2 || self.noise_words < 2 {
            return Err(Error::Config("each word list needs at least 2 words".into()));
        }
        if self.ood_pool_words < self.keywords_per_intent {
            return Err(Error::Config(format!(
                "ood_pool_words = {} is smaller than keywords_per_intent = {}",
                self.ood_pool_words, self.keywords_per_intent
            )));
        }
        if self.unlabeled_ood_fraction > 0.0 && self.ood_intents == 0 {
            return Err(Error::Config("unlabeled OOD requested but ood_intents = 0".into()));
        }
        if self.test_ood_fraction > 0.0 && self.heldout_ood_intents == 0 {
            return Err(Error::Config("test OOD requested but heldout_ood_intents = 0".into()));
        }
        if !(0.0..=1000.0).contains(&self.mean_topic_turns) {
            return Err(Error::Config(format!(
                "mean_topic_turns = {} must lie in [0, 1000]",
                self.mean_topic_turns
            )));
        }
        if self.train == 0 {
            return Err(Error::Config("train size must be positive".into()));
        }
        Ok(())
    }
}

/// Word lists of one generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub ind: Vec<Vec<String>>,
    pub ood: Vec<Vec<String>>,
    pub heldout: Vec<Vec<String>>,
    pub filler: Vec<String>,
    pub noise: Vec<String>,
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];

impl Lexicon {
    pub fn new(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut used = BTreeSet::new();
        let mut word = |rng: &mut ChaCha8Rng| loop {
            let syllables = rng.random_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
                .collect();
            if used.insert(w.clone()) {
                return w;
            }
        };
        let mut group = |n: usize, per: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<String>> {
            (0..n).map(|_| (0..per).map(|_| word(rng)).collect()).collect()
        };
        let ind = group(spec.k, spec.keywords_per_intent, rng);
        let pool = group(1, spec.ood_pool_words, rng).pop().unwrap();
        // Every OOD intent gets a distinct keyword set, so held-out intents
        // are new templates even though their words overlap with D_U.
        let mut taken = BTreeSet::new();
        let mut subset = |rng: &mut ChaCha8Rng| -> Vec<String> {
            loop {
                let mut set: Vec<String> = pool.choose_multiple(rng, spec.keywords_per_intent).cloned().collect();
                set.sort();
                if taken.insert(set.clone()) {
                    return set;
                }
            }
        };
        let ood = (0..spec.ood_intents).map(|_| subset(rng)).collect();
        let heldout = (0..spec.heldout_ood_intents).map(|_| subset(rng)).collect();
        let filler = group(1, spec.filler_words, rng).pop().unwrap();
        let noise = group(1, spec.noise_words, rng).pop().unwrap();
        Lexicon {
            ind,
            ood,
            heldout,
            filler,
            noise,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Ind(usize),
    Ood(usize),
    Heldout(usize),
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    lex: &'a Lexicon,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn pick(&mut self, words: &[String], n: usize) -> Vec<String> {
        (0..n).map(|_| words.choose(&mut self.rng).unwrap().clone()).collect()
    }

    fn sentence(&mut self, keywords: &[String], n_key: usize, filler: (usize, usize)) -> String {
        let nf = self.rng.random_range(filler.0..=filler.1);
        let mut words = self.pick(keywords, n_key);
        let lex = self.lex;
        words.extend(self.pick(&lex.filler, nf));
        words.shuffle(&mut self.rng);
        words.join(" ")
    }

    fn keywords(&self, kind: Kind) -> &[String] {
        match kind {
            Kind::Ind(i) => &self.lex.ind[i],
            Kind::Ood(j) => &self.lex.ood[j],
            Kind::Heldout(j) => &self.lex.heldout[j],
        }
    }

    fn context_turns(&mut self) -> usize {
        let extra = (2.0 * self.spec.mean_topic_turns).round() as u64;
        let drawn = if extra == 0 {
            0
        } else {
            Binomial::new(extra, 0.5).expect("valid binomial").sample(&mut self.rng) as usize
        };
        self.spec.noise_turns + drawn
    }

    fn sample(&mut self, id_stem: String, kind: Kind) -> DialogueSample {
        let lex = self.lex;
        let k = self.spec.k;
        let t = self.context_turns();
        let mut positions: Vec<usize> = (0..t).collect();
        positions.shuffle(&mut self.rng);
        let noise: BTreeSet<usize> = positions[..self.spec.noise_turns].iter().copied().collect();
        // OOD dialogues talk about an IND topic before the out-of-domain request.
        let borrowed = self.rng.random_range(0..k);
        let mut history = Vec::with_capacity(t);
        for pos in 0..t {
            let user = (t - pos) % 2 == 0;
            let text = if noise.contains(&pos) {
                let n = self.rng.random_range(3..=6);
                self.pick(&lex.noise, n).join(" ")
            } else if !user {
                self.sentence(&[], 0, (3, 5))
            } else {
                let topic = match kind {
                    Kind::Ind(i) if self.rng.random::<f64>() >= self.spec.ind_drift => i,
                    Kind::Ind(_) => self.rng.random_range(0..k),
                    Kind::Ood(_) | Kind::Heldout(_) => borrowed,
                };
                self.sentence(&lex.ind[topic], 1, (2, 4))
            };
            history.push(if user { Turn::user(text) } else { Turn::agent(text) });
        }
        let n_key = self.rng.random_range(1..=2);
        let kw = self.keywords(kind).to_vec();
        let utterance = self.sentence(&kw, n_key, (1, 3));
        let label = match kind {
            Kind::Ind(i) => i,
            _ => k,
        };
        DialogueSample::new(format!("{id_stem}#{t}"), history, utterance, Some(label))
    }

    fn split(&mut self, tag: SplitTag, n: usize, ood_fraction: f64, ood: Option<fn(usize) -> Kind>, pool: usize) -> Vec<DialogueSample> {
        let n_ood = match ood {
            Some(_) => (ood_fraction * n as f64).round() as usize,
            None => 0,
        };
        let mut kinds: Vec<Kind> = (0..n - n_ood).map(|i| Kind::Ind(i % self.spec.k)).collect();
        if let Some(make) = ood {
            kinds.extend((0..n_ood).map(|i| make(i % pool)));
        }
        kinds.shuffle(&mut self.rng);
        kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| self.sample(format!("syn-{tag}-{i:05}"), kind))
            .collect()
    }
}

/// Generates a corpus whose entries carry split tags, and the matching bundle.
/// A pure function of `spec` (including its seed).
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Corpus, SplitBundle, Lexicon)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lex = Lexicon::new(spec, &mut rng);
    let mut g = Generator {
        spec,
        lex: &lex,
        rng,
    };
    let train = g.split(SplitTag::Train, spec.train, 0.0, None, 1);
    let unlabeled = g.split(
        SplitTag::Unlabeled,
        spec.unlabeled,
        spec.unlabeled_ood_fraction,
        Some(Kind::Ood),
        spec.ood_intents,
    );
    let valid = g.split(SplitTag::Valid, spec.valid, 0.0, None, 1);
    let test = g.split(
        SplitTag::Test,
        spec.test,
        spec.test_ood_fraction,
        Some(Kind::Heldout),
        spec.heldout_ood_intents,
    );
    let intents = IntentInventory::new((0..spec.k).map(|i| format!("intent{i:02}")).collect())?;
    let mut entries = Vec::new();
    for (tag, part) in [
        (SplitTag::Train, &train),
        (SplitTag::Unlabeled, &unlabeled),
        (SplitTag::Valid, &valid),
        (SplitTag::Test, &test),
    ] {
        entries.extend(part.iter().map(|s| CorpusEntry {
            sample: s.clone(),
            split: Some(tag),
        }));
    }
    let corpus = Corpus::new(entries, intents.clone(), format!("synthetic seed={}", spec.seed))?;
    let bundle = SplitBundle::new(intents, train, unlabeled, valid, test)?;
    Ok((corpus, bundle, lex))
}
