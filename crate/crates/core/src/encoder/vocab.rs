use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::encoder::sample::{normalize, DialogueSample, Speaker};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;

const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<sep>", "user:", "agent:"];

/// Dense token ids. Reserved tokens come first: padding, unknown, turn
/// separator, then the two speaker tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Token ids and mask for one sample, padded or truncated to `n` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
}

impl EncodedSequence {
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

impl Vocabulary {
    /// Builds from every word in the given samples, minimum frequency 1,
    /// ordered by frequency (descending) then lexicographically.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a DialogueSample>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in samples {
            let turns = s.history.iter().map(|t| t.text.as_str());
            for text in turns.chain(std::iter::once(s.utterance.as_str())) {
                for w in normalize(text) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("vocabulary must start with reserved tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// FNV-1a over the token list, used to match checkpoints to vocabularies.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Concatenates history (oldest first) and the current utterance, each
    /// turn prefixed by its speaker tag and separated by `<sep>`. Sequences
    /// longer than `n` lose their oldest tokens; shorter ones are padded at
    /// the front, so the current utterance always ends at slot `n − 1`.
    pub fn encode(&self, sample: &DialogueSample, n: usize) -> Result<EncodedSequence> {
        if n == 0 {
            return Err(Error::invalid("max sequence length must be at least 1"));
        }
        let current = normalize(&sample.utterance);
        if current.is_empty() {
            return Err(Error::invalid(format!(
                "sample {}: utterance is empty after normalization",
                sample.id
            )));
        }
        let mut ids = Vec::new();
        for turn in &sample.history {
            let words = normalize(&turn.text);
            if words.is_empty() {
                continue;
            }
            ids.push(self.id(turn.speaker.tag()));
            ids.extend(words.iter().map(|w| self.id(w)));
            ids.push(SEP);
        }
        ids.push(self.id(Speaker::User.tag()));
        ids.extend(current.iter().map(|w| self.id(w)));
        if ids.len() > n {
            ids.drain(..ids.len() - n);
        }
        let pad = n - ids.len();
        let mut padded = vec![PAD; pad];
        padded.append(&mut ids);
        let ids = padded;
        let mask = (0..n).map(|i| i >= pad).collect();
        Ok(EncodedSequence { ids, mask })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
