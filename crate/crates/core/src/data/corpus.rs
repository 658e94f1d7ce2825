//! Labeled dialogue corpora and the line-delimited dialogue format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"dialogue_id": "d17", "split": "train",
//!  "turns": [{"speaker": "user", "text": "hi there"},
//!            {"speaker": "agent", "text": "how can I help"},
//!            {"speaker": "user", "text": "book a table", "intent": "book_table"}]}
//! ```
//!
//! Every user turn carrying an `intent` becomes one sample whose history is
//! all earlier turns. `split` is optional (`train`, `unlabeled`, `valid` or
//! `test`).

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{normalize, DialogueSample, Speaker, Turn};
use crate::error::{Error, Result};

/// Intent names that map to the OOD class.
pub const DEFAULT_OOD_INTENTS: [&str; 3] = ["out_of_scope", "custom", "ambiguous"];

/// Generic utterances dropped as samples (they stay in later histories).
pub const DEFAULT_GREETINGS: [&str; 10] = [
    "hi", "hello", "hey", "hi there", "hello there", "thanks", "thank you", "ok", "okay", "bye",
];

/// Name written for OOD samples when a corpus is saved.
pub const OOD_NAME: &str = "out_of_scope";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Unlabeled,
    Valid,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [SplitTag::Train, SplitTag::Unlabeled, SplitTag::Valid, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Unlabeled => "unlabeled",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        SplitTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The `k` IND intent names; label `k` is OOD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentInventory {
    names: Vec<String>,
}

impl IntentInventory {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("intent inventory needs at least one IND intent"));
        }
        let unique: BTreeSet<_> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::invalid("duplicate intent names"));
        }
        Ok(IntentInventory { names })
    }

    /// Number of IND intents.
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.names.len() + 1
    }

    pub fn ood_label(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: usize) -> &str {
        self.names.get(label).map_or(OOD_NAME, String::as_str)
    }

    pub fn label_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_ood(&self, label: usize) -> bool {
        label == self.ood_label()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub sample: DialogueSample,
    pub split: Option<SplitTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    intents: IntentInventory,
    /// Where the corpus came from (a path or a generator description).
    pub provenance: String,
    /// Records skipped as malformed while loading.
    pub skipped: usize,
}

impl Corpus {
    pub fn new(entries: Vec<CorpusEntry>, intents: IntentInventory, provenance: impl Into<String>) -> Result<Self> {
        for e in &entries {
            match e.sample.label {
                Some(l) if l > intents.ood_label() => {
                    return Err(Error::invalid(format!(
                        "sample {}: label {l} outside the {}-class inventory",
                        e.sample.id,
                        intents.num_classes()
                    )))
                }
                None => {
                    return Err(Error::invalid(format!("sample {} has no label", e.sample.id)));
                }
                _ => {}
            }
        }
        Ok(Corpus {
            entries,
            intents,
            provenance: provenance.into(),
            skipped: 0,
        })
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn samples(&self) -> impl Iterator<Item = &DialogueSample> {
        self.entries.iter().map(|e| &e.sample)
    }

    pub fn intents(&self) -> &IntentInventory {
        &self.intents
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-class counts, OOD last.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.intents.num_classes()];
        for s in self.samples() {
            if let Some(l) = s.label {
                c[l] += 1;
            }
        }
        c
    }

    pub fn mean_history_turns(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.samples().map(|s| s.history.len()).sum::<usize>() as f64 / self.len() as f64
    }

    /// Writes one single-sample dialogue record per entry; [`load_star_format`]
    /// reads it back to an identical corpus (up to `provenance`).
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for e in &self.entries {
            let s = &e.sample;
            let (dialogue_id, pos) = s
                .id
                .rsplit_once('#')
                .filter(|(_, p)| p.parse::<usize>().ok() == Some(s.history.len()))
                .ok_or_else(|| {
                    Error::invalid(format!("sample id {} does not follow the `dialogue#turn` scheme", s.id))
                })?;
            debug_assert_eq!(pos.parse::<usize>().ok(), Some(s.history.len()));
            let mut turns: Vec<TurnRecord> = s
                .history
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    intent: None,
                })
                .collect();
            turns.push(TurnRecord {
                speaker: Speaker::User,
                text: s.utterance.clone(),
                intent: s.label.map(|l| self.intents.name(l).to_string()),
            });
            let rec = DialogueRecord {
                dialogue_id: dialogue_id.to_string(),
                turns,
                split: e.split.map(|t| t.as_str().to_string()),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueRecord {
    dialogue_id: String,
    turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub ood_intents: Vec<String>,
    pub greetings: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            ood_intents: DEFAULT_OOD_INTENTS.iter().map(|s| s.to_string()).collect(),
            greetings: DEFAULT_GREETINGS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

struct Pending {
    sample: DialogueSample,
    intent: String,
    split: Option<SplitTag>,
}

fn parse_record(line: &str, opts: &LoadOptions, greetings: &BTreeSet<Vec<String>>) -> std::result::Result<Vec<Pending>, String> {
    let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.dialogue_id.trim().is_empty() {
        return Err("empty dialogue_id".into());
    }
    if rec.turns.is_empty() {
        return Err("dialogue has no turns".into());
    }
    let split = match &rec.split {
        None => None,
        Some(s) => Some(SplitTag::parse(s).ok_or_else(|| format!("unknown split {s:?}"))?),
    };
    let mut out = Vec::new();
    let mut history = Vec::new();
    for (i, t) in rec.turns.iter().enumerate() {
        if let Some(intent) = &t.intent {
            if t.speaker != Speaker::User {
                return Err(format!("turn {i}: intent on an agent turn"));
            }
            let words = normalize(&t.text);
            if words.is_empty() {
                return Err(format!("turn {i}: labeled utterance has no words"));
            }
            let intent = intent.trim();
            if intent.is_empty() {
                return Err(format!("turn {i}: empty intent"));
            }
            let is_greeting = greetings.contains(&words);
            if !is_greeting {
                let name = if opts.ood_intents.iter().any(|o| o == intent) {
                    OOD_NAME.to_string()
                } else {
                    intent.to_string()
                };
                out.push(Pending {
                    sample: DialogueSample::new(format!("{}#{i}", rec.dialogue_id), history.clone(), t.text.clone(), None),
                    intent: name,
                    split,
                });
            }
        }
        history.push(Turn {
            speaker: t.speaker,
            text: t.text.clone(),
        });
    }
    Ok(out)
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::invalid(format!("{}: no .jsonl files", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Loads a file or a directory of `.jsonl` files. IND intents are indexed in
/// lexicographic order of their names.
pub fn load_star_format(path: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let greetings: BTreeSet<Vec<String>> = opts.greetings.iter().map(|g| normalize(g)).collect();
    let mut pending = Vec::new();
    let mut skipped = 0;
    for file in corpus_files(path)? {
        let reader = BufReader::new(fs::File::open(&file)?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(&line, opts, &greetings) {
                Ok(mut p) => pending.append(&mut p),
                Err(msg) => {
                    log::warn!("{}:{}: skipping malformed record: {msg}", file.display(), n + 1);
                    skipped += 1;
                }
            }
        }
    }
    let names: BTreeSet<String> = pending
        .iter()
        .filter(|p| p.intent != OOD_NAME)
        .map(|p| p.intent.clone())
        .collect();
    let intents = IntentInventory::new(names.into_iter().collect())?;
    let entries = pending
        .into_iter()
        .map(|p| {
            let label = intents.label_of(&p.intent).unwrap_or(intents.ood_label());
            CorpusEntry {
                sample: DialogueSample { label: Some(label), ..p.sample },
                split: p.split,
            }
        })
        .collect();
    let mut corpus = Corpus::new(entries, intents, path.display().to_string())?;
    corpus.skipped = skipped;
    Ok(corpus)
}
