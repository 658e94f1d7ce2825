//! Flat `key = value` run configuration.
//!
//! Resolution order: the preset's defaults, then keys from the config file in
//! file order, then command-line overrides. `#` starts a comment. Unknown keys
//! and unparsable values are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use caro::data::SynthSpec;
use caro::objective::CriticFit;
use caro::pipeline::{Ablations, TrainingConfig, MSP_THRESHOLD};

/// Every accepted key with its meaning. Defaults are listed by
/// `caro show-config` and in the README.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "desk | full: base values for the model and training keys"),
    ("seed", "seed of the run: corpus generation, splits and training"),
    ("seeds", "comma-separated seeds of sweep runs"),
    ("out_root", "parent of timestamped run directories"),
    ("corpus", "STAR-format .jsonl file or directory; empty generates a synthetic corpus"),
    ("splits", "split manifest for `corpus`; empty derives splits from tags and seed"),
    ("hidden_fraction", "share of untagged IND training samples moved to D_U"),
    ("unlabeled_fraction", "share of D_U kept (prefix of the pool)"),
    ("synth.k", "IND intents"),
    ("synth.ood_intents", "OOD intents feeding D_U"),
    ("synth.heldout_ood_intents", "OOD intents reserved for D_T"),
    ("synth.keywords_per_intent", "keywords per intent"),
    ("synth.ood_pool_words", "shared out-of-domain word pool"),
    ("synth.filler_words", "shared filler words"),
    ("synth.noise_words", "words of injected noise turns"),
    ("synth.mean_topic_turns", "mean on-topic history turns"),
    ("synth.noise_turns", "noise turns added to every history"),
    ("synth.ind_drift", "probability an IND user turn mentions another intent"),
    ("synth.train", "D_I size"),
    ("synth.unlabeled", "D_U size"),
    ("synth.valid", "D_V size"),
    ("synth.test", "D_T size"),
    ("synth.unlabeled_ood_fraction", "OOD share of D_U"),
    ("synth.test_ood_fraction", "OOD share of D_T"),
    ("lambda", "weight of the bottleneck loss"),
    ("stage1_epochs", "Stage-1 epochs"),
    ("stage2_epochs", "Stage-2 epochs"),
    ("batch_size", "batch size"),
    ("encoder_lr", "learning rate of embeddings and adaptive field"),
    ("head_lr", "learning rate of gate, classifier, Gaussian head and critic"),
    ("weight_decay", "decoupled weight decay of the encoder group"),
    ("mix_lo", "lower mixing coefficient of pseudo-OOD synthesis"),
    ("mix_hi", "upper mixing coefficient of pseudo-OOD synthesis"),
    ("pseudo_ood_count", "auto (mean per-class count) or a number"),
    ("refresh_pseudo_ood", "re-synthesize pseudo-OOD points every Stage-1 epoch"),
    ("patience", "Stage-2 early-stopping patience in epochs"),
    ("ablations", "none or a comma list of no-unlabeled, no-multiview, no-gate, no-ib"),
    ("max_context_turns", "none or the number of most recent history turns kept"),
    ("max_len", "token slots per sample"),
    ("embed_dim", "embedding width m"),
    ("r1", "adaptive field bottleneck width"),
    ("r2", "gate hidden width"),
    ("proj_dim", "Gaussian code dimension"),
    ("classifier_hidden", "classifier hidden width"),
    ("gauss_hidden", "Gaussian head hidden width"),
    ("critic_hidden", "training critic hidden width"),
    ("dropout", "dropout of the no-multiview perturbations"),
    ("detector", "caro | msp"),
    ("msp_threshold", "maximum-softmax rejection threshold"),
    ("plane.hidden", "hidden widths of the information-plane critics"),
    ("plane.steps", "information-plane critic steps"),
    ("plane.batch", "information-plane critic batch"),
    ("plane.lr", "information-plane critic learning rate"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Caro,
    Msp,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub preset: Preset,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub out_root: PathBuf,
    pub corpus: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub hidden_fraction: f64,
    pub unlabeled_fraction: f64,
    pub synth: SynthSpec,
    pub training: TrainingConfig,
    pub detector: Detector,
    pub msp_threshold: f64,
    pub plane: CriticFit,
}

impl Settings {
    pub fn defaults(preset: Preset) -> Self {
        let training = match preset {
            Preset::Desk => TrainingConfig::desk(),
            Preset::Full => TrainingConfig::default(),
        };
        Settings {
            preset,
            seed: 0,
            seeds: vec![0, 1, 2],
            out_root: PathBuf::from("runs"),
            corpus: None,
            splits: None,
            hidden_fraction: 0.5,
            unlabeled_fraction: 1.0,
            synth: SynthSpec::default(),
            training,
            detector: Detector::Caro,
            msp_threshold: MSP_THRESHOLD,
            plane: CriticFit::default(),
        }
    }

    /// Sets one key. The seed propagates to the corpus generator and the
    /// trainer.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synth;
        let t = &mut self.training;
        match key {
            "preset" => bail!("preset can only be chosen before other keys"),
            "seed" => {
                self.seed = num(key, v)?;
                s.seed = self.seed;
                t.seed = self.seed;
            }
            "seeds" => self.seeds = list(key, v)?,
            "out_root" => self.out_root = PathBuf::from(v),
            "corpus" => self.corpus = path(v),
            "splits" => self.splits = path(v),
            "hidden_fraction" => self.hidden_fraction = num(key, v)?,
            "unlabeled_fraction" => self.unlabeled_fraction = num(key, v)?,
            "synth.k" => s.k = num(key, v)?,
            "synth.ood_intents" => s.ood_intents = num(key, v)?,
            "synth.heldout_ood_intents" => s.heldout_ood_intents = num(key, v)?,
            "synth.keywords_per_intent" => s.keywords_per_intent = num(key, v)?,
            "synth.ood_pool_words" => s.ood_pool_words = num(key, v)?,
            "synth.filler_words" => s.filler_words = num(key, v)?,
            "synth.noise_words" => s.noise_words = num(key, v)?,
            "synth.mean_topic_turns" => s.mean_topic_turns = num(key, v)?,
            "synth.noise_turns" => s.noise_turns = num(key, v)?,
            "synth.ind_drift" => s.ind_drift = num(key, v)?,
            "synth.train" => s.train = num(key, v)?,
            "synth.unlabeled" => s.unlabeled = num(key, v)?,
            "synth.valid" => s.valid = num(key, v)?,
            "synth.test" => s.test = num(key, v)?,
            "synth.unlabeled_ood_fraction" => s.unlabeled_ood_fraction = num(key, v)?,
            "synth.test_ood_fraction" => s.test_ood_fraction = num(key, v)?,
            "lambda" => t.lambda = num(key, v)?,
            "stage1_epochs" => t.stage1_epochs = num(key, v)?,
            "stage2_epochs" => t.stage2_epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "encoder_lr" => t.encoder_lr = num(key, v)?,
            "head_lr" => t.head_lr = num(key, v)?,
            "weight_decay" => t.weight_decay = num(key, v)?,
            "mix_lo" => t.mix_lo = num(key, v)?,
            "mix_hi" => t.mix_hi = num(key, v)?,
            "pseudo_ood_count" => t.pseudo_ood_count = optional(key, v, "auto")?,
            "refresh_pseudo_ood" => t.refresh_pseudo_ood = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "ablations" => {
                let mut a = Ablations::default();
                for name in v.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                    a.set(name)?;
                }
                t.ablations = a;
            }
            "max_context_turns" => t.max_context_turns = optional(key, v, "none")?,
            "max_len" => t.max_len = num(key, v)?,
            "embed_dim" => t.embed_dim = num(key, v)?,
            "r1" => t.r1 = num(key, v)?,
            "r2" => t.r2 = num(key, v)?,
            "proj_dim" => t.proj_dim = num(key, v)?,
            "classifier_hidden" => t.classifier_hidden = num(key, v)?,
            "gauss_hidden" => t.gauss_hidden = num(key, v)?,
            "critic_hidden" => t.critic_hidden = num(key, v)?,
            "dropout" => t.dropout = num(key, v)?,
            "detector" => {
                self.detector = match v {
                    "caro" => Detector::Caro,
                    "msp" => Detector::Msp,
                    other => bail!("detector {other:?}: expected caro or msp"),
                }
            }
            "msp_threshold" => self.msp_threshold = num(key, v)?,
            "plane.hidden" => self.plane.hidden = list(key, v)?,
            "plane.steps" => self.plane.steps = num(key, v)?,
            "plane.batch" => self.plane.batch = num(key, v)?,
            "plane.lr" => self.plane.learning_rate = num(key, v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let t = &self.training;
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let opt = |v: Option<usize>, none: &str| v.map_or_else(|| none.to_string(), |x| x.to_string());
        let p = |v: &Option<PathBuf>| v.as_ref().map_or_else(String::new, |p| p.display().to_string());
        let ablations = t.ablations.names();
        let values: Vec<String> = vec![
            match self.preset {
                Preset::Desk => "desk".into(),
                Preset::Full => "full".into(),
            },
            self.seed.to_string(),
            join(&self.seeds),
            self.out_root.display().to_string(),
            p(&self.corpus),
            p(&self.splits),
            self.hidden_fraction.to_string(),
            self.unlabeled_fraction.to_string(),
            s.k.to_string(),
            s.ood_intents.to_string(),
            s.heldout_ood_intents.to_string(),
            s.keywords_per_intent.to_string(),
            s.ood_pool_words.to_string(),
            s.filler_words.to_string(),
            s.noise_words.to_string(),
            s.mean_topic_turns.to_string(),
            s.noise_turns.to_string(),
            s.ind_drift.to_string(),
            s.train.to_string(),
            s.unlabeled.to_string(),
            s.valid.to_string(),
            s.test.to_string(),
            s.unlabeled_ood_fraction.to_string(),
            s.test_ood_fraction.to_string(),
            t.lambda.to_string(),
            t.stage1_epochs.to_string(),
            t.stage2_epochs.to_string(),
            t.batch_size.to_string(),
            t.encoder_lr.to_string(),
            t.head_lr.to_string(),
            t.weight_decay.to_string(),
            t.mix_lo.to_string(),
            t.mix_hi.to_string(),
            opt(t.pseudo_ood_count, "auto"),
            t.refresh_pseudo_ood.to_string(),
            t.patience.to_string(),
            if ablations.is_empty() { "none".into() } else { ablations.join(",") },
            opt(t.max_context_turns, "none"),
            t.max_len.to_string(),
            t.embed_dim.to_string(),
            t.r1.to_string(),
            t.r2.to_string(),
            t.proj_dim.to_string(),
            t.classifier_hidden.to_string(),
            t.gauss_hidden.to_string(),
            t.critic_hidden.to_string(),
            t.dropout.to_string(),
            match self.detector {
                Detector::Caro => "caro".into(),
                Detector::Msp => "msp".into(),
            },
            self.msp_threshold.to_string(),
            self.plane.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            self.plane.steps.to_string(),
            self.plane.batch.to_string(),
            self.plane.learning_rate.to_string(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    /// Canonical `key = value` text; parses back to the same settings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Every violated constraint across the corpus and training settings.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.training.problems();
        if self.corpus.is_none() {
            if let Err(e) = self.synth.validate() {
                p.push(e.to_string());
            }
        }
        if self.splits.is_some() && self.corpus.is_none() {
            p.push("splits requires corpus".into());
        }
        if !(0.0..1.0).contains(&self.hidden_fraction) {
            p.push(format!("hidden_fraction = {} must lie in [0, 1)", self.hidden_fraction));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_fraction) {
            p.push(format!("unlabeled_fraction = {} must lie in [0, 1]", self.unlabeled_fraction));
        }
        if !(0.0..=1.0).contains(&self.msp_threshold) {
            p.push(format!("msp_threshold = {} must lie in [0, 1]", self.msp_threshold));
        }
        if self.seeds.is_empty() {
            p.push("seeds must list at least one seed".into());
        }
        if self.plane.hidden.is_empty() || self.plane.steps == 0 || self.plane.batch < 2 {
            p.push("plane.hidden, plane.steps and plane.batch must be positive (batch >= 2)".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  - {}", p.join("\n  - "))
        }
    }
}

/// Parsed `key = value` lines in file order.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
        let k = k.trim();
        if !KEYS.iter().any(|(name, _)| *name == k) {
            bail!("{origin}:{}: unknown config key {k:?}", n + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolves a preset, file pairs and overrides into settings.
pub fn resolve(file: &[(String, String)], overrides: &[(String, String)]) -> Result<Settings> {
    let all: Vec<&(String, String)> = file.iter().chain(overrides).collect();
    let preset = match all.iter().rev().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str()) {
        None | Some("desk") => Preset::Desk,
        Some("full") => Preset::Full,
        Some(other) => bail!("preset {other:?}: expected desk or full"),
    };
    let mut s = Settings::defaults(preset);
    for (k, v) in all {
        if k != "preset" {
            s.apply(k, v).with_context(|| format!("config key {k}"))?;
        }
    }
    Ok(s)
}

pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Settings> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_pairs(&text, &p.display().to_string())?
        }
        None => Vec::new(),
    };
    for (k, _) in overrides {
        if !KEYS.iter().any(|(name, _)| name == k) {
            bail!("unknown config key {k:?}");
        }
    }
    resolve(&file, overrides)
}

/// Parses a `KEY=VALUE` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key} = {v:?}: {e}"))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(str::trim).filter(|x| !x.is_empty()).map(|x| num(key, x)).collect()
}

fn optional(key: &str, v: &str, none: &str) -> Result<Option<usize>> {
    if v == none {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

pub fn defaults_table(preset: Preset) -> BTreeMap<&'static str, String> {
    Settings::defaults(preset).entries().into_iter().collect()
}
