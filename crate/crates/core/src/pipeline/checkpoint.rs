//! Self-describing JSON checkpoints of a trained model.
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::IntentInventory;
use crate::diffcore::Tensor;
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::pipeline::config::TrainingConfig;
use crate::pipeline::model::CaroModel;

pub const CHECKPOINT_FORMAT: &str = "caro-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    pub config: TrainingConfig,
    /// IND intent names in label order.
    pub intents: Vec<String>,
    pub vocab_fingerprint: u64,
    pub vocab: Vec<String>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &CaroModel) -> Self {
        let store = &model.store;
        let tensors = store
            .ids()
            .map(|id| {
                let t = store.value(id);
                NamedTensor {
                    name: store.name(id).to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.data().to_vec(),
                }
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            seed: model.config.seed,
            config: model.config.clone(),
            intents: model.intents.names().to_vec(),
            vocab_fingerprint: model.vocab.fingerprint(),
            vocab: model.vocab.tokens().to_vec(),
            tensors,
        }
    }

    /// Rebuilds the model, checking the vocabulary fingerprint and every
    /// parameter name and shape.
    pub fn into_model(self) -> Result<CaroModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", self.format)));
        }
        let vocab = Vocabulary::from_tokens(self.vocab)?;
        if vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::Checkpoint("stored vocabulary does not match its fingerprint".into()));
        }
        let intents = IntentInventory::new(self.intents)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut model = CaroModel::new(self.config, vocab, intents, &mut rng)?;
        if model.store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.store.len(),
                self.tensors.len()
            )));
        }
        for t in self.tensors {
            let id = model
                .store
                .find(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {:?}", t.name)))?;
            let slot = model.store.value_mut(id);
            if slot.shape() != [t.rows, t.cols] {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} is {}x{}, model expects {:?}",
                    t.name,
                    t.rows,
                    t.cols,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(t.rows, t.cols, t.data)?;
        }
        Ok(model)
    }

    /// Rejects a vocabulary other than the one the model was trained with.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.fingerprint() != self.vocab_fingerprint {
            return Err(Error::Checkpoint(format!(
                "vocabulary fingerprint {:016x} does not match checkpoint {:016x}",
                vocab.fingerprint(),
                self.vocab_fingerprint
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

pub fn save_model(model: &CaroModel, path: &Path) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

pub fn load_model(path: &Path) -> Result<CaroModel> {
    Checkpoint::load(path)?.into_model()
}
