//! Two-stage training: mixup pseudo-OOD synthesis with cross-entropy
//! pre-training, then OOD mining from unlabeled dialogues and joint training
//! with the bottleneck objective.

pub mod checkpoint;
pub mod config;
pub mod inspect;
pub mod model;
pub mod msp;
pub mod train;

pub use checkpoint::{load_model, save_model, Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use config::{Ablations, TrainingConfig};
pub use inspect::{bag_of_words, dump_alpha, dump_beta, model_information_plane};
pub use model::{dropout_mask, Batch, CaroModel, Encoded, EvalOutput, ModelIds, ModelVars};
pub use msp::{msp_classify, msp_config, msp_decision, MSP_THRESHOLD};
pub use train::{
    accuracy, argmax, classify, validation_score, mine_ood, softmax, synthesize_pseudo_ood, train_caro, training_vocabulary,
    MinedPool, MinedSample, Prediction, ValidationScore, PseudoOodSample, StepRecord, TrainLog, TrainOutcome, TrainingData,
};
