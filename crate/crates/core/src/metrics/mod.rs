//! Macro-F1 scoring, confusion matrices and information-plane diagnostics.

pub mod plane;
pub mod score;

pub use plane::{
    energy_values, information_plane, mutual_information, one_hot, trim_tails, trimmed_mean, InfoPlane,
    MIN_PLANE_SAMPLES, TRIM_FRACTION,
};
pub use score::{score, ClassScore, ConfusionMatrix, ScoreReport};
