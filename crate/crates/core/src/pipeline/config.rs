use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablations {
    /// Skip Stage 2 entirely.
    pub no_unlabeled: bool,
    /// Replace the adaptive view with a second dropout perturbation of the
    /// pooled view.
    pub no_multiview: bool,
    /// Replace the gate with `(v1 + v2) / 2`.
    pub no_gate: bool,
    /// Force `λ = 0`.
    pub no_ib: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] = ["no-unlabeled", "no-multiview", "no-gate", "no-ib"];

    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no-unlabeled" => self.no_unlabeled = true,
            "no-multiview" => self.no_multiview = true,
            "no-gate" | "no-gate-aggregation" => self.no_gate = true,
            "no-ib" => self.no_ib = true,
            "none" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?} (expected one of {})",
                    Self::NAMES.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&'static str> {
        let flags = [self.no_unlabeled, self.no_multiview, self.no_gate, self.no_ib];
        Self::NAMES.iter().zip(flags).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    /// Embedding table and adaptive field.
    pub encoder_lr: f64,
    /// Gate, classifier, Gaussian head and critic.
    pub head_lr: f64,
    /// Decoupled weight decay of the encoder group.
    pub weight_decay: f64,
    pub mix_lo: f64,
    pub mix_hi: f64,
    /// `None` uses the mean per-class IND count.
    pub pseudo_ood_count: Option<usize>,
    /// Re-synthesize the pseudo-OOD set from current representations at the
    /// start of every Stage-1 epoch rather than only once.
    pub refresh_pseudo_ood: bool,
    pub patience: usize,
    pub ablations: Ablations,
    pub max_context_turns: Option<usize>,
    pub max_len: usize,
    pub embed_dim: usize,
    pub r1: usize,
    pub r2: usize,
    pub proj_dim: usize,
    pub classifier_hidden: usize,
    pub gauss_hidden: usize,
    pub critic_hidden: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 0.5,
            stage1_epochs: 15,
            stage2_epochs: 10,
            batch_size: 25,
            encoder_lr: 1e-5,
            head_lr: 1e-4,
            weight_decay: 0.01,
            mix_lo: 0.2,
            mix_hi: 0.8,
            pseudo_ood_count: None,
            refresh_pseudo_ood: false,
            patience: 3,
            ablations: Ablations::default(),
            max_context_turns: None,
            max_len: 256,
            embed_dim: 64,
            r1: 16,
            r2: 48,
            proj_dim: 64,
            classifier_hidden: 64,
            gauss_hidden: 64,
            critic_hidden: 64,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Shapes and rates for embeddings trained from scratch at desk scale.
    pub fn desk() -> Self {
        TrainingConfig {
            encoder_lr: 5e-4,
            head_lr: 5e-3,
            refresh_pseudo_ood: true,
            max_len: 64,
            embed_dim: 32,
            r1: 16,
            r2: 48,
            proj_dim: 16,
            classifier_hidden: 32,
            gauss_hidden: 32,
            critic_hidden: 32,
            ..TrainingConfig::default()
        }
    }

    /// λ after the `no-ib` ablation.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablations.no_ib {
            0.0
        } else {
            self.lambda
        }
    }

    /// All violated constraints, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            p.push(format!("lambda = {} must be a finite non-negative number", self.lambda));
        }
        if self.batch_size < 2 {
            p.push(format!("batch_size = {} must be at least 2", self.batch_size));
        }
        for (name, v) in [("encoder_lr", self.encoder_lr), ("head_lr", self.head_lr)] {
            if !(v > 0.0) || !v.is_finite() {
                p.push(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            p.push(format!("weight_decay = {} must be non-negative", self.weight_decay));
        }
        if !(0.0 < self.mix_lo && self.mix_lo <= self.mix_hi && self.mix_hi < 1.0) {
            p.push(format!(
                "mixing bounds ({}, {}) must satisfy 0 < lo <= hi < 1",
                self.mix_lo, self.mix_hi
            ));
        }
        if self.max_len == 0 {
            p.push("max_len must be positive".into());
        }
        if self.r1 == 0 || self.r1 >= self.embed_dim {
            p.push(format!("r1 = {} must lie in 1..embed_dim ({})", self.r1, self.embed_dim));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("r2", self.r2),
            ("proj_dim", self.proj_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("gauss_hidden", self.gauss_hidden),
            ("critic_hidden", self.critic_hidden),
        ] {
            if v == 0 {
                p.push(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            p.push(format!("dropout = {} must lie in [0, 1)", self.dropout));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}
