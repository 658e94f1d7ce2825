//! Maximum-softmax-probability reference detector.
//!
//! A `k`-way classifier trained on `D_I` alone; a sample whose largest IND
//! probability falls below the threshold is rejected as OOD.

use crate::encoder::DialogueSample;
use crate::error::{Error, Result};
use crate::pipeline::config::TrainingConfig;
use crate::pipeline::model::CaroModel;
use crate::pipeline::train::{argmax, softmax};

pub const MSP_THRESHOLD: f64 = 0.5;

/// `base` with Stage 2 and pseudo-OOD synthesis switched off, so the OOD
/// logit is never a training target.
pub fn msp_config(base: &TrainingConfig) -> TrainingConfig {
    let mut c = base.clone();
    c.ablations.no_unlabeled = true;
    c.pseudo_ood_count = Some(0);
    c
}

/// Label in `0..k` or `k` for rejected, from the softmax over IND logits.
pub fn msp_decision(logits: &[f64], k: usize, threshold: f64) -> usize {
    let p = softmax(&logits[..k]);
    let best = argmax(&p);
    if p[best] < threshold {
        k
    } else {
        best
    }
}

pub fn msp_classify(model: &CaroModel, samples: &[DialogueSample], threshold: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("MSP threshold {threshold} must lie in [0, 1]")));
    }
    let enc = model.encode(samples)?;
    let rows: Vec<usize> = (0..enc.len()).collect();
    let k = model.intents.k();
    let out = model.forward_eval(&enc, &rows)?;
    Ok(out.logits.iter().map(|l| msp_decision(l, k, threshold)).collect())
}
