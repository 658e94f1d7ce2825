//! Per-token and per-dimension weight dumps of a trained model.

use crate::diffcore::Tensor;
use crate::encoder::{AlphaRecord, AlphaTable, BetaTable, DialogueSample};
use crate::error::{Error, Result};
use crate::metrics::{information_plane, InfoPlane};
use crate::objective::CriticFit;
use crate::pipeline::model::CaroModel;

/// Softmax weights of the adaptive view for each sample, real positions only.
pub fn dump_alpha(model: &CaroModel, samples: &[DialogueSample]) -> Result<AlphaTable> {
    if model.config.ablations.no_multiview {
        return Err(Error::invalid("no adaptive view in a no-multiview model"));
    }
    let enc = model.encode(samples)?;
    let rows: Vec<usize> = (0..enc.len()).collect();
    let out = model.forward_eval(&enc, &rows)?;
    let records = samples
        .iter()
        .zip(&enc)
        .zip(&out.alpha)
        .map(|((s, e), a)| AlphaRecord {
            sample_id: s.id.clone(),
            label: s.label,
            weights: a.iter().zip(&e.mask).filter(|(_, &m)| m).map(|(w, _)| *w).collect(),
        })
        .collect();
    Ok(AlphaTable {
        max_len: model.config.max_len,
        records,
    })
}

/// Gate values averaged over `samples`.
pub fn dump_beta(model: &CaroModel, samples: &[DialogueSample]) -> Result<BetaTable> {
    if model.config.ablations.no_gate {
        return Err(Error::invalid("no gate in a no-gate model"));
    }
    let enc = model.encode(samples)?;
    let rows: Vec<usize> = (0..enc.len()).collect();
    let out = model.forward_eval(&enc, &rows)?;
    BetaTable::from_rows(out.beta.iter().map(Vec::as_slice)).ok_or_else(|| Error::invalid("no samples to dump"))
}

/// Normalized bag-of-words of each encoded sample (`rows × V`), the
/// model-independent stand-in for the observation `x`.
pub fn bag_of_words(model: &CaroModel, samples: &[DialogueSample]) -> Result<Tensor<f64>> {
    let enc = model.encode(samples)?;
    let v = model.vocab.len();
    let mut t = Tensor::zeros(enc.len(), v);
    for (r, e) in enc.iter().enumerate() {
        let real = e.mask.iter().filter(|&&m| m).count() as f64;
        for (&id, _) in e.ids.iter().zip(&e.mask).filter(|(_, &m)| m) {
            t.set(r, id, t.get(r, id) + 1.0 / real);
        }
    }
    Ok(t)
}

/// `I(x; z)` and `I(z; y)` with `z = v(x)`, over labeled samples.
pub fn model_information_plane(
    model: &CaroModel,
    samples: &[DialogueSample],
    fit: &CriticFit,
    seed: u64,
) -> Result<InfoPlane> {
    let labels = samples
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::invalid(format!("sample {} is unlabeled", s.id))))
        .collect::<Result<Vec<_>>>()?;
    let x = bag_of_words(model, samples)?;
    let z = Tensor::from_rows(&model.representations(samples)?)?;
    information_plane(&x, &z, &labels, model.num_classes(), fit, seed)
}
