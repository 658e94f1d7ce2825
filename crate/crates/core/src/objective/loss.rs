//! Information-bottleneck, cross-entropy and combined training losses.

use std::fmt;

use rand::Rng;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::objective::gaussian::{kl_diag_graph, CodeVars, GaussianCode};
use crate::objective::mi::{derangement, jsd_graph, CriticParams, CriticVars};
use crate::scalar::Scalar;

/// Nodes of the multi-view bottleneck loss, all `1 × 1` batch means.
#[derive(Debug, Clone, Copy)]
pub struct IbTerms {
    pub loss: Var,
    pub mi_bound: Var,
    pub skl: Var,
}

/// `L_IB = −I(z1; z2) + ½ (KL(p1 ‖ p2) + KL(p2 ‖ p1))`, batch-averaged, with
/// the mutual information taken from the JSD bound on the sampled codes.
pub fn ib_graph<T: Scalar>(
    tape: &mut Tape<T>,
    view1: &CodeVars,
    view2: &CodeVars,
    critic: &CriticVars,
    negatives: &[usize],
) -> Result<IbTerms> {
    let mi_bound = jsd_graph(tape, view1.sample, view2.sample, critic, negatives)?;
    let kl12 = kl_diag_graph(tape, (view1.mean, view1.stddev), (view2.mean, view2.stddev))?;
    let kl21 = kl_diag_graph(tape, (view2.mean, view2.stddev), (view1.mean, view1.stddev))?;
    let kl = tape.add(kl12, kl21)?;
    let kl = tape.mean(kl);
    let skl = tape.scale(kl, T::of(0.5));
    let loss = tape.sub(skl, mi_bound)?;
    Ok(IbTerms {
        loss,
        mi_bound,
        skl,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbValue<T> {
    pub loss: T,
    pub mi_bound: T,
    pub skl: T,
}

pub fn ib_loss<T: Scalar, R: Rng + ?Sized>(
    view1: &GaussianCode<T>,
    view2: &GaussianCode<T>,
    critic: &CriticParams<T>,
    rng: &mut R,
) -> Result<IbValue<T>> {
    if view1.mean.shape() != view2.mean.shape() {
        return Err(Error::Shape {
            op: "ib_loss",
            left: view1.mean.shape(),
            right: view2.mean.shape(),
        });
    }
    let perm = derangement(view1.mean.rows(), rng)?;
    let mut tape = Tape::new();
    let mut bind = |c: &GaussianCode<T>| -> Result<CodeVars> {
        Ok(CodeVars {
            mean: tape.constant(c.mean.clone())?,
            stddev: tape.constant(c.stddev.clone())?,
            sample: tape.constant(c.sample.clone())?,
        })
    };
    let c1 = bind(view1)?;
    let c2 = bind(view2)?;
    let critic = critic.bind(&mut tape)?;
    let terms = ib_graph(&mut tape, &c1, &c2, &critic, &perm)?;
    Ok(IbValue {
        loss: tape.value(terms.loss).item(),
        mi_bound: tape.value(terms.mi_bound).item(),
        skl: tape.value(terms.skl).item(),
    })
}

/// Batch-mean cross-entropy over rows of `logits`.
pub fn cross_entropy_graph<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let per_row = tape.cross_entropy(logits, labels)?;
    Ok(tape.mean(per_row))
}

/// `−log softmax(logits)[label]` for one `1 × (k+1)` logit row.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone())?;
    let ce = cross_entropy_graph(&mut tape, l, &[label])?;
    Ok(tape.value(ce).item())
}

/// One record of the combined objective `L = mean CE + λ · mean L_IB`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: Option<f64>,
    pub ib: Option<f64>,
    pub mi: Option<f64>,
    pub skl: Option<f64>,
    pub lambda: f64,
}

impl LossBreakdown {
    /// Combines precomputed terms; at least one of the two pools must be present.
    pub fn combine(ce: Option<f64>, ib: Option<IbValue<f64>>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        let total = match (ce, ib) {
            (None, None) => return Err(Error::invalid("both loss pools are empty")),
            (Some(c), None) => c,
            (None, Some(i)) => lambda * i.loss,
            (Some(c), Some(i)) => c + lambda * i.loss,
        };
        Ok(LossBreakdown {
            total,
            ce,
            ib: ib.map(|i| i.loss),
            mi: ib.map(|i| i.mi_bound),
            skl: ib.map(|i| i.skl),
            lambda,
        })
    }

    pub const TSV_HEADER: &'static str = "step\tstage\tce\tib\tmi\tskl\ttotal\tlambda";

    pub fn tsv_row(&self, step: usize, stage: u8) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        format!(
            "{step}\t{stage}\t{}\t{}\t{}\t{}\t{}\t{}",
            opt(self.ce),
            opt(self.ib),
            opt(self.mi),
            opt(self.skl),
            self.total,
            self.lambda
        )
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L={:.5}", self.total)?;
        if let Some(ce) = self.ce {
            write!(f, " ce={ce:.5}")?;
        }
        if let (Some(ib), Some(mi), Some(skl)) = (self.ib, self.mi, self.skl) {
            write!(f, " ib={ib:.5} mi={mi:.5} skl={skl:.5}")?;
        }
        Ok(())
    }
}

/// Graph form of the combined loss. Returns the total node and its breakdown.
pub fn combined_loss_graph<T: Scalar>(
    tape: &mut Tape<T>,
    ce: Option<Var>,
    ib: Option<&IbTerms>,
    lambda: T,
) -> Result<(Var, LossBreakdown)> {
    let value = |tape: &Tape<T>, v: Var| tape.value(v).item().as_f64();
    let ib_value = ib.map(|t| IbValue {
        loss: value(tape, t.loss),
        mi_bound: value(tape, t.mi_bound),
        skl: value(tape, t.skl),
    });
    let breakdown = LossBreakdown::combine(ce.map(|c| value(tape, c)), ib_value, lambda.as_f64())?;
    let total = match (ce, ib) {
        (Some(c), None) => c,
        (None, Some(i)) => tape.scale(i.loss, lambda),
        (Some(c), Some(i)) => {
            let weighted = tape.scale(i.loss, lambda);
            tape.add(c, weighted)?
        }
        (None, None) => unreachable!("rejected by LossBreakdown::combine"),
    };
    Ok((total, breakdown))
}
