//! Central finite-difference verification of backward rules.

use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub fragment: String,
    pub tolerance: f64,
    pub entries: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares backward-pass gradients of a scalar-valued fragment against
/// central differences for every entry of every input.
///
/// `fragment` receives one differentiable leaf per input, in order, and must
/// return a `1 × 1` node.
pub fn grad_check<F>(
    name: &str,
    inputs: &[(&str, Tensor<f64>)],
    tolerance: f64,
    fragment: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|v| tape.var(v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let root = fragment(&mut tape, &vars)?;
        if tape.shape(root) != [1, 1] {
            return Err(Error::invalid(format!(
                "fragment {name} must evaluate to a scalar"
            )));
        }
        Ok((tape, vars, root))
    };

    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (tape, vars, root) = eval(&values)?;
    let grads = tape.backward(root)?;

    let mut entries = Vec::with_capacity(inputs.len());
    for (pi, (pname, _)) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(values[pi].rows(), values[pi].cols());
        let analytic = grads.wrt(vars[pi]).cloned().unwrap_or(zero);
        let mut worst: f64 = 0.0;
        for k in 0..values[pi].len() {
            let orig = values[pi].data()[k];
            values[pi].data_mut()[k] = orig + FD_STEP;
            let (t, _, r) = eval(&values)?;
            let plus = t.value(r).item();
            values[pi].data_mut()[k] = orig - FD_STEP;
            let (t, _, r) = eval(&values)?;
            let minus = t.value(r).item();
            values[pi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic.data()[k], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        entries.push(ParamCheck {
            name: pname.to_string(),
            max_rel_error: worst,
            passed: worst < tolerance,
        });
    }
    Ok(GradCheckReport {
        fragment: name.to_string(),
        tolerance,
        entries,
    })
}
