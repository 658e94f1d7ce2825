//! Registry of model fragments verified against central finite differences.
//!
//! Each fragment builds a piece of the network on random inputs of small
//! desk shapes and reduces it to a scalar through a fixed random projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check, standard_normal, DenseVars, GradCheckReport, Tape, Tensor, Var};
use crate::encoder::{adaptive_field_graph, aggregate_graph, global_pool_graph};
use crate::error::Result;
use crate::objective::{
    combined_loss_graph, cross_entropy_graph, derangement, encode_view_graph, ib_graph, jsd_graph, kl_diag_graph,
    CriticVars, GaussianHeadVars,
};
use crate::pipeline::model::LEAKY_SLOPE;

pub const GRAD_TOLERANCE: f64 = 1e-3;

const N: usize = 10;
const M: usize = 6;
const R1: usize = 3;
const R2: usize = 5;
const D: usize = 4;
const B: usize = 3;
const VOCAB: usize = 9;
const CLASSES: usize = 4;
const HIDDEN: usize = 5;

#[derive(Clone, Copy)]
pub struct Fragment {
    pub name: &'static str,
    /// What part of the model the fragment exercises.
    pub covers: &'static str,
    run: fn(u64, f64) -> Result<GradCheckReport>,
}

impl Fragment {
    pub fn check(&self, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
        (self.run)(seed, tolerance)
    }
}

impl std::fmt::Debug for Fragment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fragment").field("name", &self.name).finish()
    }
}

pub fn registry() -> Vec<Fragment> {
    vec![
        Fragment { name: "embed+global_pool", covers: "token lookup and masked mean pooling", run: pool },
        Fragment { name: "adaptive_field", covers: "per-token reception weights and the weighted view", run: field },
        Fragment { name: "gate", covers: "gated aggregation of the two views", run: gate },
        Fragment { name: "symmetric_kl", covers: "both KL directions between view codes", run: skl },
        Fragment { name: "jsd_estimator", covers: "Gaussian head, sampling and the JSD critic bound", run: jsd },
        Fragment { name: "ib_loss", covers: "the full bottleneck loss", run: ib },
        Fragment { name: "classifier_ce", covers: "leaky two-layer head and cross-entropy", run: ce },
        Fragment { name: "combined_loss", covers: "λ-weighted sum of cross-entropy and the bottleneck", run: combined },
    ]
}

/// A fragment whose elementwise backward rule is wrong on purpose; a
/// working checker must flag it.
pub fn corrupted_fixture() -> Fragment {
    Fragment { name: "corrupted_sin", covers: "negative control", run: corrupted }
}

pub fn run_all(fragments: &[Fragment], seed: u64, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    fragments.iter().map(|f| f.check(seed, tolerance)).collect()
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}

fn positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(0.05..0.3)).collect();
    Tensor::new(rows, cols, data).expect("shape matches data")
}

/// Mean of `c ⊙ x` for a fixed random `c`.
fn project(tape: &mut Tape<f64>, x: Var, c: &Tensor<f64>) -> Result<Var> {
    let c = tape.constant(c.clone())?;
    let y = tape.mul(x, c)?;
    Ok(tape.mean(y))
}

fn masks(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<bool>) {
    let mut ids = Vec::new();
    let mut mask = Vec::new();
    for _ in 0..B {
        let real = rng.random_range(2..=N);
        for i in 0..N {
            let keep = i >= N - real;
            mask.push(keep);
            ids.push(if keep { rng.random_range(3..VOCAB) } else { 0 });
        }
    }
    (ids, mask)
}

fn pool(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ids, mask) = masks(&mut rng);
    let table = uniform(VOCAB, M, 1.0, &mut rng);
    let c = uniform(B, M, 1.0, &mut rng);
    grad_check("embed+global_pool", &[("embedding", table)], tol, |t, v| {
        let e = t.embed(v[0], &ids, &mask, N)?;
        let p = global_pool_graph(t, e, &mask, N, M)?;
        project(t, p, &c)
    })
}

fn field(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ids, mask) = masks(&mut rng);
    let inputs = [
        ("embedding", uniform(VOCAB, M, 1.0, &mut rng)),
        ("w1", uniform(R1, N * M, 0.5, &mut rng)),
        ("w", uniform(N, R1, 1.0, &mut rng)),
    ];
    let c = uniform(B, M, 1.0, &mut rng);
    grad_check("adaptive_field", &inputs, tol, |t, v| {
        let e = t.embed(v[0], &ids, &mask, N)?;
        let (view, _) = adaptive_field_graph(t, e, &mask, M, v[1], v[2])?;
        project(t, view, &c)
    })
}

fn gate(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        ("v1", uniform(B, M, 1.0, &mut rng)),
        ("v2", uniform(B, M, 1.0, &mut rng)),
        ("w2", uniform(R2, M, 1.0, &mut rng)),
        ("w3", uniform(M, R2, 1.0, &mut rng)),
    ];
    let c = uniform(B, M, 1.0, &mut rng);
    grad_check("gate", &inputs, tol, |t, v| {
        let (out, _) = aggregate_graph(t, v[0], v[1], v[2], v[3])?;
        project(t, out, &c)
    })
}

fn skl(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        ("mean1", uniform(B, D, 1.0, &mut rng)),
        ("raw_scale1", uniform(B, D, 1.0, &mut rng)),
        ("mean2", uniform(B, D, 1.0, &mut rng)),
        ("raw_scale2", uniform(B, D, 1.0, &mut rng)),
    ];
    grad_check("symmetric_kl", &inputs, tol, |t, v| {
        let s1 = t.softplus(v[1]);
        let s2 = t.softplus(v[3]);
        let a = kl_diag_graph(t, (v[0], s1), (v[2], s2))?;
        let b = kl_diag_graph(t, (v[2], s2), (v[0], s1))?;
        let both = t.add(a, b)?;
        Ok(t.mean(both))
    })
}

struct Heads {
    bias: Vec<Tensor<f64>>,
    eps: [Tensor<f64>; 2],
    perm: Vec<usize>,
}

fn head_inputs(rng: &mut ChaCha8Rng) -> (Vec<(&'static str, Tensor<f64>)>, Heads) {
    let inputs = vec![
        ("v1", uniform(B, M, 1.0, rng)),
        ("v2", uniform(B, M, 1.0, rng)),
        ("trunk0.w", uniform(HIDDEN, M, 0.7, rng)),
        ("trunk1.w", uniform(HIDDEN, HIDDEN, 0.7, rng)),
        ("mean.w", uniform(D, HIDDEN, 0.7, rng)),
        ("scale.w", uniform(D, HIDDEN, 0.7, rng)),
        ("critic0.w", uniform(HIDDEN, 2 * D, 0.7, rng)),
        ("critic1.w", uniform(1, HIDDEN, 0.7, rng)),
    ];
    let bias = [HIDDEN, HIDDEN, D, D, HIDDEN, 1].iter().map(|&n| positive(1, n, rng)).collect();
    let eps = [standard_normal(B, D, rng), standard_normal(B, D, rng)];
    let perm = derangement(B, rng).expect("B >= 2");
    (inputs, Heads { bias, eps, perm })
}

fn heads(t: &mut Tape<f64>, v: &[Var], h: &Heads) -> Result<(GaussianHeadVars, CriticVars)> {
    let b = h.bias.iter().map(|x| t.constant(x.clone())).collect::<Result<Vec<_>>>()?;
    let dense = |w, b| DenseVars { w, b: Some(b) };
    Ok((
        GaussianHeadVars {
            trunk: vec![dense(v[2], b[0]), dense(v[3], b[1])],
            mean: dense(v[4], b[2]),
            scale: dense(v[5], b[3]),
        },
        CriticVars {
            layers: vec![dense(v[6], b[4]), dense(v[7], b[5])],
        },
    ))
}

fn jsd(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, h) = head_inputs(&mut rng);
    grad_check("jsd_estimator", &inputs, tol, |t, v| {
        let (gauss, critic) = heads(t, v, &h)?;
        let c1 = encode_view_graph(t, v[0], &gauss, h.eps[0].clone())?;
        let c2 = encode_view_graph(t, v[1], &gauss, h.eps[1].clone())?;
        jsd_graph(t, c1.sample, c2.sample, &critic, &h.perm)
    })
}

fn ib(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, h) = head_inputs(&mut rng);
    grad_check("ib_loss", &inputs, tol, |t, v| {
        let (gauss, critic) = heads(t, v, &h)?;
        let c1 = encode_view_graph(t, v[0], &gauss, h.eps[0].clone())?;
        let c2 = encode_view_graph(t, v[1], &gauss, h.eps[1].clone())?;
        Ok(ib_graph(t, &c1, &c2, &critic, &h.perm)?.loss)
    })
}

fn classifier(t: &mut Tape<f64>, x: Var, w0: Var, w1: Var, bias: &[Tensor<f64>]) -> Result<Var> {
    let b0 = t.constant(bias[0].clone())?;
    let b1 = t.constant(bias[1].clone())?;
    let h = t.dense(x, w0, Some(b0))?;
    let h = t.leaky_relu(h, LEAKY_SLOPE);
    t.dense(h, w1, Some(b1))
}

fn ce(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = [
        ("v", uniform(B, M, 1.0, &mut rng)),
        ("cls0.w", uniform(HIDDEN, M, 1.0, &mut rng)),
        ("cls1.w", uniform(CLASSES, HIDDEN, 1.0, &mut rng)),
    ];
    let bias = [uniform(1, HIDDEN, 0.3, &mut rng), uniform(1, CLASSES, 0.3, &mut rng)];
    let labels: Vec<usize> = (0..B).map(|i| i % CLASSES).collect();
    grad_check("classifier_ce", &inputs, tol, |t, v| {
        let logits = classifier(t, v[0], v[1], v[2], &bias)?;
        cross_entropy_graph(t, logits, &labels)
    })
}

fn combined(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inputs, h) = head_inputs(&mut rng);
    inputs.push(("cls0.w", uniform(HIDDEN, M, 1.0, &mut rng)));
    inputs.push(("cls1.w", uniform(CLASSES, HIDDEN, 1.0, &mut rng)));
    let bias = [uniform(1, HIDDEN, 0.3, &mut rng), uniform(1, CLASSES, 0.3, &mut rng)];
    let labels: Vec<usize> = (0..B).map(|i| (i + 1) % CLASSES).collect();
    grad_check("combined_loss", &inputs, tol, |t, v| {
        let (gauss, critic) = heads(t, v, &h)?;
        let c1 = encode_view_graph(t, v[0], &gauss, h.eps[0].clone())?;
        let c2 = encode_view_graph(t, v[1], &gauss, h.eps[1].clone())?;
        let terms = ib_graph(t, &c1, &c2, &critic, &h.perm)?;
        let logits = classifier(t, v[0], v[8], v[9], &bias)?;
        let ce = cross_entropy_graph(t, logits, &labels)?;
        Ok(combined_loss_graph(t, Some(ce), Some(&terms), 0.5)?.0)
    })
}

fn corrupted(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = uniform(B, M, 1.0, &mut rng);
    grad_check("corrupted_sin", &[("x", uniform(B, M, 1.0, &mut rng))], tol, |t, v| {
        // The derivative of sin is cos, not sin.
        let y = t.elementwise(v[0], f64::sin, f64::sin);
        project(t, y, &c)
    })
}
