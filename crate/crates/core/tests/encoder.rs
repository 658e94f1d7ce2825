use caro::diffcore::Tensor;
use caro::encoder::{
    adaptive_field, adaptive_field_with_weights, aggregate_views, aggregate_with_gate, global_pool, AdaptiveFieldParams,
    AggregationGateParams, AlphaRecord, AlphaTable, DialogueSample, Speaker, TokenEmbeddingSequence, Turn, Vocabulary,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn sequence(emb: Tensor<f64>, mask: Vec<bool>) -> TokenEmbeddingSequence<f64> {
    TokenEmbeddingSequence::new(emb, mask).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// Step-by-step oracle, plain loops: concat, W1·s, ReLU, per-position dot,
// sigmoid, masked softmax, weighted sum.
fn field_oracle(e: &[Vec<f64>], mask: &[bool], w1: &[Vec<f64>], w: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = e.len();
    let m = e[0].len();
    let mut s = Vec::new();
    for (row, &keep) in e.iter().zip(mask) {
        for &x in row {
            s.push(if keep { x } else { 0.0 });
        }
    }
    let mut h = Vec::new();
    for row in w1 {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(&s) {
            acc += a * b;
        }
        h.push(if acc > 0.0 { acc } else { 0.0 });
    }
    let mut alpha = Vec::new();
    for wi in w {
        let mut acc = 0.0;
        for (a, b) in wi.iter().zip(&h) {
            acc += a * b;
        }
        alpha.push(sigmoid(acc));
    }
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        if mask[i] && alpha[i] > max {
            max = alpha[i];
        }
    }
    let mut weights = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        if mask[i] {
            weights[i] = (alpha[i] - max).exp();
            total += weights[i];
        }
    }
    for wgt in weights.iter_mut() {
        *wgt /= total;
    }
    let mut out = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            out[j] += weights[i] * if mask[i] { e[i][j] } else { 0.0 };
        }
    }
    (out, weights)
}

fn gate_oracle(v1: &[f64], v2: &[f64], w2: &[Vec<f64>], w3: &[Vec<f64>]) -> Vec<f64> {
    let sum: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a + b).collect();
    let h: Vec<f64> = w2
        .iter()
        .map(|row| row.iter().zip(&sum).map(|(a, b)| a * b).sum::<f64>().max(0.0))
        .collect();
    (0..v1.len())
        .map(|j| {
            let beta = sigmoid(w3[j].iter().zip(&h).map(|(a, b)| a * b).sum());
            beta * v1[j] + (1.0 - beta) * v2[j]
        })
        .collect()
}

fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

#[test]
fn adaptive_field_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, m, r1) = (4, 3, 2);
    for mask in [vec![true; 4], vec![false, true, true, true], vec![false, false, true, true]] {
        let emb = random_tensor(n, m, &mut rng);
        let params = AdaptiveFieldParams {
            w1: random_tensor(r1, n * m, &mut rng).map(|x| 2.0 * x),
            w: random_tensor(n, r1, &mut rng).map(|x| 3.0 * x),
        };
        let seq = sequence(emb.clone(), mask.clone());
        let (view, weights) = adaptive_field_with_weights(&seq, &params).unwrap();
        let (want, want_w) = field_oracle(&rows_of(&emb), &mask, &rows_of(&params.w1), &rows_of(&params.w));
        for (a, b) in view.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (a, b) in weights.data().iter().zip(&want_w) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gate_matches_elementwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (m, r2) = (4, 3);
    for _ in 0..5 {
        let v1 = random_tensor(1, m, &mut rng);
        let v2 = random_tensor(1, m, &mut rng);
        let gate = AggregationGateParams {
            w2: random_tensor(r2, m, &mut rng).map(|x| 2.0 * x),
            w3: random_tensor(m, r2, &mut rng).map(|x| 2.0 * x),
        };
        let out = aggregate_views(&v1, &v2, &gate).unwrap();
        let want = gate_oracle(v1.data(), v2.data(), &rows_of(&gate.w2), &rows_of(&gate.w3));
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_gate_output_weights_give_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let v1 = random_tensor(1, 5, &mut rng);
    let v2 = random_tensor(1, 5, &mut rng);
    let gate = AggregationGateParams {
        w2: random_tensor(7, 5, &mut rng),
        w3: Tensor::zeros(5, 7),
    };
    let (out, beta) = aggregate_with_gate(&v1, &v2, &gate).unwrap();
    assert!(beta.data().iter().all(|&b| b == 0.5));
    for ((o, a), b) in out.data().iter().zip(v1.data()).zip(v2.data()) {
        assert!((o - (a + b) / 2.0).abs() < 1e-12);
    }
}

#[test]
fn gate_shape_mismatch_rejected() {
    let gate = AggregationGateParams {
        w2: Tensor::zeros(2, 3),
        w3: Tensor::zeros(3, 2),
    };
    let v1 = Tensor::<f64>::zeros(1, 3);
    let v2 = Tensor::<f64>::zeros(1, 4);
    assert!(aggregate_views(&v1, &v2, &gate).is_err());
}

#[test]
fn single_precision_agrees_with_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (n, m, r1) = (5, 4, 2);
    let emb = random_tensor(n, m, &mut rng);
    let w1 = random_tensor(r1, n * m, &mut rng);
    let w = random_tensor(n, r1, &mut rng);
    let mask = vec![false, true, true, true, true];
    let to32 = |t: &Tensor<f64>| Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&x| x as f32).collect()).unwrap();
    let v64 = adaptive_field(&sequence(emb.clone(), mask.clone()), &AdaptiveFieldParams { w1: w1.clone(), w: w.clone() }).unwrap();
    let seq32 = TokenEmbeddingSequence::new(to32(&emb), mask).unwrap();
    let v32 = adaptive_field(&seq32, &AdaptiveFieldParams { w1: to32(&w1), w: to32(&w) }).unwrap();
    for (a, b) in v64.data().iter().zip(v32.data()) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
}

#[test]
fn uniform_alpha_model_dumps_reciprocal_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (n, m, r1) = (6, 3, 2);
    let params = AdaptiveFieldParams::zeros(n, m, r1);
    let mut records = Vec::new();
    for real in 1..=n {
        let mask: Vec<bool> = (0..n).map(|i| i >= n - real).collect();
        let (_, w) = adaptive_field_with_weights(&sequence(random_tensor(n, m, &mut rng), mask.clone()), &params).unwrap();
        let weights: Vec<f64> = w.data().iter().zip(&mask).filter(|(_, &k)| k).map(|(x, _)| *x).collect();
        for &x in &weights {
            assert!((x - 1.0 / real as f64).abs() < 1e-15);
        }
        records.push(AlphaRecord {
            sample_id: format!("s{real}"),
            label: Some(0),
            weights,
        });
    }
    let table = AlphaTable { max_len: n, records };
    let mut tsv = Vec::new();
    table.write_samples_tsv(&mut tsv).unwrap();
    let text = String::from_utf8(tsv).unwrap();
    assert_eq!(text.lines().count(), 1 + (1..=n).sum::<usize>());
}

#[test]
fn three_real_tokens_give_three_weights_summing_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let params = AdaptiveFieldParams {
        w1: random_tensor(2, 12, &mut rng),
        w: random_tensor(4, 2, &mut rng),
    };
    let mask = vec![false, true, true, true];
    let (_, w) = adaptive_field_with_weights(&sequence(random_tensor(4, 3, &mut rng), mask), &params).unwrap();
    assert_eq!(w.data()[0], 0.0);
    let real: f64 = w.data()[1..].iter().sum();
    assert!((real - 1.0).abs() < 1e-12);
}

#[test]
fn permuting_tokens_changes_adaptive_view() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, m) = (4, 3);
    let emb = random_tensor(n, m, &mut rng);
    let params = AdaptiveFieldParams {
        w1: random_tensor(2, n * m, &mut rng).map(|x| 3.0 * x),
        w: random_tensor(n, 2, &mut rng).map(|x| 3.0 * x),
    };
    let mut rows = rows_of(&emb);
    rows.swap(0, 3);
    let swapped = Tensor::from_rows(&rows).unwrap();
    let a = adaptive_field(&sequence(emb, vec![true; n]), &params).unwrap();
    let b = adaptive_field(&sequence(swapped, vec![true; n]), &params).unwrap();
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6);
}

fn arb_case() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (2usize..8, 2usize..6, 1usize..8, any::<u64>()).prop_map(|(n, m, real, seed)| (n, m, real.min(n), seed))
}

fn front_mask(n: usize, real: usize) -> Vec<bool> {
    (0..n).map(|i| i >= n - real).collect()
}

proptest! {
    #[test]
    fn zero_w1_reduces_to_global_pool((n, m, real, seed) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sequence(random_tensor(n, m, &mut rng), front_mask(n, real));
        let params = AdaptiveFieldParams { w1: Tensor::zeros(1, n * m), w: random_tensor(n, 1, &mut rng) };
        let a = adaptive_field(&seq, &params).unwrap();
        let p = global_pool(&seq).unwrap();
        for (x, y) in a.data().iter().zip(p.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn field_weights_normalized_and_padding_free((n, m, real, seed) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = front_mask(n, real);
        let seq = sequence(random_tensor(n, m, &mut rng), mask.clone());
        let params = AdaptiveFieldParams {
            w1: random_tensor(1, n * m, &mut rng).map(|x| 5.0 * x),
            w: random_tensor(n, 1, &mut rng).map(|x| 5.0 * x),
        };
        let (_, w) = adaptive_field_with_weights(&seq, &params).unwrap();
        let mut total = 0.0;
        for (&x, &keep) in w.data().iter().zip(&mask) {
            if keep { total += x } else { prop_assert_eq!(x, 0.0) }
        }
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn aggregate_is_coordinatewise_convex(m in 1usize..8, r2 in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v1 = random_tensor(1, m, &mut rng);
        let v2 = random_tensor(1, m, &mut rng);
        let gate = AggregationGateParams {
            w2: random_tensor(r2, m, &mut rng).map(|x| 4.0 * x),
            w3: random_tensor(m, r2, &mut rng).map(|x| 4.0 * x),
        };
        let (out, beta) = aggregate_with_gate(&v1, &v2, &gate).unwrap();
        for j in 0..m {
            let (a, b, o) = (v1.data()[j], v2.data()[j], out.data()[j]);
            prop_assert!(o >= a.min(b) - 1e-12 && o <= a.max(b) + 1e-12);
            prop_assert!((0.0..=1.0).contains(&beta.data()[j]));
        }
    }

    #[test]
    fn pool_is_order_invariant((n, m, real, seed) in arb_case()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = random_tensor(n, m, &mut rng);
        let mask = front_mask(n, real);
        let mut rows = rows_of(&emb);
        rows[n - real..].reverse();
        let a = global_pool(&sequence(emb, mask.clone())).unwrap();
        let b = global_pool(&sequence(Tensor::from_rows(&rows).unwrap(), mask)).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_keeps_current_utterance(turns in 0usize..8, words in 1usize..6, n in 2usize..24) {
        let history: Vec<Turn> = (0..turns)
            .map(|t| if t % 2 == 0 { Turn::user(format!("hist{t} filler")) } else { Turn::agent(format!("reply{t}")) })
            .collect();
        let utterance: Vec<String> = (0..words).map(|i| format!("cur{i}")).collect();
        let sample = DialogueSample::new("s", history, utterance.join(" "), None);
        let vocab = Vocabulary::build([&sample]);
        let enc = vocab.encode(&sample, n).unwrap();
        prop_assert_eq!(enc.ids.len(), n);
        let keep = words.min(n);
        let tail: Vec<usize> = utterance[words - keep..].iter().map(|w| vocab.id(w)).collect();
        prop_assert_eq!(&enc.ids[n - keep..], tail.as_slice());
        if words < n {
            prop_assert_eq!(enc.ids[n - words - 1], vocab.id(Speaker::User.tag()));
        }
        let real = enc.mask.iter().filter(|&&k| k).count();
        prop_assert!(enc.mask[n - real..].iter().all(|&k| k));
    }
}
