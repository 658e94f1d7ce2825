use caro::data::{generate_synthetic, IntentInventory, SplitBundle, SynthSpec};
use caro::encoder::{DialogueSample, Turn};
use caro::pipeline::*;
use caro::ParamStore64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec(k: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        k,
        train: 300,
        unlabeled: 200,
        valid: 100,
        test: 100,
        mean_topic_turns: 2.0,
        noise_turns: 0,
        seed,
        ..SynthSpec::default()
    }
}

fn small_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        stage1_epochs: 6,
        stage2_epochs: 3,
        max_len: 24,
        embed_dim: 12,
        r1: 6,
        r2: 8,
        proj_dim: 6,
        classifier_hidden: 16,
        gauss_hidden: 12,
        critic_hidden: 12,
        seed,
        ..TrainingConfig::desk()
    }
}

fn bundle(k: usize, seed: u64) -> SplitBundle {
    generate_synthetic(&small_spec(k, seed)).unwrap().1
}

fn params(store: &ParamStore64) -> Vec<(String, Vec<u64>)> {
    store
        .ids()
        .map(|id| (store.name(id).to_string(), store.value(id).data().iter().map(|x| x.to_bits()).collect()))
        .collect()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("u{i}")).collect()
}

#[test]
fn pseudo_ood_stays_inside_source_interval() {
    let reps: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { 0.0 } else { 10.0 }, 1.0]).collect();
    let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = synthesize_pseudo_ood(&reps, &labels, 1000, (0.2, 0.8), &mut rng).unwrap();
    assert_eq!(out.len(), 1000);
    for p in &out {
        assert!((2.0..=8.0).contains(&p.representation[0]), "{}", p.representation[0]);
        assert!((p.representation[1] - 1.0).abs() < 1e-15);
        assert_ne!(p.classes.0, p.classes.1);
    }
}

#[test]
fn unit_coefficient_returns_first_source() {
    let reps = vec![vec![1.0, 2.0], vec![-3.0, 4.0], vec![5.0, -6.0]];
    let labels = vec![0, 1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for p in synthesize_pseudo_ood(&reps, &labels, 20, (1.0, 1.0), &mut rng).unwrap() {
        assert_eq!(p.coefficient, 1.0);
        assert_eq!(p.representation, reps[p.classes.0]);
    }
}

#[test]
fn single_class_synthesis_rejected() {
    let reps = vec![vec![1.0], vec![2.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(synthesize_pseudo_ood(&reps, &[0, 0], 10, (0.2, 0.8), &mut rng).is_err());
    assert!(synthesize_pseudo_ood(&reps, &[0, 1], 10, (0.8, 0.2), &mut rng).is_err());
}

#[test]
fn constant_predictors_mine_all_or_nothing() {
    let k = 3;
    let always: Vec<Vec<f64>> = (0..6).map(|_| vec![0.0, 0.0, 0.0, 5.0]).collect();
    let never: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, 0.0, i as f64, -5.0]).collect();
    assert_eq!(MinedPool::from_logits(&ids(6), &always, k).len(), 6);
    assert!(MinedPool::from_logits(&ids(6), &never, k).is_empty());
}

#[test]
fn hand_logits_mine_the_argmax_oracle() {
    let k = 2;
    let logits = vec![
        vec![2.0, 0.0, 1.0],
        vec![0.0, 0.1, 3.0],
        vec![0.5, 0.4, 0.3],
        vec![-1.0, -2.0, -0.5],
        vec![1.0, 1.0, 1.0],
    ];
    let pool = MinedPool::from_logits(&ids(5), &logits, k);
    let oracle: Vec<String> = logits
        .iter()
        .enumerate()
        .filter(|(_, l)| l[k] > l[0] && l[k] > l[1])
        .map(|(i, _)| format!("u{i}"))
        .collect();
    let got: Vec<String> = pool.members.iter().map(|m| m.sample_id.clone()).collect();
    assert_eq!(got, oracle);
    assert_eq!(got, ["u1", "u3"]);
    assert!(pool.members.iter().all(|m| m.predicted == k && m.confidence > 1.0 / 3.0));
    assert!(pool.manifest().starts_with("mined\t2\n"));
}

#[test]
fn classify_dominant_logit_and_tie_rule() {
    assert_eq!(Prediction::from_logits(&[0.0, 0.0, 0.0, 10.0, 0.0]).label, 3);
    let tie = Prediction::from_logits(&[4.0, 1.0, 4.0]);
    assert_eq!(tie.label, 0);
    assert!(MinedPool::from_logits(&ids(1), &[vec![4.0, 1.0, 4.0]], 2).is_empty());
    let p = Prediction::from_logits(&[1.0, 2.0, 3.0]);
    assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn msp_rejects_low_confidence() {
    assert_eq!(msp_decision(&[3.0, 0.0, 0.0, 99.0], 3, MSP_THRESHOLD), 0);
    assert_eq!(msp_decision(&[0.1, 0.0, 0.05, -9.0], 3, MSP_THRESHOLD), 3);
    assert_eq!(msp_decision(&[0.0, 0.0, 0.0, 9.0], 3, MSP_THRESHOLD), 3);
    let c = msp_config(&TrainingConfig::desk());
    assert!(c.ablations.no_unlabeled);
    assert_eq!(c.pseudo_ood_count, Some(0));
}

#[test]
fn default_config_matches_published_hyperparameters() {
    let c = TrainingConfig::default();
    assert_eq!((c.lambda, c.stage1_epochs, c.stage2_epochs, c.batch_size), (0.5, 15, 10, 25));
    assert_eq!((c.encoder_lr, c.head_lr), (1e-5, 1e-4));
    assert_eq!((c.r1, c.r2, c.proj_dim, c.max_len), (16, 48, 64, 256));
    assert_eq!((c.mix_lo, c.mix_hi, c.patience), (0.2, 0.8, 3));
    let bad = TrainingConfig { mix_lo: 0.0, ..c.clone() };
    assert!(bad.validate().is_err());
    let bad = TrainingConfig { r1: c.embed_dim, ..c };
    assert!(bad.validate().is_err());
}

#[test]
fn empty_or_unlabeled_train_set_rejected() {
    let b = bundle(2, 1);
    let cfg = small_config(0);
    let mut data = TrainingData::from_bundle(&b);
    data.train = &[];
    assert!(train_caro(&cfg, data).is_err());
    let bad = vec![DialogueSample::new("x", vec![], "hello there", None)];
    let mut data = TrainingData::from_bundle(&b);
    data.train = &bad;
    assert!(train_caro(&cfg, data).is_err());
}

#[test]
fn zero_epochs_leave_initialization_untouched() {
    let b = bundle(2, 2);
    let mut cfg = small_config(7);
    cfg.stage1_epochs = 0;
    cfg.ablations.no_unlabeled = true;
    let data = TrainingData::from_bundle(&b);
    let trained = train_caro(&cfg, data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fresh = CaroModel::new(cfg.clone(), training_vocabulary(&data, &cfg), b.intents.clone(), &mut rng).unwrap();
    assert_eq!(params(&trained.model.store), params(&fresh.store));
    assert!(trained.log.steps.is_empty());
}

fn separable_samples(tag: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<DialogueSample> {
    use rand::Rng;
    let words = [["alpha", "amber", "anvil", "apple"], ["bravo", "basil", "beryl", "bison"]];
    let filler = ["the", "please", "now", "some"];
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut pick = |count: usize| -> String {
                (0..count)
                    .map(|j| if j % 2 == 0 { words[label][rng.random_range(0..4)] } else { filler[rng.random_range(0..4)] })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let history = vec![Turn::user(pick(3)), Turn::agent(pick(2))];
            let u = pick(4);
            DialogueSample::new(format!("{tag}{i}"), history, u, Some(label))
        })
        .collect()
}

#[test]
fn separable_intents_reach_high_stage_one_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let intents = IntentInventory::new(vec!["a".into(), "b".into()]).unwrap();
    let train = separable_samples("t", 200, &mut rng);
    let valid = separable_samples("v", 100, &mut rng);
    let test = separable_samples("x", 60, &mut rng);
    let b = SplitBundle::new(intents, train, vec![], valid, test).unwrap();
    let mut cfg = small_config(1);
    cfg.ablations.no_unlabeled = true;
    let out = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    let acc = *out.log.stage1_valid_acc.last().unwrap();
    assert!(acc >= 0.95, "stage-1 validation accuracy {acc}");
    let preds = classify(&out.model, &b.test).unwrap();
    let hits = preds.iter().zip(&b.test).filter(|(p, s)| Some(p.label) == s.label).count();
    assert!(hits as f64 / b.test.len() as f64 >= 0.95);
}

#[test]
fn stage_one_loss_trends_down() {
    let b = bundle(3, 4);
    let mut cfg = small_config(2);
    cfg.ablations.no_unlabeled = true;
    let out = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    let losses: Vec<f64> = out.log.epoch_loss.iter().filter(|(s, _)| *s == 1).map(|(_, l)| *l).take(5).collect();
    assert_eq!(losses.len(), 5);
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 1, "{losses:?}");
    assert!(losses[4] < losses[0]);
}

#[test]
fn no_unlabeled_ignores_the_unlabeled_pool() {
    let a = bundle(2, 5);
    let other = bundle(2, 99);
    let b = SplitBundle::new(
        a.intents.clone(),
        a.train.clone(),
        other.unlabeled.samples().iter().map(|s| {
            let mut s = s.clone();
            s.id = format!("other-{}", s.id);
            s.label = Some(0);
            s
        }).collect(),
        a.valid.clone(),
        a.test.clone(),
    )
    .unwrap();
    let mut cfg = small_config(3);
    cfg.stage1_epochs = 2;
    cfg.ablations.no_unlabeled = true;
    let x = train_caro(&cfg, TrainingData::from_bundle(&a)).unwrap();
    let y = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    assert_eq!(params(&x.model.store), params(&y.model.store));
}

#[test]
fn identical_runs_are_bit_identical() {
    let b = bundle(3, 6);
    let mut cfg = small_config(4);
    cfg.stage1_epochs = 3;
    cfg.stage2_epochs = 2;
    let x = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    let y = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    assert_eq!(params(&x.model.store), params(&y.model.store));
    assert_eq!(x.log, y.log);
    assert_eq!(x.mined, y.mined);
    assert!(x.log.steps.iter().any(|s| s.stage == 2 && s.loss.ib.is_some()));
    let m1 = mine_ood(&x.model, &b.unlabeled).unwrap();
    let m2 = mine_ood(&x.model, &b.unlabeled).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn zero_lambda_stage_two_is_plain_cross_entropy() {
    let b = bundle(2, 7);
    let mut cfg = small_config(5);
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 1;
    cfg.ablations.no_ib = true;
    let snapshot = b.train.clone();
    let out = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    let stage2: Vec<_> = out.log.steps.iter().filter(|s| s.stage == 2).collect();
    assert!(!stage2.is_empty());
    for s in stage2 {
        assert!(s.loss.ib.is_none());
        assert_eq!(s.loss.total, s.loss.ce.unwrap());
    }
    assert_eq!(b.train, snapshot);
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let b = bundle(2, 8);
    let mut cfg = small_config(6);
    cfg.stage1_epochs = 2;
    cfg.stage2_epochs = 1;
    let out = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&out.model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(params(&out.model.store), params(&back.store));
    assert_eq!(back.config, out.model.config);
    assert_eq!(back.vocab, out.model.vocab);
    let a = classify(&out.model, &b.test).unwrap();
    let c = classify(&back, &b.test).unwrap();
    assert_eq!(a, c);

    let ckpt = Checkpoint::load(&path).unwrap();
    let other = caro::encoder::Vocabulary::build(&[DialogueSample::new("z", vec![Turn::agent("hi")], "zzz", None)]);
    assert!(ckpt.check_vocab(&other).is_err());
    assert!(ckpt.check_vocab(&out.model.vocab).is_ok());
    let mut tampered = ckpt.clone();
    tampered.vocab.push("extra-token".into());
    assert!(tampered.into_model().is_err());
    let mut reshaped = ckpt;
    reshaped.tensors[0].rows += 1;
    assert!(reshaped.into_model().is_err());
}

#[test]
fn dumps_respect_ablations_and_normalize() {
    let b = bundle(2, 9);
    let mut cfg = small_config(7);
    cfg.stage1_epochs = 1;
    cfg.ablations.no_unlabeled = true;
    let out = train_caro(&cfg, TrainingData::from_bundle(&b)).unwrap();
    let table = dump_alpha(&out.model, &b.valid).unwrap();
    assert_eq!(table.records.len(), b.valid.len());
    for r in &table.records {
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let beta = dump_beta(&out.model, &b.valid).unwrap();
    assert_eq!(beta.mean_beta.len(), cfg.embed_dim);
    assert!(beta.mean_beta.iter().all(|&x| x > 0.0 && x < 1.0));

    let mut nomv = cfg.clone();
    nomv.ablations.no_multiview = true;
    let m = train_caro(&nomv, TrainingData::from_bundle(&b)).unwrap();
    assert!(dump_alpha(&m.model, &b.valid).is_err());
    let mut nogate = cfg;
    nogate.ablations.no_gate = true;
    let m = train_caro(&nogate, TrainingData::from_bundle(&b)).unwrap();
    assert!(dump_beta(&m.model, &b.valid).is_err());
}

#[test]
fn context_cut_changes_only_the_history() {
    let names = IntentInventory::new(vec!["a".into(), "b".into()]).unwrap();
    let s = DialogueSample::new(
        "s",
        vec![Turn::user("alpha one"), Turn::agent("beta two"), Turn::user("gamma three")],
        "delta four",
        Some(0),
    );
    let b = SplitBundle::new(names, vec![s.clone()], vec![], vec![], vec![]).unwrap();
    let cfg = TrainingConfig {
        max_context_turns: Some(1),
        ..small_config(0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = TrainingData::from_bundle(&b);
    let model = CaroModel::new(cfg.clone(), training_vocabulary(&data, &cfg), b.intents.clone(), &mut rng).unwrap();
    let enc = model.encode(std::slice::from_ref(&s)).unwrap();
    let cut = model.vocab.encode(&s.truncated(1), cfg.max_len).unwrap();
    assert_eq!(enc[0], cut);
    assert_ne!(enc[0], model.vocab.encode(&s, cfg.max_len).unwrap());
}

proptest! {
    #[test]
    fn pseudo_ood_is_coordinatewise_convex(seed in any::<u64>(), lo in 0.05f64..0.5, width in 0.0f64..0.45) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reps: Vec<Vec<f64>> = (0..12)
            .map(|i| (0..3).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0).collect())
            .collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let hi = lo + width;
        let out = synthesize_pseudo_ood(&reps, &labels, 50, (lo, hi), &mut rng).unwrap();
        for p in out {
            prop_assert!(p.coefficient >= lo && p.coefficient <= hi);
            prop_assert!(labels.iter().any(|&l| l == p.classes.0) && p.classes.0 != p.classes.1);
            let (a, b) = (p.classes.0, p.classes.1);
            let lo_hull: Vec<f64> = (0..3).map(|j| reps.iter().zip(&labels).filter(|(_, &l)| l == a || l == b).map(|(r, _)| r[j]).fold(f64::INFINITY, f64::min)).collect();
            let hi_hull: Vec<f64> = (0..3).map(|j| reps.iter().zip(&labels).filter(|(_, &l)| l == a || l == b).map(|(r, _)| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
            for j in 0..3 {
                prop_assert!(p.representation[j] >= lo_hull[j] - 1e-12 && p.representation[j] <= hi_hull[j] + 1e-12);
            }
        }
    }
}
