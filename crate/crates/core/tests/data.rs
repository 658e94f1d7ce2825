use std::collections::HashSet;
use std::fs;

use caro::data::*;
use caro::encoder::{DialogueSample, Turn};
use proptest::prelude::*;

fn write(dir: &std::path::Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, lines.join("\n")).unwrap();
    p
}

const DIALOGUE: &str = r#"{"dialogue_id":"d1","turns":[
 {"speaker":"user","text":"Hello","intent":"greet"},
 {"speaker":"agent","text":"hi, what do you need"},
 {"speaker":"user","text":"book a table for two","intent":"book_table"},
 {"speaker":"agent","text":"which day"},
 {"speaker":"user","text":"tell me a joke","intent":"out_of_scope"},
 {"speaker":"agent","text":"sorry"},
 {"speaker":"user","text":"what is the weather","intent":"weather"}]}"#;

#[test]
fn loader_maps_ood_filters_greetings_and_builds_histories() {
    let dir = tempfile::tempdir().unwrap();
    let line = DIALOGUE.replace('\n', "");
    let p = write(dir.path(), "a.jsonl", &[&line]);
    let c = load_star_format(&p, &LoadOptions::default()).unwrap();
    assert_eq!(c.intents().names(), ["book_table", "weather"]);
    let samples: Vec<_> = c.samples().collect();
    assert_eq!(samples.len(), 3, "greeting dropped");
    assert_eq!(samples[0].id, "d1#2");
    assert_eq!(samples[0].history.len(), 2, "greeting stays in history");
    assert_eq!(samples[1].label, Some(c.intents().ood_label()));
    assert_eq!(samples[2].history.len(), 6);
    assert_eq!(samples[2].label, c.intents().label_of("weather"));
}

#[test]
fn four_user_turns_give_four_samples() {
    let dir = tempfile::tempdir().unwrap();
    let turns: Vec<String> = (0..4)
        .flat_map(|i| {
            [
                format!(r#"{{"speaker":"user","text":"request number {i}","intent":"a{}"}}"#, i % 2),
                format!(r#"{{"speaker":"agent","text":"reply {i}"}}"#),
            ]
        })
        .collect();
    let line = format!(r#"{{"dialogue_id":"x","turns":[{}]}}"#, turns.join(","));
    let p = write(dir.path(), "x.jsonl", &[&line]);
    let c = load_star_format(&p, &LoadOptions::default()).unwrap();
    let lens: Vec<_> = c.samples().map(|s| s.history.len()).collect();
    assert_eq!(lens, [0, 2, 4, 6]);
}

#[test]
fn malformed_records_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "a.jsonl",
        &[
            r#"{"dialogue_id":"ok","turns":[{"speaker":"user","text":"play music","intent":"music"}]}"#,
            r#"{"dialogue_id":"bad1","turns":[]}"#,
            "not json at all",
            r#"{"dialogue_id":"bad2","turns":[{"speaker":"agent","text":"x","intent":"music"}]}"#,
        ],
    );
    write(
        dir.path(),
        "b.jsonl",
        &[r#"{"dialogue_id":"ok2","split":"test","turns":[{"speaker":"user","text":"stop music","intent":"custom"}]}"#],
    );
    fs::write(dir.path().join("ignored.txt"), "garbage").unwrap();
    let c = load_star_format(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c.skipped, 3);
    assert_eq!(c.entries()[1].split, Some(SplitTag::Test));
    assert_eq!(c.entries()[1].sample.label, Some(1));
}

#[test]
fn custom_greeting_list_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "a.jsonl",
        &[r#"{"dialogue_id":"g","turns":[{"speaker":"user","text":"Yo!","intent":"a"},{"speaker":"user","text":"hello","intent":"b"}]}"#],
    );
    let opts = LoadOptions {
        greetings: vec!["yo".into()],
        ..LoadOptions::default()
    };
    let c = load_star_format(&p, &opts).unwrap();
    assert_eq!(c.samples().map(|s| s.utterance.as_str()).collect::<Vec<_>>(), ["hello"]);
}

fn toy_corpus(n_ind: usize, n_ood: usize) -> Corpus {
    let intents = IntentInventory::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let mut entries = Vec::new();
    let mut push = |id: String, label: usize, split| {
        entries.push(CorpusEntry {
            sample: DialogueSample::new(format!("{id}#0"), vec![], "some words", Some(label)),
            split,
        })
    };
    for i in 0..n_ind {
        push(format!("ind{i}"), i % 3, Some(SplitTag::Train));
    }
    for i in 0..n_ood {
        push(format!("ood{i}"), 3, Some(SplitTag::Train));
    }
    for i in 0..50 {
        push(format!("val{i}"), i % 3, Some(SplitTag::Valid));
        push(format!("test{i}"), i % 4, Some(SplitTag::Test));
    }
    Corpus::new(entries, intents, "toy").unwrap()
}

fn ids(v: &[DialogueSample]) -> Vec<String> {
    v.iter().map(|s| s.id.clone()).collect()
}

#[test]
fn hidden_fraction_counts() {
    let c = toy_corpus(1000, 40);
    let b = make_splits(&c, 0.30, 1).unwrap();
    let truth = b.unlabeled_truth.labels();
    assert_eq!(truth.iter().filter(|&&l| l < 3).count(), 300);
    assert_eq!(truth.iter().filter(|&&l| l == 3).count(), 40);
    assert_eq!(b.train.len(), 700);

    let b0 = make_splits(&c, 0.0, 1).unwrap();
    assert!(b0.unlabeled_truth.labels().iter().all(|&l| l == 3));
    assert_eq!(b0.unlabeled.len(), 40);
}

#[test]
fn splits_are_deterministic_disjoint_and_hide_labels() {
    let c = toy_corpus(400, 30);
    let a = make_splits(&c, 0.3, 9).unwrap();
    let b = make_splits(&c, 0.3, 9).unwrap();
    assert_eq!(a, b);
    let other = make_splits(&c, 0.3, 10).unwrap();
    assert_ne!(ids(&a.train), ids(&other.train));

    let mut seen = HashSet::new();
    for part in [&a.train, a.unlabeled.samples(), &a.valid, &a.test] {
        for s in part.iter() {
            assert!(seen.insert(s.id.clone()), "{} twice", s.id);
        }
    }
    assert!(a.valid.iter().all(|s| s.label.unwrap() < 3));
    assert!(a.unlabeled.samples().iter().all(|s| s.label.is_none()));
    assert_eq!(a.unlabeled_truth.labels().len(), a.unlabeled.len());
}

#[test]
fn untagged_corpus_is_carved_ten_percent() {
    let intents = IntentInventory::new(vec!["a".into(), "b".into()]).unwrap();
    let entries = (0..1000)
        .map(|i| CorpusEntry {
            sample: DialogueSample::new(format!("s{i}#0"), vec![], "w", Some(if i % 10 == 0 { 2 } else { i % 2 })),
            split: None,
        })
        .collect();
    let c = Corpus::new(entries, intents, "flat").unwrap();
    let b = make_splits(&c, 0.3, 3).unwrap();
    assert_eq!(b.test.len(), 100);
    let ood_left = b.unlabeled_truth.labels().iter().filter(|&&l| l == 2).count();
    assert_eq!(ood_left + b.test.iter().filter(|s| s.label == Some(2)).count(), 100);
    let train_ind = 900 - ood_left;
    let hidden_ind = b.unlabeled_truth.labels().iter().filter(|&&l| l < 2).count();
    assert_eq!(hidden_ind, (0.3 * train_ind as f64).floor() as usize);
    assert_eq!(b.valid.len(), ((train_ind - hidden_ind) as f64 * 0.1).floor() as usize);
}

#[test]
fn corpus_without_ood_still_splits() {
    let c = toy_corpus(100, 0);
    let b = make_splits(&c, 0.3, 0).unwrap();
    assert_eq!(b.unlabeled.len(), 30);
    assert!(make_splits(&c, 1.0, 0).is_err());
}

#[test]
fn manifest_round_trip_rebuilds_bundle() {
    let c = toy_corpus(200, 20);
    let b = make_splits(&c, 0.3, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("splits.tsv");
    b.manifest().write(&p).unwrap();
    let m = SplitManifest::read(&p).unwrap();
    assert_eq!(m, b.manifest());
    assert_eq!(m.apply(&c).unwrap(), b);
}

#[test]
fn synthetic_counts_match_spec() {
    let spec = SynthSpec::default();
    let (corpus, b, _) = generate_synthetic(&spec).unwrap();
    assert_eq!(b.train.len(), 2000);
    assert_eq!(b.unlabeled.len(), 1000);
    assert_eq!(b.valid.len(), 500);
    assert_eq!(b.test.len(), 500);
    assert_eq!(b.k(), 5);
    assert_eq!(b.unlabeled_truth.labels().iter().filter(|&&l| l == 5).count(), 300);
    assert_eq!(b.test.iter().filter(|s| s.label == Some(5)).count(), 150);
    assert!(b.train.iter().all(|s| s.label.unwrap() < 5));
    assert_eq!(corpus.len(), 4000);
    assert_eq!(make_splits(&corpus, 0.3, 123).unwrap(), b);
}

#[test]
fn synthetic_history_length_grows_with_noise() {
    for noise in [0, 1, 4] {
        let spec = SynthSpec {
            train: 1000,
            unlabeled: 0,
            valid: 0,
            test: 0,
            noise_turns: noise,
            seed: 5,
            ..SynthSpec::default()
        };
        let (c, _, _) = generate_synthetic(&spec).unwrap();
        let mean = c.mean_history_turns();
        let expected = 5.0 + noise as f64;
        assert!((mean - expected).abs() <= 0.5, "noise {noise}: mean {mean}");
        assert!(c.samples().all(|s| s.history.len() >= noise));
    }
}

#[test]
fn zero_noise_histories_are_on_topic() {
    let spec = SynthSpec {
        noise_turns: 0,
        train: 300,
        unlabeled: 100,
        valid: 10,
        test: 50,
        ..SynthSpec::default()
    };
    let (c, _, lex) = generate_synthetic(&spec).unwrap();
    let noise: HashSet<&str> = lex.noise.iter().map(String::as_str).collect();
    for s in c.samples() {
        for t in &s.history {
            assert!(t.text.split(' ').all(|w| !noise.contains(w)), "{}", t.text);
        }
    }

    let noisy = SynthSpec { noise_turns: 2, ..spec };
    let (c, _, lex) = generate_synthetic(&noisy).unwrap();
    let noise: HashSet<&str> = lex.noise.iter().map(String::as_str).collect();
    for s in c.samples() {
        let n = s.history.iter().filter(|t| t.text.split(' ').all(|w| noise.contains(w))).count();
        assert_eq!(n, 2);
    }
}

#[test]
fn synthetic_ood_templates_are_heldout_and_keyword_free() {
    let spec = SynthSpec {
        train: 200,
        unlabeled: 200,
        valid: 20,
        test: 200,
        ..SynthSpec::default()
    };
    let (_, b, lex) = generate_synthetic(&spec).unwrap();
    let ind: HashSet<&String> = lex.ind.iter().flatten().collect();
    let ood: HashSet<&String> = lex.ood.iter().chain(&lex.heldout).flatten().collect();
    assert!(ind.is_disjoint(&ood));
    assert!(ood.len() <= spec.ood_pool_words);
    let sets: HashSet<Vec<String>> = lex.ood.iter().chain(&lex.heldout).map(|s| {
        let mut s = s.clone();
        s.sort();
        s
    }).collect();
    assert_eq!(sets.len(), spec.ood_intents + spec.heldout_ood_intents);
    let filler: HashSet<&String> = lex.filler.iter().collect();
    let from_any = |sets: &[Vec<String>], utterance: &str| {
        sets.iter().any(|kw| utterance.split(' ').all(|w| kw.iter().any(|k| k == w) || filler.contains(&w.to_string())))
    };
    for s in b.test.iter().filter(|s| s.label == Some(5)) {
        assert!(s.utterance.split(' ').all(|w| !ind.contains(&w.to_string())));
        assert!(from_any(&lex.heldout, &s.utterance), "{}", s.utterance);
    }
    for (s, &l) in b.unlabeled.samples().iter().zip(b.unlabeled_truth.labels()) {
        if l == 5 {
            assert!(s.utterance.split(' ').all(|w| !ind.contains(&w.to_string())));
            assert!(from_any(&lex.ood, &s.utterance), "{}", s.utterance);
        }
    }
}

#[test]
fn synthetic_is_pure_in_spec_and_seed() {
    let spec = SynthSpec {
        train: 100,
        unlabeled: 50,
        valid: 20,
        test: 40,
        ..SynthSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a.1, b.1);
    let c = generate_synthetic(&SynthSpec { seed: 1, ..spec.clone() }).unwrap();
    assert_ne!(a.1, c.1);
    assert_eq!(a.0.class_counts(), c.0.class_counts());
}

#[test]
fn synthetic_spec_validation() {
    assert!(generate_synthetic(&SynthSpec { unlabeled_ood_fraction: 1.5, ..SynthSpec::default() }).is_err());
    assert!(generate_synthetic(&SynthSpec { k: 1, ..SynthSpec::default() }).is_err());
    assert!(generate_synthetic(&SynthSpec { mean_topic_turns: -1.0, ..SynthSpec::default() }).is_err());
    assert!(generate_synthetic(&SynthSpec { ood_pool_words: 4, ..SynthSpec::default() }).is_err());
}

#[test]
fn synthetic_corpus_file_round_trip() {
    let spec = SynthSpec {
        train: 60,
        unlabeled: 30,
        valid: 10,
        test: 20,
        ..SynthSpec::default()
    };
    let (corpus, _, _) = generate_synthetic(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("corpus.jsonl");
    corpus.save_jsonl(&p).unwrap();
    let back = load_star_format(&p, &LoadOptions { greetings: vec![], ..LoadOptions::default() }).unwrap();
    assert_eq!(back.entries(), corpus.entries());
    assert_eq!(back.intents(), corpus.intents());
    assert_eq!(back.skipped, 0);
}

fn six_turn_bundle() -> SplitBundle {
    let history: Vec<Turn> = (0..6)
        .map(|i| if i % 2 == 0 { Turn::user(format!("u{i}")) } else { Turn::agent(format!("a{i}")) })
        .collect();
    let intents = IntentInventory::new(vec!["a".into()]).unwrap();
    let s = |id: &str, label| DialogueSample::new(id, history.clone(), "now", Some(label));
    SplitBundle::new(intents, vec![s("t#6", 0)], vec![s("u#6", 1)], vec![s("v#6", 0)], vec![s("x#6", 1)]).unwrap()
}

#[test]
fn truncation_rules() {
    let b = six_turn_bundle();
    assert_eq!(truncate_contexts(&b, 6), b);
    assert_eq!(truncate_contexts(&b, 60), b);
    let zero = truncate_contexts(&b, 0);
    assert!(zero.train[0].history.is_empty() && zero.unlabeled.samples()[0].history.is_empty());
    let three = truncate_contexts(&b, 3);
    let texts: Vec<_> = three.test[0].history.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(texts, ["a3", "u4", "a5"]);
    assert_eq!(three.test[0].utterance, "now");
}

#[test]
fn bundle_rejects_ood_in_validation_and_duplicates() {
    let intents = IntentInventory::new(vec!["a".into()]).unwrap();
    let s = |id: &str, l| DialogueSample::new(id, vec![], "w", Some(l));
    assert!(SplitBundle::new(intents.clone(), vec![s("a", 0)], vec![], vec![s("b", 1)], vec![]).is_err());
    assert!(SplitBundle::new(intents, vec![s("a", 0)], vec![], vec![], vec![s("a", 0)]).is_err());
}

#[test]
fn downsampled_pools_are_nested_prefixes() {
    let (_, b, _) = generate_synthetic(&SynthSpec {
        train: 50,
        unlabeled: 200,
        valid: 10,
        test: 10,
        ..SynthSpec::default()
    })
    .unwrap();
    let quarter = b.downsample_unlabeled(0.25).unwrap();
    let half = b.downsample_unlabeled(0.5).unwrap();
    assert_eq!(quarter.unlabeled.len(), 50);
    assert_eq!(quarter.unlabeled.samples(), &half.unlabeled.samples()[..50]);
    assert!(b.downsample_unlabeled(1.2).is_err());
}

proptest! {
    #[test]
    fn truncation_keeps_suffix_and_utterance(len in 0usize..12, keep in 0usize..15) {
        let history: Vec<Turn> = (0..len).map(|i| Turn::user(format!("t{i}"))).collect();
        let s = DialogueSample::new("p#0", history.clone(), "current", Some(0));
        let t = s.truncated(keep);
        prop_assert_eq!(&t.utterance, "current");
        prop_assert_eq!(t.history.len(), len.min(keep));
        prop_assert_eq!(&t.history[..], &history[len - len.min(keep)..]);
    }
}
