use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use caro::checks;
use caro::data::{generate_synthetic, load_star_format, make_splits, Corpus, LoadOptions, SplitBundle, SplitManifest};
use caro::encoder::{DialogueSample, Vocabulary};
use caro::metrics::{score, ScoreReport};
use caro::pipeline::{
    classify, dump_alpha, dump_beta, model_information_plane, msp_classify, msp_config, train_caro, CaroModel,
    Checkpoint, TrainOutcome, TrainingConfig, TrainingData,
};
use log::info;

use crate::config::{self, Detector, Settings};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "CARO_OUT_ROOT";

/// Flags shared by every verb.
#[derive(Debug, Clone, Default)]
pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub set: Vec<(String, String)>,
}

impl Global {
    /// Config file, then `--set` pairs, then `--seed`, then `extra`.
    pub fn settings(&self, extra: &[(String, String)]) -> Result<Settings> {
        let mut overrides = self.set.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        overrides.extend_from_slice(extra);
        config::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn samples(self, b: &SplitBundle) -> &[DialogueSample] {
        match self {
            Split::Train => &b.train,
            Split::Valid => &b.valid,
            Split::Test => &b.test,
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Creates the run directory: `--out` verbatim, otherwise
/// `<root>/<UTC time>-<verb>-<config hash>`.
pub fn run_dir(global: &Global, settings: &Settings, verb: &str) -> Result<PathBuf> {
    let dir = match &global.out {
        Some(d) => d.clone(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| settings.out_root.clone());
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
            let hash = fnv1a(&format!("{verb}\n{}", settings.to_text()));
            let base = root.join(format!("{stamp}-{verb}-{hash:016x}"));
            let mut d = base.clone();
            let mut n = 1;
            while d.exists() && !global.force {
                d = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            d
        }
    };
    if dir.exists() && !global.force && fs::read_dir(&dir)?.next().is_some() {
        bail!("output directory {} is not empty (use --force to overwrite)", dir.display());
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
}

/// Corpus and bundle as the settings describe them, after downsampling the
/// unlabeled pool.
pub fn load_data(s: &Settings) -> Result<(Corpus, SplitBundle)> {
    let (corpus, bundle) = match &s.corpus {
        Some(path) => {
            let corpus = load_star_format(path, &LoadOptions::default())
                .with_context(|| format!("loading corpus {}", path.display()))?;
            let bundle = match &s.splits {
                Some(m) => SplitManifest::read(m)?.apply(&corpus)?,
                None => make_splits(&corpus, s.hidden_fraction, s.seed)?,
            };
            (corpus, bundle)
        }
        None => {
            let (corpus, bundle, _) = generate_synthetic(&s.synth)?;
            (corpus, bundle)
        }
    };
    let bundle = bundle.downsample_unlabeled(s.unlabeled_fraction)?;
    Ok((corpus, bundle))
}

/// Training configuration after the detector choice.
pub fn effective_training(s: &Settings) -> TrainingConfig {
    match s.detector {
        Detector::Caro => s.training.clone(),
        Detector::Msp => msp_config(&s.training),
    }
}

pub fn predict(model: &CaroModel, samples: &[DialogueSample], s: &Settings) -> Result<Vec<usize>> {
    Ok(match s.detector {
        Detector::Caro => classify(model, samples)?.into_iter().map(|p| p.label).collect(),
        Detector::Msp => msp_classify(model, samples, s.msp_threshold)?,
    })
}

pub fn evaluate_model(model: &CaroModel, samples: &[DialogueSample], s: &Settings) -> Result<ScoreReport> {
    let truths = samples
        .iter()
        .map(|x| x.label.with_context(|| format!("sample {} has no label", x.id)))
        .collect::<Result<Vec<_>>>()?;
    let predictions = predict(model, samples, s)?;
    Ok(score(&predictions, &truths, model.intents.k())?.with_names(model.intents.names()))
}

fn generation_report(corpus: &Corpus, bundle: &SplitBundle) -> String {
    let mut s = String::new();
    writeln!(s, "samples\t{}", corpus.len()).unwrap();
    writeln!(s, "mean_context_turns\t{:.4}", corpus.mean_history_turns()).unwrap();
    writeln!(s, "\nsplit\tintent\tcount").unwrap();
    let classes = bundle.intents.num_classes();
    let labeled = |v: &[DialogueSample]| v.iter().filter_map(|x| x.label).collect::<Vec<_>>();
    let parts = [
        ("train", labeled(&bundle.train)),
        ("unlabeled", bundle.unlabeled_truth.labels().to_vec()),
        ("valid", labeled(&bundle.valid)),
        ("test", labeled(&bundle.test)),
    ];
    for (name, labels) in parts {
        let mut counts = vec![0usize; classes];
        for l in labels {
            counts[l] += 1;
        }
        for (label, c) in counts.iter().enumerate() {
            writeln!(s, "{name}\t{}\t{c}", bundle.intents.name(label)).unwrap();
        }
    }
    s
}

pub fn synth_data(global: &Global) -> Result<PathBuf> {
    let s = global.settings(&[])?;
    if let Err(e) = s.synth.validate() {
        bail!("invalid synthetic spec: {e}");
    }
    let (corpus, bundle, _) = generate_synthetic(&s.synth)?;
    let dir = run_dir(global, &s, "synth-data")?;
    corpus.save_jsonl(&dir.join("corpus.jsonl"))?;
    bundle.manifest().write(&dir.join("splits.tsv"))?;
    write(&dir, "generation_report.txt", generation_report(&corpus, &bundle))?;
    write(&dir, "config.txt", s.to_text())?;
    info!("wrote {} samples to {}", corpus.len(), dir.display());
    Ok(dir)
}

/// Trains on the bundle the settings describe.
pub fn train_settings(s: &Settings) -> Result<(TrainOutcome, SplitBundle)> {
    s.validate()?;
    let (_, bundle) = load_data(s)?;
    let cfg = effective_training(s);
    let outcome = train_caro(&cfg, TrainingData::from_bundle(&bundle))?;
    Ok((outcome, bundle))
}

pub fn write_training(dir: &Path, s: &Settings, outcome: &TrainOutcome) -> Result<()> {
    Checkpoint::from_model(&outcome.model).save(&dir.join("checkpoint.json"))?;
    write(dir, "train_log.tsv", outcome.log.to_tsv())?;
    write(dir, "mined.tsv", outcome.mined.manifest())?;
    let mut vocab = outcome.model.vocab.tokens().join("\n");
    vocab.push('\n');
    write(dir, "vocab.txt", vocab)?;
    write(dir, "config.txt", s.to_text())?;
    Ok(())
}

pub fn train(global: &Global, lambda: Option<f64>, ablations: &[String]) -> Result<PathBuf> {
    let mut extra = Vec::new();
    if let Some(l) = lambda {
        extra.push(("lambda".to_string(), l.to_string()));
    }
    let mut s = global.settings(&extra)?;
    for a in ablations {
        s.training.ablations.set(a)?;
    }
    s.validate()?;
    let dir = run_dir(global, &s, "train")?;
    let (outcome, _) = train_settings(&s)?;
    write_training(&dir, &s, &outcome)?;
    info!(
        "trained: {} steps, {} mined OOD samples; artifacts in {}",
        outcome.log.steps.len(),
        outcome.mined.len(),
        dir.display()
    );
    Ok(dir)
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub checkpoint: PathBuf,
    pub split: Option<Split>,
    pub max_context_turns: Option<usize>,
    pub vocab: Option<PathBuf>,
    pub dump_alpha: bool,
    pub dump_beta: bool,
    pub info_plane: bool,
}

pub fn evaluate(global: &Global, opts: &EvaluateOptions) -> Result<(PathBuf, ScoreReport)> {
    let checkpoint = Checkpoint::load(&opts.checkpoint)?;
    // Data settings default to the ones the checkpoint was trained with.
    let mut g = global.clone();
    if g.config.is_none() {
        let beside = opts.checkpoint.with_file_name("config.txt");
        if beside.exists() {
            g.config = Some(beside);
        }
    }
    let s = g.settings(&[])?;
    s.validate()?;
    if let Some(path) = &opts.vocab {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let vocab = Vocabulary::from_tokens(text.lines().map(str::to_string).collect())?;
        checkpoint.check_vocab(&vocab)?;
    }
    let mut model = checkpoint.into_model()?;
    if opts.max_context_turns.is_some() {
        model.config.max_context_turns = opts.max_context_turns;
    }
    let (_, bundle) = load_data(&s)?;
    if bundle.intents != model.intents {
        bail!(
            "checkpoint intents [{}] do not match the data's [{}]",
            model.intents.names().join(", "),
            bundle.intents.names().join(", ")
        );
    }
    let samples = opts.split.unwrap_or(Split::Test).samples(&bundle);
    let report = evaluate_model(&model, samples, &s)?;
    let dir = run_dir(global, &s, "evaluate")?;
    report.write_tsv(&dir.join("scores.tsv"))?;
    if opts.dump_alpha {
        let t = dump_alpha(&model, samples)?;
        t.write_samples_tsv(fs::File::create(dir.join("alpha_samples.tsv"))?)?;
        t.write_intents_tsv(fs::File::create(dir.join("alpha_intents.tsv"))?)?;
    }
    if opts.dump_beta {
        dump_beta(&model, samples)?.write_tsv(fs::File::create(dir.join("beta.tsv"))?)?;
    }
    if opts.info_plane {
        let p = model_information_plane(&model, samples, &s.plane, s.seed)?;
        write(
            &dir,
            "info_plane.tsv",
            format!("i_xz\ti_zy\texcess\n{}\t{}\t{}\n", p.i_xz, p.i_zy, p.excess()),
        )?;
    }
    Ok((dir, report))
}

pub const SWEEPABLE: [&str; 3] = ["lambda", "unlabeled_fraction", "max_context_turns"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub report: ScoreReport,
    pub mined: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub parameter: String,
    pub values: Vec<String>,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    /// Seed-averaged `(f1_all, f1_ood, f1_ind)` per value.
    pub fn means(&self) -> Vec<(String, [f64; 3])> {
        self.values
            .iter()
            .map(|v| {
                let rows: Vec<_> = self.runs.iter().filter(|r| &r.value == v).collect();
                let n = rows.len().max(1) as f64;
                let mut m = [0.0; 3];
                for r in rows {
                    m[0] += r.report.f1_all / n;
                    m[1] += r.report.f1_ood / n;
                    m[2] += r.report.f1_ind / n;
                }
                (v.clone(), m)
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\tf1_all\tf1_ood\tf1_ind\n", self.parameter);
        for (v, m) in self.means() {
            writeln!(s, "{v}\t{}\t{}\t{}", m[0], m[1], m[2]).unwrap();
        }
        s
    }

    pub fn runs_tsv(&self) -> String {
        let mut s = format!("{}\tseed\tf1_all\tf1_ood\tf1_ind\tmined\n", self.parameter);
        for r in &self.runs {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.value, r.seed, r.report.f1_all, r.report.f1_ood, r.report.f1_ind, r.mined
            )
            .unwrap();
        }
        s
    }

    /// Scores in percent, one row per value.
    pub fn table(&self) -> String {
        let w = self.parameter.len().max(6);
        let mut s = format!("{:<w$} {:>8} {:>8} {:>8}\n", self.parameter, "F1-All", "F1-OOD", "F1-IND");
        for (v, m) in self.means() {
            writeln!(s, "{v:<w$} {:>8.2} {:>8.2} {:>8.2}", 100.0 * m[0], 100.0 * m[1], 100.0 * m[2]).unwrap();
        }
        s
    }
}

/// One train and test evaluation per value and seed.
pub fn sweep(global: &Global, parameter: &str, values: &[String], parallel: usize) -> Result<(PathBuf, SweepTable)> {
    if !SWEEPABLE.contains(&parameter) {
        bail!("parameter {parameter:?} is not sweepable (expected one of {})", SWEEPABLE.join(", "));
    }
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let base = global.settings(&[])?;
    let mut jobs = Vec::new();
    let mut problems = Vec::new();
    for v in values {
        for &seed in &base.seeds {
            let mut s = base.clone();
            s.apply(parameter, v)?;
            s.apply("seed", &seed.to_string())?;
            problems.extend(s.problems().into_iter().map(|p| format!("{parameter} = {v}: {p}")));
            jobs.push((v.clone(), seed, s));
        }
    }
    if !problems.is_empty() {
        problems.dedup();
        bail!("invalid sweep configuration:\n  - {}", problems.join("\n  - "));
    }
    let dir = run_dir(global, &base, "sweep")?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepRun>>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallel.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((value, seed, s)) = jobs.get(i) else { break };
                info!("sweep {parameter} = {value}, seed {seed}");
                let run = (|| {
                    let (outcome, bundle) = train_settings(s)?;
                    let report = evaluate_model(&outcome.model, &bundle.test, s)?;
                    let sub = dir.join(format!("{parameter}={value}")).join(format!("seed-{seed}"));
                    fs::create_dir_all(&sub)?;
                    report.write_tsv(&sub.join("scores.tsv"))?;
                    write(&sub, "mined.tsv", outcome.mined.manifest())?;
                    write(&sub, "config.txt", s.to_text())?;
                    Ok(SweepRun {
                        value: value.clone(),
                        seed: *seed,
                        report,
                        mined: outcome.mined.len(),
                    })
                })();
                results.lock().unwrap()[i] = Some(run);
            });
        }
    });
    let runs = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let table = SweepTable {
        parameter: parameter.to_string(),
        values: values.to_vec(),
        runs,
    };
    write(&dir, "sweep.tsv", table.to_tsv())?;
    write(&dir, "sweep_runs.tsv", table.runs_tsv())?;
    write(&dir, "config.txt", base.to_text())?;
    Ok((dir, table))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckLine {
    pub name: String,
    pub covers: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn grad_check(global: &Global, tolerance: f64, corrupted: bool) -> Result<(PathBuf, Vec<GradCheckLine>)> {
    let s = global.settings(&[])?;
    let mut fragments = checks::registry();
    if corrupted {
        fragments.push(checks::corrupted_fixture());
    }
    let mut lines = Vec::new();
    for f in &fragments {
        let r = f.check(s.seed, tolerance)?;
        lines.push(GradCheckLine {
            name: f.name.to_string(),
            covers: f.covers.to_string(),
            max_rel_error: r.max_rel_error(),
            passed: r.passed(),
        });
    }
    let dir = run_dir(global, &s, "grad-check")?;
    let mut tsv = String::from("fragment\tcovers\tmax_rel_error\tstatus\n");
    for l in &lines {
        let status = if l.passed { "pass" } else { "FAIL" };
        writeln!(tsv, "{}\t{}\t{:.3e}\t{status}", l.name, l.covers, l.max_rel_error).unwrap();
    }
    write(&dir, "gradcheck.tsv", tsv)?;
    Ok((dir, lines))
}
