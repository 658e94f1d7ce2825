//! `caro` command-line driver.
//!
//! Settings precedence, lowest first: preset defaults, `--config` file,
//! `--set KEY=VALUE` flags, dedicated flags such as `--seed` and `--lambda`.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{EvaluateOptions, Global, Split};

#[derive(Debug, Parser)]
#[command(name = "caro", version, about = "Context-aware OOD intent detection experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Exact run directory (default: timestamped directory under the output root).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = config::parse_override)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with its split manifest.
    SynthData,
    /// Run both training stages and write a checkpoint.
    Train {
        #[arg(long)]
        lambda: Option<f64>,
        /// no-unlabeled, no-multiview, no-gate or no-ib; repeatable.
        #[arg(long = "ablation", value_name = "NAME")]
        ablations: Vec<String>,
    },
    /// Score a checkpoint on a split.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Keep only the most recent N history turns; 0 keeps just the utterance.
        #[arg(long, value_name = "N")]
        max_context_turns: Option<usize>,
        /// Vocabulary file that must match the checkpoint.
        #[arg(long, value_name = "PATH")]
        vocab: Option<PathBuf>,
        #[arg(long)]
        dump_alpha: bool,
        #[arg(long)]
        dump_beta: bool,
        #[arg(long)]
        info_plane: bool,
    },
    /// Train and evaluate once per value and seed.
    Sweep {
        /// lambda, unlabeled_fraction or max_context_turns.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Finite-difference check of every model fragment.
    GradCheck {
        #[arg(long, default_value_t = caro::checks::GRAD_TOLERANCE)]
        tolerance: f64,
        /// Also run a fragment with a deliberately wrong derivative.
        #[arg(long, hide = true)]
        with_corrupted_fixture: bool,
    },
    /// Print every config key with its resolved value.
    ShowConfig,
}

/// Result of a command: where it wrote and whether it succeeded.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: Option<PathBuf>,
    pub success: bool,
}

impl From<GlobalArgs> for Global {
    fn from(a: GlobalArgs) -> Self {
        Global {
            config: a.config,
            seed: a.seed,
            out: a.out,
            force: a.force,
            set: a.set,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let global = Global::from(cli.global);
    let done = |dir: PathBuf| Outcome {
        dir: Some(dir),
        success: true,
    };
    match cli.command {
        Command::SynthData => {
            let dir = commands::synth_data(&global)?;
            println!("{}", dir.display());
            Ok(done(dir))
        }
        Command::Train { lambda, ablations } => {
            let dir = commands::train(&global, lambda, &ablations)?;
            println!("{}", dir.display());
            Ok(done(dir))
        }
        Command::Evaluate {
            checkpoint,
            split,
            max_context_turns,
            vocab,
            dump_alpha,
            dump_beta,
            info_plane,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Valid => Split::Valid,
                SplitArg::Test => Split::Test,
            };
            let opts = EvaluateOptions {
                checkpoint,
                split: Some(split),
                max_context_turns,
                vocab,
                dump_alpha,
                dump_beta,
                info_plane,
            };
            let (dir, report) = commands::evaluate(&global, &opts)?;
            print!("{}", report.table());
            println!("{}", dir.display());
            Ok(done(dir))
        }
        Command::Sweep {
            param,
            values,
            parallel,
        } => {
            let (dir, table) = commands::sweep(&global, &param, &values, parallel)?;
            print!("{}", table.table());
            println!("{}", dir.display());
            Ok(done(dir))
        }
        Command::GradCheck {
            tolerance,
            with_corrupted_fixture,
        } => {
            let (dir, lines) = commands::grad_check(&global, tolerance, with_corrupted_fixture)?;
            for l in &lines {
                let status = if l.passed { "pass" } else { "FAIL" };
                println!("{status} {:<16} {:.3e}  {}", l.name, l.max_rel_error, l.covers);
            }
            Ok(Outcome {
                dir: Some(dir),
                success: lines.iter().all(|l| l.passed),
            })
        }
        Command::ShowConfig => {
            let s = global.settings(&[])?;
            let docs: std::collections::BTreeMap<_, _> = config::KEYS.iter().copied().collect();
            for (k, v) in s.entries() {
                println!("{k} = {v}    # {}", docs[k]);
            }
            Ok(Outcome {
                dir: None,
                success: true,
            })
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}
