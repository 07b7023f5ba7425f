//! Command-line front end: one subcommand per toolkit capability, a shared
//! TOML configuration, and stable exit codes (0 success, 1 input problem,
//! 2 endpoint or protocol failure).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use emosynth::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned, human-readable columns.
    Table,
    /// One key=value record per line.
    Lines,
}

#[derive(Parser)]
#[command(name = "emosynth", version)]
#[command(about = "Synthesize, analyze, and evaluate a context-aware emotion dataset")]
struct Cli {
    /// Run configuration file; missing sections fall back to defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read story plots into a corpus file
    Ingest {
        /// Directory of one-plot-per-file sources (file stem = title)
        #[arg(long, conflicts_with_all = ["titles", "plots"])]
        dir: Option<PathBuf>,
        /// Title list, one per line (requires --plots)
        #[arg(long, requires = "plots")]
        titles: Option<PathBuf>,
        /// Story file with <EOS> separators (requires --titles)
        #[arg(long, requires = "titles")]
        plots: Option<PathBuf>,
        /// Corpus output path
        #[arg(long)]
        out: PathBuf,
        /// Keep a random subsample of this size
        #[arg(long)]
        sample: Option<usize>,
        /// Subsample seed
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Execute synthesis stages over a corpus, journaling every unit
    Run {
        /// Corpus file produced by ingest
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated stage names (default: all six)
        #[arg(long)]
        stages: Option<String>,
        /// Continue a run directory, skipping journaled work
        #[arg(long)]
        resume: bool,
        /// Parent directory for run directories
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Chat backend override: mock or http
        #[arg(long)]
        backend: Option<String>,
        /// Mock backend: canned reply directory
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Mock backend: error on prompts without a canned reply
        #[arg(long)]
        fixtures_only: bool,
        /// Expressiveness threshold override
        #[arg(long)]
        threshold: Option<f64>,
        /// Worker thread override
        #[arg(long)]
        concurrency: Option<usize>,
        /// Prompt template override directory
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Build dataset examples from a run journal
    Assemble {
        /// Journal file of a completed (or partial) run
        #[arg(long)]
        journal: PathBuf,
        /// Dataset output path
        #[arg(long)]
        out: PathBuf,
        /// Quarantine output path
        #[arg(long)]
        quarantine: Option<PathBuf>,
        /// Expressiveness threshold
        #[arg(long, default_value_t = 0.3)]
        threshold: f64,
        /// Error on off-grid expressiveness instead of flagging
        #[arg(long)]
        strict_threshold: bool,
    },
    /// Partition a dataset into train/dev/test by (plot, actor) group
    Split {
        #[arg(long)]
        dataset: PathBuf,
        /// 80-10-10 or 90-5-5
        #[arg(long, default_value = "80-10-10")]
        scheme: String,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Manifest output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Class and label distribution of a dataset
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Embedding-similarity statistics over text pairings
    Analyze {
        #[arg(long)]
        dataset: PathBuf,
        /// One pairing by name (default: all eight)
        #[arg(long)]
        pairing: Option<String>,
        /// Pairs to sample per pairing
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also build the topic graph and report its communities
        #[arg(long)]
        communities: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Lexical markers removed by rewriting, with emotion co-occurrence
    Markers {
        #[arg(long)]
        dataset: PathBuf,
        /// Minimum removed share for a marker
        #[arg(long)]
        removal: Option<f64>,
        /// Minimum co-occurrence share for a listed emotion
        #[arg(long)]
        cooccur: Option<f64>,
        /// Restrict to words listed in this file, one per line
        #[arg(long)]
        words: Option<PathBuf>,
        /// Write the lexicon as a tab-separated table instead of printing
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Drop near-duplicate examples by embedding similarity
    Dedup {
        #[arg(long)]
        dataset: PathBuf,
        /// Cosine cutoff in (0, 1]
        #[arg(long)]
        cutoff: Option<f64>,
        /// Write the retained examples here
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Find the decision boundary with the best macro F1
    EvalSweep {
        /// Prediction matrix (tab-separated scores plus gold labels)
        #[arg(long)]
        matrix: PathBuf,
        /// Write the full sweep curve here
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Score a prediction matrix at a fixed boundary
    EvalScore {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        boundary: f64,
        /// Project classes onto a task: "isear" or a mapping file
        #[arg(long)]
        map: Option<String>,
        /// Replace rows labeled exactly "others" by their argmax class;
        /// below this floor they become neutral
        #[arg(long, value_name = "FLOOR")]
        relabel_others: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Generate annotation tasks and the withheld answer key
    HumanevalGen {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for tasks.tsv and answers.tsv
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Leading share of tasks that keep expressiveness order
        #[arg(long, default_value_t = 0.2)]
        ranked_fraction: f64,
    },
    /// Score returned annotations against the answer key
    HumanevalScore {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        results: PathBuf,
        /// Also report the multi-rater agreement statistic
        #[arg(long)]
        fleiss: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Ingest { dir, titles, plots, out, sample, seed } => {
            commands::ingest(dir, titles, plots, out, sample, seed)
        }
        Command::Run {
            corpus,
            stages,
            resume,
            out_dir,
            backend,
            fixtures,
            fixtures_only,
            threshold,
            concurrency,
            prompts,
        } => {
            let mut config = config;
            if let Some(backend) = backend {
                config.chat.backend = match backend.as_str() {
                    "mock" => config::ChatBackendKind::Mock,
                    "http" => config::ChatBackendKind::Http,
                    other => {
                        return Err(emosynth::Error::invalid(format!(
                            "unknown backend {other:?}; expected mock or http"
                        )))
                    }
                };
            }
            if let Some(fixtures) = fixtures {
                config.chat.fixtures = Some(fixtures);
            }
            if fixtures_only {
                config.chat.fixtures_only = true;
            }
            if let Some(threshold) = threshold {
                config.pipeline.expressiveness_threshold = threshold;
            }
            if let Some(concurrency) = concurrency {
                config.pipeline.concurrency = concurrency;
            }
            if let Some(prompts) = prompts {
                config.paths.prompts_dir = Some(prompts);
            }
            config.validate()?;
            commands::run(&config, commands::RunArgs { corpus, stages, resume, out_dir })
        }
        Command::Assemble { journal, out, quarantine, threshold, strict_threshold } => {
            commands::assemble(journal, out, quarantine, threshold, strict_threshold)
        }
        Command::Split { dataset, scheme, seed, out } => {
            commands::split(dataset, scheme, seed, out)
        }
        Command::Stats { dataset, format } => commands::stats(dataset, format),
        Command::Analyze { dataset, pairing, pairs, seed, communities, format } => {
            commands::analyze(&config, dataset, pairing, pairs, seed, communities, format)
        }
        Command::Markers { dataset, removal, cooccur, words, out, format } => {
            commands::markers(&config, dataset, removal, cooccur, words, out, format)
        }
        Command::Dedup { dataset, cutoff, out, format } => {
            commands::dedup(&config, dataset, cutoff, out, format)
        }
        Command::EvalSweep { matrix, curve, format } => commands::eval_sweep(matrix, curve, format),
        Command::EvalScore { matrix, boundary, map, relabel_others, format } => {
            commands::eval_score(matrix, boundary, map, relabel_others, format)
        }
        Command::HumanevalGen { dataset, out_dir, seed, ranked_fraction } => {
            commands::humaneval_gen(&config, dataset, out_dir, seed, ranked_fraction)
        }
        Command::HumanevalScore { tasks, answers, results, fleiss, format } => {
            commands::humaneval_score(tasks, answers, results, fleiss, format)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help and version are not errors; anything else is usage
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_user_error() { 1 } else { 2 })
        }
    }
}
