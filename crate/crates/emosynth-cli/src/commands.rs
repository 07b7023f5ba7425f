//! One handler per subcommand. Handlers take parsed arguments, call into
//! the library, and print reports; all path and format plumbing lives here.

use std::path::{Path, PathBuf};

use emosynth::analytics::{
    build_topic_graph, extract_markers, near_duplicate_filter, similarity_stats, MarkerLexicon,
    MarkerOptions, MarkerRow, Pairing, SimilarityStats,
};
use emosynth::corpus;
use emosynth::dataset::{self, AssembleOptions, DatasetExample, DistributionReport, SplitScheme};
use emosynth::evaluator::{self, PredictionMatrix, RelabelOutcome, SweepOutcome};
use emosynth::humaneval::{self, ScoreOptions};
use emosynth::journal::JournalIndex;
use emosynth::pipeline::{self, RunOptions, StageContext};
use emosynth::prompts::PromptSet;
use emosynth::taxonomy::Taxonomy;
use emosynth::{Error, Result, Stage};

use crate::config::RunConfig;
use crate::Format;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ingest(
    dir: Option<PathBuf>,
    titles: Option<PathBuf>,
    plots: Option<PathBuf>,
    out: PathBuf,
    sample: Option<usize>,
    seed: u64,
) -> Result<()> {
    let (mut records, report) = match (dir, titles, plots) {
        (Some(dir), None, None) => corpus::ingest_dir(&dir)?,
        (None, Some(titles), Some(plots)) => corpus::ingest_paired(&titles, &plots)?,
        _ => return Err(Error::invalid("pass either --dir, or --titles together with --plots")),
    };
    if let Some(n) = sample {
        records = corpus::sample(&records, n, seed)?;
    }
    corpus::write_corpus(&out, &records)?;
    println!(
        "ingested={} skipped_empty={} written={} out={}",
        report.ingested,
        report.skipped_empty,
        records.len(),
        out.display()
    );
    Ok(())
}

pub struct RunArgs {
    pub corpus: PathBuf,
    pub stages: Option<String>,
    pub resume: bool,
    pub out_dir: Option<PathBuf>,
}

fn parse_stages(list: &str) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    for name in list.split(',') {
        let name = name.trim();
        let stage = Stage::from_name(name)
            .ok_or_else(|| Error::invalid(format!("unknown stage {name:?}")))?;
        if !stages.contains(&stage) {
            stages.push(stage);
        }
    }
    Ok(stages)
}

pub fn run(config: &RunConfig, args: RunArgs) -> Result<()> {
    let plots = corpus::read_corpus(&args.corpus)?;
    let stages = match &args.stages {
        Some(list) => parse_stages(list)?,
        None => Stage::ALL.to_vec(),
    };

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| config.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let run_dir = out_dir.join(format!("run-{}", config.run_hash(&args.corpus)));
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let journal_path = run_dir.join("journal.jsonl");
    if journal_path.exists() && !args.resume {
        return Err(Error::invalid(format!(
            "{} already has a journal; pass --resume to continue it",
            run_dir.display()
        )));
    }
    let snapshot = toml::to_string_pretty(config)
        .map_err(|e| Error::invalid(format!("config did not serialize: {e}")))?;
    write_text(&run_dir.join("config.toml"), &snapshot)?;

    let gateway = config.build_gateway()?;
    let prompts = match &config.paths.prompts_dir {
        Some(dir) => PromptSet::from_dir(dir)?,
        None => PromptSet::builtin(),
    };
    let taxonomy = Taxonomy::builtin();
    let ctx = StageContext { gateway: &gateway, prompts: &prompts, taxonomy: &taxonomy };
    let options = RunOptions {
        stages,
        threshold: config.pipeline.expressiveness_threshold,
        strict_threshold: config.pipeline.strict_threshold,
        concurrency: config.pipeline.concurrency,
    };
    let report = pipeline::run(&ctx, &plots, &journal_path, &options)?;

    for stage in Stage::ALL {
        let counts = report.stage(stage);
        println!(
            "stage={} ok={} empty={} reused={} skipped={}",
            stage.name(),
            counts.ok,
            counts.empty,
            counts.reused,
            counts.skipped
        );
    }
    println!("gateway_calls={}", report.gateway_calls);
    println!("corrupt_journal_lines={}", report.corrupt_journal_lines);
    println!("run_dir={}", run_dir.display());
    Ok(())
}

pub fn assemble(
    journal: PathBuf,
    out: PathBuf,
    quarantine: Option<PathBuf>,
    threshold: f64,
    strict: bool,
) -> Result<()> {
    let index = JournalIndex::load(&journal)?;
    let options = AssembleOptions { threshold, strict_threshold: strict };
    let output = dataset::assemble(&index, &options)?;
    dataset::write_dataset(&out, &output.examples)?;
    if let Some(path) = &quarantine {
        dataset::write_quarantine(path, &output.quarantine)?;
    }
    let report = &output.report;
    println!(
        "examples={} orig_only={} context_full={} label_less={} quarantined={} corrupt_journal_lines={}",
        report.examples,
        report.orig_only,
        report.context_full,
        report.label_less,
        report.quarantined,
        report.corrupt_journal_lines
    );
    println!("out={}", out.display());
    if let Some(path) = &quarantine {
        println!("quarantine={}", path.display());
    }
    Ok(())
}

pub fn split(dataset_path: PathBuf, scheme: String, seed: u64, out: PathBuf) -> Result<()> {
    let scheme = SplitScheme::from_name(&scheme)
        .ok_or_else(|| Error::invalid(format!("unknown split scheme {scheme:?}")))?;
    let examples = dataset::read_dataset(&dataset_path)?;
    let manifest = dataset::split(&examples, scheme, seed)?;
    dataset::write_manifest(&out, &manifest)?;
    let (train, dev, test) = manifest.counts();
    println!(
        "scheme={} seed={} train={} dev={} test={} out={}",
        scheme.name(),
        seed,
        train,
        dev,
        test,
        out.display()
    );
    Ok(())
}

fn stats_lines(report: &DistributionReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("examples={} training_rows={}\n", report.examples, report.training_rows));
    out.push_str(&format!(
        "labels_per_example mean={} std={}\n",
        report.labels_per_example_mean, report.labels_per_example_std
    ));
    out.push_str(&format!(
        "polarity positive={} negative={} ambiguous={}\n",
        report.polarity_balance.positive,
        report.polarity_balance.negative,
        report.polarity_balance.ambiguous
    ));
    out.push_str(&format!(
        "neutral_share pre={} post={}\n",
        report.neutral_share_pre, report.neutral_share_post
    ));
    for entry in &report.primary_hist {
        out.push_str(&format!("primary class={} count={}\n", entry.class.name(), entry.count));
    }
    for entry in &report.soft_hist {
        out.push_str(&format!("soft class={} count={}\n", entry.class.name(), entry.count));
    }
    out
}

pub fn stats(dataset_path: PathBuf, format: Format) -> Result<()> {
    let examples = dataset::read_dataset(&dataset_path)?;
    let report = dataset::stats(&examples);
    match format {
        Format::Table => print!("{}", report.render_text()),
        Format::Lines => print!("{}", stats_lines(&report)),
    }
    Ok(())
}

fn similarity_line(stats: &SimilarityStats, format: Format) -> String {
    match format {
        Format::Table => format!(
            "{:<22} mean {:>7.4}  std {:>7.4}  q99 {:>7.4}  pairs {}\n",
            stats.pairing.name(),
            stats.mean,
            stats.std,
            stats.q99,
            stats.sample_size
        ),
        Format::Lines => format!(
            "pairing={} mean={} std={} q99={} pairs={}\n",
            stats.pairing.name(),
            stats.mean,
            stats.std,
            stats.q99,
            stats.sample_size
        ),
    }
}

pub fn analyze(
    config: &RunConfig,
    dataset_path: PathBuf,
    pairing: Option<String>,
    pairs: Option<usize>,
    seed: Option<u64>,
    communities: bool,
    format: Format,
) -> Result<()> {
    let examples = dataset::read_dataset(&dataset_path)?;
    let embedder = config.build_embedder()?;
    let pair_count = pairs.unwrap_or(config.analysis.pair_count);
    let seed = seed.unwrap_or(config.seeds.analysis);

    let selected: Vec<Pairing> = match &pairing {
        None => Pairing::ALL.to_vec(),
        Some(name) => vec![Pairing::from_name(name)
            .ok_or_else(|| Error::invalid(format!("unknown pairing {name:?}")))?],
    };
    let single = selected.len() == 1;
    for pairing in selected {
        match similarity_stats(pairing, &examples, embedder.as_ref(), pair_count, seed) {
            Ok(stats) => print!("{}", similarity_line(&stats, format)),
            // sweeping all pairings tolerates ones this dataset cannot
            // form; asking for one by name does not
            Err(err) if !single => match format {
                Format::Table => {
                    println!("{:<22} unavailable: {err}", pairing.name())
                }
                Format::Lines => println!("pairing={} error={err}", pairing.name()),
            },
            Err(err) => return Err(err),
        }
    }

    if communities {
        let graph =
            build_topic_graph(&examples, embedder.as_ref(), config.analysis.edge_threshold)?;
        let community_count = graph.communities.iter().copied().max().map(|m| m + 1).unwrap_or(0);
        match format {
            Format::Table => println!(
                "topic graph: {} nodes, {} edges, {} communities, modularity {:.4}",
                graph.nodes.len(),
                graph.edges.len(),
                community_count,
                graph.modularity
            ),
            Format::Lines => println!(
                "topic_graph nodes={} edges={} communities={} modularity={}",
                graph.nodes.len(),
                graph.edges.len(),
                community_count,
                graph.modularity
            ),
        }
    }
    Ok(())
}

fn marker_rows(examples: &[DatasetExample]) -> Vec<MarkerRow> {
    examples
        .iter()
        .filter_map(|example| {
            example.utterance_rewr.as_ref().map(|rewritten| MarkerRow {
                original: example.utterance_orig.clone(),
                rewritten: rewritten.clone(),
                emotions: example.soft_labels_filtered.iter().map(|l| l.class).collect(),
            })
        })
        .collect()
}

fn lexicon_text(lexicon: &MarkerLexicon, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Table => {
            out.push_str(&format!(
                "{:<18} {:>7} {:>9} {:>8}  emotions\n",
                "word", "ratio", "occurred", "removed"
            ));
            for entry in &lexicon.entries {
                let emotions: Vec<&str> = entry.emotions.iter().map(|c| c.name()).collect();
                out.push_str(&format!(
                    "{:<18} {:>7.3} {:>9} {:>8}  {}\n",
                    entry.word,
                    entry.removal_ratio,
                    entry.total_occurrences,
                    entry.removed,
                    emotions.join(",")
                ));
            }
        }
        Format::Lines => {
            for entry in &lexicon.entries {
                let emotions: Vec<&str> = entry.emotions.iter().map(|c| c.name()).collect();
                out.push_str(&format!(
                    "word={} ratio={} occurred={} removed={} emotions={}\n",
                    entry.word,
                    entry.removal_ratio,
                    entry.total_occurrences,
                    entry.removed,
                    emotions.join(",")
                ));
            }
        }
    }
    out
}

pub fn markers(
    config: &RunConfig,
    dataset_path: PathBuf,
    removal: Option<f64>,
    cooccur: Option<f64>,
    words: Option<PathBuf>,
    out: Option<PathBuf>,
    format: Format,
) -> Result<()> {
    let examples = dataset::read_dataset(&dataset_path)?;
    let rows = marker_rows(&examples);
    let word_filter = match &words {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(text.lines().map(|w| w.trim().to_lowercase()).filter(|w| !w.is_empty()).collect())
        }
        None => None,
    };
    let options = MarkerOptions {
        removal_threshold: removal.unwrap_or(config.analysis.removal_threshold),
        cooccur_threshold: cooccur.unwrap_or(config.analysis.cooccur_threshold),
        word_filter,
    };
    let lexicon = extract_markers(&rows, &options)?;
    if let Some(path) = &out {
        let mut table = String::from("word\tremoval_ratio\toccurrences\tremoved\temotions\n");
        for entry in &lexicon.entries {
            let emotions: Vec<&str> = entry.emotions.iter().map(|c| c.name()).collect();
            table.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                entry.word,
                entry.removal_ratio,
                entry.total_occurrences,
                entry.removed,
                emotions.join(",")
            ));
        }
        write_text(path, &table)?;
        println!("entries={} out={}", lexicon.entries.len(), path.display());
        return Ok(());
    }
    print!("{}", lexicon_text(&lexicon, format));
    Ok(())
}

pub fn dedup(
    config: &RunConfig,
    dataset_path: PathBuf,
    cutoff: Option<f64>,
    out: Option<PathBuf>,
    format: Format,
) -> Result<()> {
    let examples = dataset::read_dataset(&dataset_path)?;
    let embedder = config.build_embedder()?;
    let cutoff = cutoff.unwrap_or(config.analysis.dedup_cutoff);
    let report = near_duplicate_filter(&examples, embedder.as_ref(), cutoff)?;
    if let Some(path) = &out {
        let retained: std::collections::BTreeSet<&String> = report.retained.iter().collect();
        let kept: Vec<DatasetExample> =
            examples.iter().filter(|e| retained.contains(&e.example_id)).cloned().collect();
        dataset::write_dataset(path, &kept)?;
    }
    match format {
        Format::Table => {
            println!(
                "retained {} of {}, dropped {}",
                report.retained.len(),
                examples.len(),
                report.dropped.len()
            );
            for (dropped, kept) in &report.dropped {
                println!("  {dropped} duplicates {kept}");
            }
        }
        Format::Lines => {
            println!(
                "retained={} examined={} dropped={}",
                report.retained.len(),
                examples.len(),
                report.dropped.len()
            );
            for (dropped, kept) in &report.dropped {
                println!("dropped={dropped} duplicate_of={kept}");
            }
        }
    }
    if let Some(path) = &out {
        println!("out={}", path.display());
    }
    Ok(())
}

fn write_curve(outcome: &SweepOutcome, path: &Path) -> Result<()> {
    let mut text = String::from("boundary\tmacro_precision\tmacro_recall\tmacro_f1\n");
    for point in &outcome.curve {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            point.boundary, point.macro_precision, point.macro_recall, point.macro_f1
        ));
    }
    write_text(path, &text)
}

pub fn eval_sweep(matrix_path: PathBuf, curve: Option<PathBuf>, format: Format) -> Result<()> {
    let matrix = PredictionMatrix::read_tsv(&matrix_path)?;
    let outcome = evaluator::sweep_boundary(&matrix)?;
    if let Some(path) = &curve {
        write_curve(&outcome, path)?;
    }
    match format {
        Format::Table => print!("{}", outcome.report.render_table()),
        Format::Lines => print!("{}", outcome.report.render_lines()),
    }
    if let Some(path) = &curve {
        println!("curve={}", path.display());
    }
    Ok(())
}

pub fn eval_score(
    matrix_path: PathBuf,
    boundary: f64,
    map: Option<String>,
    relabel_floor: Option<f64>,
    format: Format,
) -> Result<()> {
    let mut matrix = PredictionMatrix::read_tsv(&matrix_path)?;
    if let Some(map) = &map {
        let mapping = if map == "isear" {
            evaluator::isear_mapping()
        } else {
            evaluator::load_mapping_file(Path::new(map))?
        };
        matrix = evaluator::map_taxonomy(&matrix, &mapping)?;
    }
    if let Some(floor) = relabel_floor {
        let RelabelOutcome { truth, relabelled, to_neutral } =
            evaluator::relabel_others(&matrix, floor)?;
        matrix.truth = truth;
        match format {
            Format::Table => {
                println!("relabelled {relabelled} rows from others, {to_neutral} to neutral")
            }
            Format::Lines => println!("relabelled={relabelled} to_neutral={to_neutral}"),
        }
    }
    let report = evaluator::score(&matrix, boundary)?;
    match format {
        Format::Table => print!("{}", report.render_table()),
        Format::Lines => print!("{}", report.render_lines()),
    }
    Ok(())
}

pub fn humaneval_gen(
    config: &RunConfig,
    dataset_path: PathBuf,
    out_dir: PathBuf,
    seed: Option<u64>,
    ranked_fraction: f64,
) -> Result<()> {
    let examples = dataset::read_dataset(&dataset_path)?;
    let seed = seed.unwrap_or(config.seeds.humaneval);
    let outcome = humaneval::generate_tasks(&examples, seed, ranked_fraction)?;
    humaneval::write_tasks(&outcome.tasks, &out_dir.join("tasks.tsv"))?;
    humaneval::write_answer_key(&outcome.tasks, &out_dir.join("answers.tsv"))?;
    let ranked = outcome.tasks.iter().filter(|t| t.ranked_block).count();
    println!(
        "tasks={} ranked={} skipped={} out_dir={}",
        outcome.tasks.len(),
        ranked,
        outcome.skipped.len(),
        out_dir.display()
    );
    for (example_id, reason) in &outcome.skipped {
        println!("skipped example={example_id} reason={reason}");
    }
    Ok(())
}

pub fn humaneval_score(
    tasks_path: PathBuf,
    answers_path: PathBuf,
    results_path: PathBuf,
    fleiss: bool,
    format: Format,
) -> Result<()> {
    let tasks = humaneval::read_tasks(&tasks_path, &answers_path)?;
    let results = humaneval::read_results(&results_path)?;
    let report = humaneval::score(&tasks, &results, &ScoreOptions { fleiss })?;
    match format {
        Format::Table => print!("{}", report.render_table()),
        Format::Lines => print!("{}", report.render_lines()),
    }
    Ok(())
}
