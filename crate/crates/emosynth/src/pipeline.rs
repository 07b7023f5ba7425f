//! Six-stage synthesis pipeline.
//!
//! Stage order: actor extraction over plots, then per (plot, actor) the
//! utterance batch, per-utterance soft labels, context generation, context
//! cleaning, and utterance rewriting. Each completed stage is journaled
//! immediately (see [`crate::journal`]); a rerun over the same journal
//! re-executes nothing that is already settled.
//!
//! Two policies shape the data between stages:
//!
//! * soft-label scores are quantized to the 0.1 grid and clamped to [0, 1];
//! * the emotions handed to the context stages are the labels that survive
//!   the expressiveness filter, in descending expressiveness order.

use crate::corpus::PlotRecord;
use crate::error::{Error, Result};
use crate::extract::{self, ParsedSoftLabel, ParsedUtterance};
use crate::gateway::{ChatRequest, Gateway, GenerationParams};
use crate::journal::{
    ActorEntry, JournalIndex, JournalKey, JournalRecord, JournalWriter, StagePayload,
};
use crate::prompts::PromptSet;
use crate::stage::Stage;
use crate::taxonomy::{EmotionClass, LabelOutcome, Taxonomy};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};

/// Largest number of distinct classes kept per utterance.
pub const MAX_SOFT_LABELS: usize = 5;

/// Default expressiveness cut for the downstream emotion list.
pub const DEFAULT_EXPRESSIVENESS_THRESHOLD: f64 = 0.3;

/// Slack for threshold comparisons, so a score that is conceptually 0.3 but
/// stored as 0.29999999999999999 still clears an inclusive 0.3 cut.
pub const THRESHOLD_EPSILON: f64 = 1e-9;

/// Outcome of normalizing a draft's emotion tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PrimaryLabel {
    /// Tag resolved to a taxonomy class (neutral slots resolve to neutral).
    Class { class: EmotionClass },
    /// Tag is explicitly mapped to nothing; the draft skips labelling.
    Dropped { raw: String },
    /// Tag is recognized by neither the taxonomy nor the mapping. The draft
    /// is kept for audit but skips labelling.
    Unknown { raw: String },
}

impl PrimaryLabel {
    pub fn class(&self) -> Option<EmotionClass> {
        match self {
            PrimaryLabel::Class { class } => Some(*class),
            _ => None,
        }
    }
}

/// One utterance draft out of the 8 + 2 batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceDraft {
    pub ordinal: u32,
    pub text: String,
    /// Emotion tag as written in the reply; absent for neutral slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_emotion: Option<String>,
    pub primary: PrimaryLabel,
    pub neutral_slot: bool,
}

/// One normalized, quantized soft label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub class: EmotionClass,
    /// Multiple of 0.1 in [0, 1].
    pub expressiveness: f64,
    pub explanation: String,
    /// Label text as the reply wrote it.
    pub raw_label: String,
    /// The reply's score was not already on the 0.1 grid.
    pub off_grid: bool,
}

/// The soft-label set for one utterance. `labels` keeps reply order, holds
/// at most [`MAX_SOFT_LABELS`] distinct classes, and always starts with the
/// draft's primary emotion: the prompt anchors line 1 to it, and when the
/// reply drifts anyway the class is overridden and `primary_forced` set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SoftLabelSet {
    pub labels: Vec<SoftLabel>,
    /// Raw labels mapped to nothing.
    pub dropped_raw: Vec<String>,
    /// Raw labels recognized by neither taxonomy nor mapping.
    pub unknown_raw: Vec<String>,
    /// Raw labels whose class was already present (first occurrence wins).
    pub duplicate_raw: Vec<String>,
    /// Raw labels beyond the size cap.
    pub overflow_raw: Vec<String>,
    pub primary_forced: bool,
}

/// Cleaned context, or the original context when cleaning fell back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanedContext {
    pub text: String,
    /// The cleaned text differs from the input context.
    pub emotive_clauses_removed: bool,
    /// The reply was unusable; `text` is the uncleaned context.
    pub fallback: bool,
}

/// Rewritten utterance, or the original when rewriting fell back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewrittenUtterance {
    pub text: String,
    /// The reply was unusable; `text` is the original utterance.
    pub fallback: bool,
}

/// Round a raw score to the nearest 0.1 step, clamped to [0, 1]. The second
/// value reports whether the input was off that grid (including values that
/// had to be clamped).
pub fn quantize_expressiveness(raw: f64) -> (f64, bool) {
    if raw.is_nan() {
        return (0.0, true);
    }
    let quantized = (raw.clamp(0.0, 1.0) * 10.0).round() / 10.0;
    let off_grid = (raw - quantized).abs() > THRESHOLD_EPSILON;
    (quantized, off_grid)
}

/// Labels meeting the expressiveness cut, sorted by descending
/// expressiveness. The sort is stable, so ties keep reply order and the
/// primary label stays ahead of equal-scored peers. The default cut is
/// inclusive; `strict` demands strictly greater instead. Comparisons carry
/// [`THRESHOLD_EPSILON`] slack in the keeping direction of each mode.
pub fn filter_expressive(labels: &[SoftLabel], threshold: f64, strict: bool) -> Vec<SoftLabel> {
    let keeps = |v: f64| {
        if strict {
            v > threshold + THRESHOLD_EPSILON
        } else {
            v + THRESHOLD_EPSILON >= threshold
        }
    };
    let mut kept: Vec<SoftLabel> =
        labels.iter().filter(|label| keeps(label.expressiveness)).cloned().collect();
    kept.sort_by(|a, b| {
        b.expressiveness.partial_cmp(&a.expressiveness).unwrap_or(std::cmp::Ordering::Equal)
    });
    kept
}

/// Comma-joined class names of a filtered label list, in its order. This is
/// the string substituted for the emotions placeholder downstream.
pub fn emotions_phrase(filtered: &[SoftLabel]) -> String {
    filtered.iter().map(|label| label.class.name()).collect::<Vec<_>>().join(", ")
}

/// Everything a stage execution needs: the gateway, the prompt templates,
/// and the taxonomy. Cheap to share across worker threads.
pub struct StageContext<'a> {
    pub gateway: &'a Gateway,
    pub prompts: &'a PromptSet,
    pub taxonomy: &'a Taxonomy,
}

impl StageContext<'_> {
    fn reply(&self, stage: Stage, prompt: String) -> Result<String> {
        let request = ChatRequest::new(prompt, GenerationParams::for_stage(stage));
        Ok(self.gateway.complete(&request)?.text)
    }

    /// Stage 1: list the plot's characters.
    pub fn extract_actors(&self, plot: &PlotRecord) -> Result<Vec<ActorEntry>> {
        let reply = self.reply(Stage::Actors, self.prompts.actors_prompt(plot))?;
        let actors = extract::parse_actor_list(&reply)?;
        Ok(actors
            .into_iter()
            .map(|a| ActorEntry { name: a.name, annotation: a.annotation })
            .collect())
    }

    /// Stage 2: the 8 emotional + 2 neutral utterance batch for one actor.
    pub fn generate_utterances(
        &self,
        plot: &PlotRecord,
        actor: &str,
    ) -> Result<Vec<UtteranceDraft>> {
        let prompt = self.prompts.utterances_prompt(self.taxonomy, plot, actor);
        let reply = self.reply(Stage::Utterances, prompt)?;
        let parsed = extract::parse_utterance_batch(&reply)?;
        Ok(parsed.into_iter().map(|p| self.draft_from(p)).collect())
    }

    fn draft_from(&self, parsed: ParsedUtterance) -> UtteranceDraft {
        let primary = if parsed.neutral_slot {
            PrimaryLabel::Class { class: EmotionClass::Neutral }
        } else {
            let raw = parsed.raw_emotion.clone().unwrap_or_default();
            match self.taxonomy.normalize_label(&raw).map(|n| n.outcome) {
                Ok(LabelOutcome::Class(class)) => PrimaryLabel::Class { class },
                Ok(LabelOutcome::Dropped) => PrimaryLabel::Dropped { raw },
                Ok(LabelOutcome::Unknown) | Err(_) => PrimaryLabel::Unknown { raw },
            }
        };
        UtteranceDraft {
            ordinal: parsed.ordinal,
            text: parsed.text,
            raw_emotion: parsed.raw_emotion,
            primary,
            neutral_slot: parsed.neutral_slot,
        }
    }

    /// Stage 3: score up to five emotions for one utterance.
    pub fn label_utterance(&self, utterance: &str, primary: EmotionClass) -> Result<SoftLabelSet> {
        let prompt = self.prompts.soft_labels_prompt(self.taxonomy, utterance, primary.name());
        let reply = self.reply(Stage::SoftLabels, prompt)?;
        let parsed = extract::parse_soft_label_lines(&reply)?;
        Ok(self.normalize_soft_labels(parsed, primary))
    }

    /// Normalize parsed soft-label lines into a [`SoftLabelSet`]. Total: any
    /// parsed input yields a set, and the set always contains the primary.
    pub fn normalize_soft_labels(
        &self,
        parsed: Vec<ParsedSoftLabel>,
        primary: EmotionClass,
    ) -> SoftLabelSet {
        let mut set = SoftLabelSet::default();
        for (position, entry) in parsed.into_iter().enumerate() {
            let outcome = self
                .taxonomy
                .normalize_label(&entry.raw_label)
                .map(|n| n.outcome)
                .unwrap_or(LabelOutcome::Unknown);
            let (expressiveness, off_grid) = quantize_expressiveness(entry.raw_score);
            if position == 0 {
                // the prompt seeds line 1 with the primary; trust the seed
                // over whatever the reply spelled there
                set.primary_forced = outcome != LabelOutcome::Class(primary);
                set.labels.push(SoftLabel {
                    class: primary,
                    expressiveness,
                    explanation: entry.explanation,
                    raw_label: entry.raw_label,
                    off_grid,
                });
                continue;
            }
            match outcome {
                LabelOutcome::Class(class) => {
                    if set.labels.iter().any(|l| l.class == class) {
                        set.duplicate_raw.push(entry.raw_label);
                    } else if set.labels.len() >= MAX_SOFT_LABELS {
                        set.overflow_raw.push(entry.raw_label);
                    } else {
                        set.labels.push(SoftLabel {
                            class,
                            expressiveness,
                            explanation: entry.explanation,
                            raw_label: entry.raw_label,
                            off_grid,
                        });
                    }
                }
                LabelOutcome::Dropped => set.dropped_raw.push(entry.raw_label),
                LabelOutcome::Unknown => set.unknown_raw.push(entry.raw_label),
            }
        }
        set
    }

    /// Stage 4: explain the utterance as a summary of the plot's events.
    pub fn generate_context(
        &self,
        plot: &PlotRecord,
        actor: &str,
        utterance: &str,
        emotions: &str,
    ) -> Result<String> {
        let prompt = self.prompts.context_prompt(plot, actor, utterance, emotions);
        let reply = self.reply(Stage::Context, prompt)?;
        let text = extract::strip_boilerplate(&reply);
        if text.is_empty() {
            return Err(Error::StageEmpty {
                stage: Stage::Context,
                detail: "reply reduced to nothing after cleanup".into(),
            });
        }
        Ok(text)
    }

    /// Stage 5: remove emotion-discussing clauses from the context. Never
    /// stage-empty: an unusable reply falls back to the uncleaned context.
    pub fn clean_context(
        &self,
        actor: &str,
        context: &str,
        emotions: &str,
    ) -> Result<CleanedContext> {
        let prompt = self.prompts.cleaning_prompt(actor, context, emotions);
        let reply = self.reply(Stage::Cleaning, prompt)?;
        let text = extract::strip_boilerplate(&reply);
        Ok(if text.is_empty() {
            CleanedContext {
                text: context.to_string(),
                emotive_clauses_removed: false,
                fallback: true,
            }
        } else {
            let emotive_clauses_removed = text != context;
            CleanedContext { text, emotive_clauses_removed, fallback: false }
        })
    }

    /// Stage 6: rewrite the utterance so the emotions are ambiguous without
    /// the cleaned context. Falls back to the original on unusable replies.
    pub fn rewrite_utterance(
        &self,
        cleaned_context: &str,
        actor: &str,
        utterance: &str,
        emotions: &str,
    ) -> Result<RewrittenUtterance> {
        let prompt = self.prompts.rewriting_prompt(cleaned_context, actor, utterance, emotions);
        let reply = self.reply(Stage::Rewriting, prompt)?;
        let text = extract::strip_boilerplate(&reply);
        Ok(if text.is_empty() {
            RewrittenUtterance { text: utterance.to_string(), fallback: true }
        } else {
            RewrittenUtterance { text, fallback: false }
        })
    }
}

/// Knobs for one run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Stages to execute. Unselected stages are never called; units whose
    /// prerequisites are missing are counted as skipped.
    pub stages: Vec<Stage>,
    pub threshold: f64,
    pub strict_threshold: bool,
    /// Worker threads. The gateway enforces its own request bound, so this
    /// caps pipeline parallelism, not necessarily requests in flight.
    pub concurrency: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stages: Stage::ALL.to_vec(),
            threshold: DEFAULT_EXPRESSIVENESS_THRESHOLD,
            strict_threshold: false,
            concurrency: 4,
        }
    }
}

/// Per-stage tally of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    /// Executed and journaled ok.
    pub ok: usize,
    /// Executed and journaled stage-empty.
    pub empty: usize,
    /// Settled by a journal record from an earlier run (ok or empty).
    pub reused: usize,
    /// Not attempted: stage unselected, prerequisite missing, or the unit is
    /// excluded by policy (unlabellable primary, label-less draft).
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    /// Counts in [`Stage::ALL`] order.
    pub counts: [StageCounts; 6],
    /// Backend calls made by this run (retries within one logical request
    /// are not separate calls).
    pub gateway_calls: usize,
    pub corrupt_journal_lines: usize,
}

impl RunReport {
    pub fn stage(&self, stage: Stage) -> &StageCounts {
        &self.counts[slot(stage)]
    }
}

fn slot(stage: Stage) -> usize {
    Stage::ALL.iter().position(|s| *s == stage).unwrap()
}

struct Shared<'a> {
    ctx: &'a StageContext<'a>,
    index: &'a JournalIndex,
    selected: [bool; 6],
    threshold: f64,
    strict: bool,
    counts: &'a Mutex<[StageCounts; 6]>,
    failure: &'a Mutex<Option<Error>>,
    cancelled: &'a AtomicBool,
}

impl Shared<'_> {
    fn cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    fn selected(&self, stage: Stage) -> bool {
        self.selected[slot(stage)]
    }

    fn bump(&self, stage: Stage, apply: impl FnOnce(&mut StageCounts)) {
        apply(&mut self.counts.lock().unwrap()[slot(stage)]);
    }

    /// Record the first failure and cancel remaining work. Later failures
    /// are usually knock-on effects and are dropped.
    fn fail(&self, error: Error) {
        let mut guard = self.failure.lock().unwrap();
        if guard.is_none() {
            *guard = Some(error);
        }
        self.cancelled.store(true, Ordering::SeqCst);
    }

    fn send(&self, tx: &mpsc::Sender<JournalRecord>, record: JournalRecord) {
        if tx.send(record).is_err() {
            // writer is gone; its own error surfaces at join time
            self.cancelled.store(true, Ordering::SeqCst);
        }
    }
}

/// Run the selected stages over `plots`, journaling to `journal_path`.
///
/// Resume is implicit: whatever the journal already settles is reused, so
/// running twice over the same journal makes zero backend calls the second
/// time. Transport failures abort the run (the journal keeps everything
/// completed so far); stage-empty outcomes are journaled and skipped.
pub fn run(
    ctx: &StageContext,
    plots: &[PlotRecord],
    journal_path: &Path,
    options: &RunOptions,
) -> Result<RunReport> {
    if options.stages.is_empty() {
        return Err(Error::invalid("at least one stage must be selected"));
    }
    if !(0.0..=1.0).contains(&options.threshold) {
        return Err(Error::invalid(format!(
            "expressiveness threshold must be within [0, 1], got {}",
            options.threshold
        )));
    }
    if options.concurrency == 0 {
        return Err(Error::invalid("concurrency must be at least 1"));
    }
    let mut selected = [false; 6];
    for stage in &options.stages {
        selected[slot(*stage)] = true;
    }

    let index = JournalIndex::load(journal_path)?;
    let corrupt_journal_lines = index.corrupt_lines.len();
    let writer = JournalWriter::open(journal_path)?;
    let calls_before = ctx.gateway.calls();

    let counts: Mutex<[StageCounts; 6]> = Mutex::new(Default::default());
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let cancelled = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<JournalRecord>();

    let shared = Shared {
        ctx,
        index: &index,
        selected,
        threshold: options.threshold,
        strict: options.strict_threshold,
        counts: &counts,
        failure: &failure,
        cancelled: &cancelled,
    };

    // single writer: records land in completion order, flushed one by one
    let writer_handle = std::thread::spawn(move || -> Result<()> {
        let mut writer = writer;
        for record in rx {
            writer.append(&record)?;
        }
        Ok(())
    });

    // phase 1: actor lists, one unit per plot
    let actor_lists: Vec<Mutex<Option<Vec<ActorEntry>>>> =
        plots.iter().map(|_| Mutex::new(None)).collect();
    run_pool(options.concurrency, plots.len(), &tx, |i, tx| {
        let actors = process_plot(&shared, &plots[i], tx);
        *actor_lists[i].lock().unwrap() = actors;
    });

    // phase 2: one unit per (plot, actor), each walking its drafts in order
    let mut units: Vec<(usize, String)> = Vec::new();
    for (i, slot) in actor_lists.iter().enumerate() {
        if let Some(actors) = slot.lock().unwrap().as_ref() {
            for actor in actors {
                units.push((i, actor.name.clone()));
            }
        }
    }
    run_pool(options.concurrency, units.len(), &tx, |i, tx| {
        let (plot_index, actor) = &units[i];
        process_unit(&shared, &plots[*plot_index], actor, tx);
    });

    drop(tx);
    let writer_result: Result<()> = match writer_handle.join() {
        Ok(result) => result,
        Err(_) => Err(Error::invalid("journal writer thread panicked")),
    };
    if let Some(error) = failure.into_inner().unwrap() {
        return Err(error);
    }
    writer_result?;

    Ok(RunReport {
        counts: counts.into_inner().unwrap(),
        gateway_calls: ctx.gateway.calls() - calls_before,
        corrupt_journal_lines,
    })
}

/// Fan `total` unit indices over at most `workers` scoped threads. Each
/// worker gets its own journal sender.
fn run_pool<F>(workers: usize, total: usize, tx: &mpsc::Sender<JournalRecord>, work: F)
where
    F: Fn(usize, &mpsc::Sender<JournalRecord>) + Sync,
{
    if total == 0 {
        return;
    }
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(total) {
            let tx = tx.clone();
            let cursor = &cursor;
            let work = &work;
            scope.spawn(move || loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                work(i, &tx);
            });
        }
    });
}

fn process_plot(
    shared: &Shared,
    plot: &PlotRecord,
    tx: &mpsc::Sender<JournalRecord>,
) -> Option<Vec<ActorEntry>> {
    if shared.cancelled() {
        return None;
    }
    let key = JournalKey::actors(&plot.plot_id);
    match shared.index.get(&key) {
        Some(record) => {
            shared.bump(Stage::Actors, |c| c.reused += 1);
            match &record.payload {
                Some(StagePayload::Actors { actors }) => Some(actors.clone()),
                _ => None,
            }
        }
        None if shared.selected(Stage::Actors) => match shared.ctx.extract_actors(plot) {
            Ok(actors) => {
                let payload = StagePayload::Actors { actors: actors.clone() };
                shared.send(tx, JournalRecord::ok(key, payload));
                shared.bump(Stage::Actors, |c| c.ok += 1);
                Some(actors)
            }
            Err(Error::StageEmpty { detail, .. }) => {
                shared.send(tx, JournalRecord::empty(key, detail));
                shared.bump(Stage::Actors, |c| c.empty += 1);
                None
            }
            Err(error) => {
                shared.fail(error);
                None
            }
        },
        None => {
            shared.bump(Stage::Actors, |c| c.skipped += 1);
            None
        }
    }
}

fn process_unit(shared: &Shared, plot: &PlotRecord, actor: &str, tx: &mpsc::Sender<JournalRecord>) {
    if shared.cancelled() {
        return;
    }
    let key = JournalKey::utterances(&plot.plot_id, actor);
    let drafts: Vec<UtteranceDraft> = match shared.index.get(&key) {
        Some(record) => {
            shared.bump(Stage::Utterances, |c| c.reused += 1);
            match &record.payload {
                Some(StagePayload::Utterances { drafts }) => drafts.clone(),
                _ => return,
            }
        }
        None if shared.selected(Stage::Utterances) => {
            match shared.ctx.generate_utterances(plot, actor) {
                Ok(drafts) => {
                    let payload = StagePayload::Utterances { drafts: drafts.clone() };
                    shared.send(tx, JournalRecord::ok(key, payload));
                    shared.bump(Stage::Utterances, |c| c.ok += 1);
                    drafts
                }
                Err(Error::StageEmpty { detail, .. }) => {
                    shared.send(tx, JournalRecord::empty(key, detail));
                    shared.bump(Stage::Utterances, |c| c.empty += 1);
                    return;
                }
                Err(error) => return shared.fail(error),
            }
        }
        None => return shared.bump(Stage::Utterances, |c| c.skipped += 1),
    };

    for draft in &drafts {
        if shared.cancelled() {
            return;
        }
        process_draft(shared, plot, actor, draft, tx);
    }
}

fn process_draft(
    shared: &Shared,
    plot: &PlotRecord,
    actor: &str,
    draft: &UtteranceDraft,
    tx: &mpsc::Sender<JournalRecord>,
) {
    let Some(primary) = draft.primary.class() else {
        // dropped or unknown primary: kept in the batch for audit, never
        // labelled or given a context chain
        shared.bump(Stage::SoftLabels, |c| c.skipped += 1);
        return;
    };

    let key = JournalKey::draft_stage(&plot.plot_id, actor, draft.ordinal, Stage::SoftLabels);
    let labels: SoftLabelSet = match shared.index.get(&key) {
        Some(record) => {
            shared.bump(Stage::SoftLabels, |c| c.reused += 1);
            match &record.payload {
                Some(StagePayload::SoftLabels { labels }) => labels.clone(),
                _ => return,
            }
        }
        None if shared.selected(Stage::SoftLabels) => {
            match shared.ctx.label_utterance(&draft.text, primary) {
                Ok(labels) => {
                    let payload = StagePayload::SoftLabels { labels: labels.clone() };
                    shared.send(tx, JournalRecord::ok(key, payload));
                    shared.bump(Stage::SoftLabels, |c| c.ok += 1);
                    labels
                }
                Err(Error::StageEmpty { detail, .. }) => {
                    shared.send(tx, JournalRecord::empty(key, detail));
                    shared.bump(Stage::SoftLabels, |c| c.empty += 1);
                    return;
                }
                Err(error) => return shared.fail(error),
            }
        }
        None => return shared.bump(Stage::SoftLabels, |c| c.skipped += 1),
    };

    let filtered = filter_expressive(&labels.labels, shared.threshold, shared.strict);
    if filtered.is_empty() {
        // label-less draft: stays in the dataset, drives no context chain
        shared.bump(Stage::Context, |c| c.skipped += 1);
        return;
    }
    let emotions = emotions_phrase(&filtered);

    let key = JournalKey::draft_stage(&plot.plot_id, actor, draft.ordinal, Stage::Context);
    let context: String = match shared.index.get(&key) {
        Some(record) => {
            shared.bump(Stage::Context, |c| c.reused += 1);
            match &record.payload {
                Some(StagePayload::Context { text }) => text.clone(),
                _ => return,
            }
        }
        None if shared.selected(Stage::Context) => {
            match shared.ctx.generate_context(plot, actor, &draft.text, &emotions) {
                Ok(text) => {
                    let payload = StagePayload::Context { text: text.clone() };
                    shared.send(tx, JournalRecord::ok(key, payload));
                    shared.bump(Stage::Context, |c| c.ok += 1);
                    text
                }
                Err(Error::StageEmpty { detail, .. }) => {
                    shared.send(tx, JournalRecord::empty(key, detail));
                    shared.bump(Stage::Context, |c| c.empty += 1);
                    return;
                }
                Err(error) => return shared.fail(error),
            }
        }
        None => return shared.bump(Stage::Context, |c| c.skipped += 1),
    };

    let key = JournalKey::draft_stage(&plot.plot_id, actor, draft.ordinal, Stage::Cleaning);
    let cleaned: CleanedContext = match shared.index.get(&key) {
        Some(record) => {
            shared.bump(Stage::Cleaning, |c| c.reused += 1);
            match &record.payload {
                Some(StagePayload::Cleaning { cleaned }) => cleaned.clone(),
                _ => return,
            }
        }
        None if shared.selected(Stage::Cleaning) => {
            match shared.ctx.clean_context(actor, &context, &emotions) {
                Ok(cleaned) => {
                    let payload = StagePayload::Cleaning { cleaned: cleaned.clone() };
                    shared.send(tx, JournalRecord::ok(key, payload));
                    shared.bump(Stage::Cleaning, |c| c.ok += 1);
                    cleaned
                }
                Err(Error::StageEmpty { detail, .. }) => {
                    shared.send(tx, JournalRecord::empty(key, detail));
                    shared.bump(Stage::Cleaning, |c| c.empty += 1);
                    return;
                }
                Err(error) => return shared.fail(error),
            }
        }
        None => return shared.bump(Stage::Cleaning, |c| c.skipped += 1),
    };

    let key = JournalKey::draft_stage(&plot.plot_id, actor, draft.ordinal, Stage::Rewriting);
    if shared.index.contains(&key) {
        return shared.bump(Stage::Rewriting, |c| c.reused += 1);
    }
    if !shared.selected(Stage::Rewriting) {
        return shared.bump(Stage::Rewriting, |c| c.skipped += 1);
    }
    match shared.ctx.rewrite_utterance(&cleaned.text, actor, &draft.text, &emotions) {
        Ok(rewritten) => {
            let payload = StagePayload::Rewriting { rewritten };
            shared.send(tx, JournalRecord::ok(key, payload));
            shared.bump(Stage::Rewriting, |c| c.ok += 1);
        }
        Err(Error::StageEmpty { detail, .. }) => {
            shared.send(tx, JournalRecord::empty(key, detail));
            shared.bump(Stage::Rewriting, |c| c.empty += 1);
        }
        Err(error) => shared.fail(error),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::MockChat;
    use crate::gateway::RetryPolicy;
    use proptest::prelude::*;

    fn label(class: EmotionClass, expressiveness: f64) -> SoftLabel {
        SoftLabel {
            class,
            expressiveness,
            explanation: String::new(),
            raw_label: class.name().to_string(),
            off_grid: false,
        }
    }

    fn parsed(raw_label: &str, raw_score: f64) -> ParsedSoftLabel {
        ParsedSoftLabel { raw_label: raw_label.to_string(), raw_score, explanation: String::new() }
    }

    fn mock_gateway() -> Gateway {
        Gateway::new(Box::new(MockChat::new()), 4, RetryPolicy::default()).unwrap()
    }

    #[test]
    fn quantize_snaps_to_the_grid_and_clamps() {
        assert_eq!(quantize_expressiveness(0.43), (0.4, true));
        assert_eq!(quantize_expressiveness(0.45), (0.5, true));
        assert_eq!(quantize_expressiveness(-0.2), (0.0, true));
        assert_eq!(quantize_expressiveness(1.7), (1.0, true));
        assert_eq!(quantize_expressiveness(f64::NAN), (0.0, true));
        for tenths in 0..=10 {
            let value = tenths as f64 / 10.0;
            assert_eq!(quantize_expressiveness(value), (value, false));
        }
    }

    #[test]
    fn filter_keeps_the_threshold_value_by_default() {
        let labels = vec![
            label(EmotionClass::Anger, 0.2),
            label(EmotionClass::Joy, 0.3),
            label(EmotionClass::Fear, 0.8),
        ];
        let kept = filter_expressive(&labels, 0.3, false);
        let names: Vec<&str> = kept.iter().map(|l| l.class.name()).collect();
        assert_eq!(names, ["fear", "joy"]);
    }

    #[test]
    fn strict_filter_excludes_the_threshold_value() {
        let labels = vec![label(EmotionClass::Joy, 0.3), label(EmotionClass::Fear, 0.4)];
        let kept = filter_expressive(&labels, 0.3, true);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].class, EmotionClass::Fear);
    }

    #[test]
    fn filter_sorts_descending_and_keeps_tie_order() {
        let labels = vec![
            label(EmotionClass::Anger, 1.0),
            label(EmotionClass::Caring, 1.0),
            label(EmotionClass::Desire, 0.8),
            label(EmotionClass::Confusion, 0.5),
        ];
        let kept = filter_expressive(&labels, 0.3, false);
        assert_eq!(emotions_phrase(&kept), "anger, caring, desire, confusion");
    }

    #[test]
    fn normalize_forces_the_seeded_primary_on_line_one() {
        let taxonomy = Taxonomy::builtin();
        let ctx = StageContext {
            gateway: &mock_gateway(),
            prompts: &PromptSet::builtin(),
            taxonomy: &taxonomy,
        };
        let set = ctx.normalize_soft_labels(
            vec![parsed("excitement", 0.9), parsed("joy", 0.6)],
            EmotionClass::Anger,
        );
        assert!(set.primary_forced);
        assert_eq!(set.labels[0].class, EmotionClass::Anger);
        assert_eq!(set.labels[0].raw_label, "excitement");
        assert_eq!(set.labels[1].class, EmotionClass::Joy);
    }

    #[test]
    fn normalize_routes_duplicates_drops_unknowns_and_caps_size() {
        let taxonomy = Taxonomy::builtin();
        let ctx = StageContext {
            gateway: &mock_gateway(),
            prompts: &PromptSet::builtin(),
            taxonomy: &taxonomy,
        };
        let set = ctx.normalize_soft_labels(
            vec![
                parsed("anger", 1.0),
                parsed("Anger", 0.9),
                parsed("calm", 0.8),
                parsed("melancholy", 0.7),
                parsed("anxiety", 0.6),
                parsed("joy", 0.5),
                parsed("fear", 0.4),
                parsed("sadness", 0.3),
                parsed("pride", 0.2),
            ],
            EmotionClass::Anger,
        );
        assert!(!set.primary_forced);
        let classes: Vec<EmotionClass> = set.labels.iter().map(|l| l.class).collect();
        assert_eq!(
            classes,
            [
                EmotionClass::Anger,
                EmotionClass::Nervousness,
                EmotionClass::Joy,
                EmotionClass::Fear,
                EmotionClass::Sadness,
            ]
        );
        assert_eq!(set.duplicate_raw, ["Anger"]);
        assert_eq!(set.dropped_raw, ["calm"]);
        assert_eq!(set.unknown_raw, ["melancholy"]);
        assert_eq!(set.overflow_raw, ["pride"]);
    }

    #[test]
    fn full_run_then_rerun_makes_no_new_calls() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("journal.jsonl");
        let taxonomy = Taxonomy::builtin();
        let prompts = PromptSet::builtin();
        let gateway = mock_gateway();
        let ctx = StageContext { gateway: &gateway, prompts: &prompts, taxonomy: &taxonomy };
        let plots = vec![
            PlotRecord::new("First", "A stranger arrives in a quiet harbor town."),
            PlotRecord::new("Second", "Two siblings inherit a failing observatory."),
        ];
        let options = RunOptions { concurrency: 3, ..RunOptions::default() };

        let first = run(&ctx, &plots, &journal, &options).unwrap();
        assert!(first.gateway_calls > 0);
        assert_eq!(first.stage(Stage::Actors).ok, 2);
        assert_eq!(first.stage(Stage::Utterances).ok, 6, "three synthesized actors per plot");
        assert_eq!(first.stage(Stage::SoftLabels).ok, 60, "ten drafts per actor");
        let chains = first.stage(Stage::Context).ok;
        assert!(chains > 0);
        assert_eq!(first.stage(Stage::Cleaning).ok, chains);
        assert_eq!(first.stage(Stage::Rewriting).ok, chains);

        let second = run(&ctx, &plots, &journal, &options).unwrap();
        assert_eq!(second.gateway_calls, 0);
        assert_eq!(second.stage(Stage::Actors).reused, 2);
        assert_eq!(second.stage(Stage::Utterances).reused, 6);
        assert_eq!(second.stage(Stage::SoftLabels).reused, 60);
        assert_eq!(second.stage(Stage::Rewriting).reused, chains);
        assert_eq!(second.stage(Stage::Rewriting).ok, 0);
    }

    #[test]
    fn staged_run_resumes_where_the_previous_left_off() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("journal.jsonl");
        let taxonomy = Taxonomy::builtin();
        let prompts = PromptSet::builtin();
        let gateway = mock_gateway();
        let ctx = StageContext { gateway: &gateway, prompts: &prompts, taxonomy: &taxonomy };
        let plots = vec![PlotRecord::new("Only", "A cartographer maps a vanished coastline.")];

        let head = RunOptions {
            stages: vec![Stage::Actors, Stage::Utterances, Stage::SoftLabels],
            concurrency: 2,
            ..RunOptions::default()
        };
        let first = run(&ctx, &plots, &journal, &head).unwrap();
        assert_eq!(first.stage(Stage::SoftLabels).ok, 30);
        assert_eq!(first.stage(Stage::Context).ok, 0);
        assert!(first.stage(Stage::Context).skipped > 0);

        let full = RunOptions { concurrency: 2, ..RunOptions::default() };
        let second = run(&ctx, &plots, &journal, &full).unwrap();
        assert_eq!(second.stage(Stage::SoftLabels).reused, 30);
        assert_eq!(second.stage(Stage::SoftLabels).ok, 0);
        assert!(second.stage(Stage::Context).ok > 0);
        assert_eq!(second.gateway_calls % 3, 0, "context, cleaning, rewriting per chain");

        let third = run(&ctx, &plots, &journal, &full).unwrap();
        assert_eq!(third.gateway_calls, 0);
    }

    #[test]
    fn missing_fixture_in_fixtures_only_mode_aborts_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let fixtures = dir.path().join("fixtures");
        std::fs::create_dir(&fixtures).unwrap();
        let journal = dir.path().join("journal.jsonl");
        let taxonomy = Taxonomy::builtin();
        let prompts = PromptSet::builtin();
        let gateway =
            Gateway::new(Box::new(MockChat::fixtures_only(&fixtures)), 2, RetryPolicy::default())
                .unwrap();
        let ctx = StageContext { gateway: &gateway, prompts: &prompts, taxonomy: &taxonomy };
        let plots = vec![PlotRecord::new("Only", "An archivist finds a letter.")];
        let error = run(&ctx, &plots, &journal, &RunOptions::default()).unwrap_err();
        assert!(matches!(error, Error::Protocol { .. }));
    }

    #[test]
    fn rejects_invalid_options() {
        let taxonomy = Taxonomy::builtin();
        let prompts = PromptSet::builtin();
        let gateway = mock_gateway();
        let ctx = StageContext { gateway: &gateway, prompts: &prompts, taxonomy: &taxonomy };
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("journal.jsonl");
        for options in [
            RunOptions { stages: vec![], ..RunOptions::default() },
            RunOptions { threshold: 1.5, ..RunOptions::default() },
            RunOptions { concurrency: 0, ..RunOptions::default() },
        ] {
            let error = run(&ctx, &[], &journal, &options).unwrap_err();
            assert!(error.is_user_error(), "{error}");
        }
    }

    proptest! {
        #[test]
        fn quantized_scores_land_on_the_grid(raw in -5.0f64..5.0) {
            let (value, _) = quantize_expressiveness(raw);
            prop_assert!((0.0..=1.0).contains(&value));
            let tenths = value * 10.0;
            prop_assert!((tenths - tenths.round()).abs() < THRESHOLD_EPSILON);
        }

        #[test]
        fn filter_output_is_sorted_descending(
            scores in proptest::collection::vec(0.0f64..=1.0, 0..12),
            threshold in 0.0f64..=1.0,
            strict in any::<bool>(),
        ) {
            let all = EmotionClass::ALL;
            let labels: Vec<SoftLabel> = scores
                .iter()
                .enumerate()
                .map(|(i, s)| label(all[i % all.len()], quantize_expressiveness(*s).0))
                .collect();
            let kept = filter_expressive(&labels, threshold, strict);
            for pair in kept.windows(2) {
                prop_assert!(pair[0].expressiveness >= pair[1].expressiveness);
            }
            if strict {
                for l in &kept {
                    prop_assert!(l.expressiveness > threshold);
                }
            }
        }
    }
}
