//! Dataset assembly, persistence, splits, statistics, and flat export.
//!
//! Assembly reads a run journal and produces one example per draft whose
//! chain is consistent: either context-less (labels only) or context-full
//! (context, cleaned context, and rewritten utterance all present). Chains
//! that stop partway through the context stages go to quarantine instead of
//! silently shipping half a chain.
//!
//! The unfiltered soft labels ride along with the filtered view, so the
//! expressiveness cut can be re-run at assembly time without re-inference.

use crate::error::{Error, Result};
use crate::journal::{JournalIndex, JournalKey, StagePayload, StageStatus};
use crate::pipeline::{
    filter_expressive, PrimaryLabel, SoftLabel, SoftLabelSet, UtteranceDraft,
    DEFAULT_EXPRESSIVENESS_THRESHOLD,
};
use crate::stage::Stage;
use crate::taxonomy::{EmotionClass, Polarity};
use crate::util;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Quality annotations carried from the pipeline into the dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    /// No soft label met the expressiveness cut; excluded from training
    /// exports but kept here for audit.
    LabelLess,
    /// Line 1 of the label reply disagreed with the seeded primary.
    PrimaryForced,
    /// At least one score needed rounding onto the 0.1 grid.
    OffGridScores,
    /// The reply repeated a class; first occurrence won.
    DuplicateLabels,
    /// The reply listed more classes than the cap.
    OverflowLabels,
    /// The reply used labels outside taxonomy and mapping.
    UnknownLabels,
    /// The reply used labels that are mapped to nothing.
    DroppedLabels,
    /// Context generation settled empty; the example is context-less.
    ContextEmpty,
    /// Cleaning fell back to the uncleaned context.
    CleanFallback,
    /// Rewriting fell back to the original utterance.
    RewriteFallback,
}

/// One dataset example. Field order is the serialization order and is kept
/// stable so re-assembly of an unchanged journal is byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetExample {
    pub example_id: String,
    pub plot_id: String,
    pub actor: String,
    pub ordinal: u32,
    pub neutral_slot: bool,
    pub primary_emotion: EmotionClass,
    /// Emotion tag as the utterance reply spelled it; absent for neutral
    /// slots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_primary: Option<String>,
    pub utterance_orig: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_rewr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_orig: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_clean: Option<String>,
    /// Full label set, including raw spellings, per-label explanations, and
    /// the audit lists for dropped, unknown, duplicate, and overflow labels.
    pub soft_labels: SoftLabelSet,
    /// Labels meeting the expressiveness cut, descending by expressiveness.
    pub soft_labels_filtered: Vec<SoftLabel>,
    pub flags: Vec<QualityFlag>,
}

impl DatasetExample {
    /// The example is a full-chain row with context and rewrite.
    pub fn is_context_full(&self) -> bool {
        self.context_clean.is_some()
    }
}

/// Lowercased alphanumeric slug with dashes, for readable example ids.
fn slugify(name: &str) -> String {
    let mut slug = String::new();
    for ch in name.to_lowercase().chars() {
        if ch.is_ascii_alphanumeric() {
            slug.push(ch);
        } else if !slug.is_empty() && !slug.ends_with('-') {
            slug.push('-');
        }
    }
    slug.truncate(24);
    while slug.ends_with('-') {
        slug.pop();
    }
    if slug.is_empty() {
        slug.push_str("actor");
    }
    slug
}

/// Deterministic example id: plot id, actor slug with a short hash to keep
/// slug collisions apart, and the zero-padded ordinal.
pub fn example_id(plot_id: &str, actor: &str, ordinal: u32) -> String {
    let digest = Sha256::digest(actor.as_bytes());
    format!("{plot_id}.{}-{:02x}{:02x}.{ordinal:02}", slugify(actor), digest[0], digest[1])
}

/// Why a draft was kept out of the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub plot_id: String,
    pub actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u32>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AssemblyReport {
    pub examples: usize,
    /// Examples without context fields.
    pub orig_only: usize,
    /// Examples with the full context chain.
    pub context_full: usize,
    /// Examples whose filtered label set is empty (subset of `examples`).
    pub label_less: usize,
    pub quarantined: usize,
    pub corrupt_journal_lines: usize,
}

#[derive(Debug)]
pub struct AssemblyOutput {
    pub examples: Vec<DatasetExample>,
    pub quarantine: Vec<QuarantineRecord>,
    pub report: AssemblyReport,
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub threshold: f64,
    pub strict_threshold: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions { threshold: DEFAULT_EXPRESSIVENESS_THRESHOLD, strict_threshold: false }
    }
}

/// Assemble a journal into dataset examples plus quarantine. Output order
/// is (plot_id, actor, ordinal), independent of journal line order.
pub fn assemble(index: &JournalIndex, options: &AssembleOptions) -> Result<AssemblyOutput> {
    if !(0.0..=1.0).contains(&options.threshold) {
        return Err(Error::invalid(format!(
            "expressiveness threshold must be within [0, 1], got {}",
            options.threshold
        )));
    }

    let mut units: BTreeMap<(String, String), Vec<UtteranceDraft>> = BTreeMap::new();
    for record in index.records() {
        if record.stage != Stage::Utterances || record.status != StageStatus::Ok {
            continue;
        }
        if let (Some(actor), Some(StagePayload::Utterances { drafts })) =
            (&record.actor, &record.payload)
        {
            units.insert((record.plot_id.clone(), actor.clone()), drafts.clone());
        }
    }

    let mut output = AssemblyOutput {
        examples: Vec::new(),
        quarantine: Vec::new(),
        report: AssemblyReport {
            corrupt_journal_lines: index.corrupt_lines.len(),
            ..AssemblyReport::default()
        },
    };
    for ((plot_id, actor), mut drafts) in units {
        drafts.sort_by_key(|d| d.ordinal);
        for draft in drafts {
            assemble_draft(index, options, &plot_id, &actor, &draft, &mut output);
        }
    }
    output.report.examples = output.examples.len();
    output.report.quarantined = output.quarantine.len();
    Ok(output)
}

fn assemble_draft(
    index: &JournalIndex,
    options: &AssembleOptions,
    plot_id: &str,
    actor: &str,
    draft: &UtteranceDraft,
    output: &mut AssemblyOutput,
) {
    let mut quarantine = |reason: String| {
        output.quarantine.push(QuarantineRecord {
            plot_id: plot_id.to_string(),
            actor: actor.to_string(),
            ordinal: Some(draft.ordinal),
            reason,
        });
    };

    let primary = match &draft.primary {
        PrimaryLabel::Class { class } => *class,
        PrimaryLabel::Dropped { raw } => {
            return quarantine(format!("primary emotion tag maps to nothing: {raw:?}"));
        }
        PrimaryLabel::Unknown { raw } => {
            return quarantine(format!("primary emotion tag not recognized: {raw:?}"));
        }
    };

    let labels_key = JournalKey::draft_stage(plot_id, actor, draft.ordinal, Stage::SoftLabels);
    let labels: SoftLabelSet = match index.get(&labels_key) {
        Some(record) => match &record.payload {
            Some(StagePayload::SoftLabels { labels }) => labels.clone(),
            _ => return quarantine("soft labels settled empty".into()),
        },
        None => return quarantine("soft labels missing from the journal".into()),
    };

    let filtered = filter_expressive(&labels.labels, options.threshold, options.strict_threshold);

    let mut flags = Vec::new();
    if filtered.is_empty() {
        flags.push(QualityFlag::LabelLess);
    }
    if labels.primary_forced {
        flags.push(QualityFlag::PrimaryForced);
    }
    if labels.labels.iter().any(|l| l.off_grid) {
        flags.push(QualityFlag::OffGridScores);
    }
    if !labels.duplicate_raw.is_empty() {
        flags.push(QualityFlag::DuplicateLabels);
    }
    if !labels.overflow_raw.is_empty() {
        flags.push(QualityFlag::OverflowLabels);
    }
    if !labels.unknown_raw.is_empty() {
        flags.push(QualityFlag::UnknownLabels);
    }
    if !labels.dropped_raw.is_empty() {
        flags.push(QualityFlag::DroppedLabels);
    }

    let mut context_orig = None;
    let mut context_clean = None;
    let mut utterance_rewr = None;

    let context_key = JournalKey::draft_stage(plot_id, actor, draft.ordinal, Stage::Context);
    match index.get(&context_key) {
        None => {}
        Some(record) if record.status == StageStatus::Empty => {
            flags.push(QualityFlag::ContextEmpty);
        }
        Some(record) => {
            let Some(StagePayload::Context { text }) = &record.payload else {
                return quarantine("context record carries no payload".into());
            };

            let cleaning_key =
                JournalKey::draft_stage(plot_id, actor, draft.ordinal, Stage::Cleaning);
            let cleaned = match index.get(&cleaning_key) {
                Some(record) => match &record.payload {
                    Some(StagePayload::Cleaning { cleaned }) => cleaned.clone(),
                    _ => {
                        return quarantine(
                            "incomplete context chain: cleaning settled empty".into(),
                        )
                    }
                },
                None => return quarantine("incomplete context chain: cleaning missing".into()),
            };

            let rewriting_key =
                JournalKey::draft_stage(plot_id, actor, draft.ordinal, Stage::Rewriting);
            let rewritten = match index.get(&rewriting_key) {
                Some(record) => match &record.payload {
                    Some(StagePayload::Rewriting { rewritten }) => rewritten.clone(),
                    _ => {
                        return quarantine(
                            "incomplete context chain: rewriting settled empty".into(),
                        )
                    }
                },
                None => return quarantine("incomplete context chain: rewriting missing".into()),
            };

            if cleaned.fallback {
                flags.push(QualityFlag::CleanFallback);
            }
            if rewritten.fallback {
                flags.push(QualityFlag::RewriteFallback);
            }
            context_orig = Some(text.clone());
            context_clean = Some(cleaned.text);
            utterance_rewr = Some(rewritten.text);
        }
    }

    let example = DatasetExample {
        example_id: example_id(plot_id, actor, draft.ordinal),
        plot_id: plot_id.to_string(),
        actor: actor.to_string(),
        ordinal: draft.ordinal,
        neutral_slot: draft.neutral_slot,
        primary_emotion: primary,
        raw_primary: draft.raw_emotion.clone(),
        utterance_orig: draft.text.clone(),
        utterance_rewr,
        context_orig,
        context_clean,
        soft_labels: labels,
        soft_labels_filtered: filtered,
        flags,
    };
    if example.is_context_full() {
        output.report.context_full += 1;
    } else {
        output.report.orig_only += 1;
    }
    if example.flags.contains(&QualityFlag::LabelLess) {
        output.report.label_less += 1;
    }
    output.examples.push(example);
}

/// Write examples as line-delimited records, one example per line.
pub fn write_dataset(path: &Path, examples: &[DatasetExample]) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetExample>> {
    read_jsonl(path)
}

pub fn write_quarantine(path: &Path, records: &[QuarantineRecord]) -> Result<()> {
    write_jsonl(path, records)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::invalid(format!("record failed to serialize: {e}")))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (number, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            line: number + 1,
            detail: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Split proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitScheme {
    /// 80% train, 10% dev, 10% test.
    Ratio801010,
    /// 90% train, 5% dev, 5% test.
    Ratio9055,
}

impl SplitScheme {
    pub fn name(self) -> &'static str {
        match self {
            SplitScheme::Ratio801010 => "80-10-10",
            SplitScheme::Ratio9055 => "90-5-5",
        }
    }

    pub fn from_name(name: &str) -> Option<SplitScheme> {
        match name {
            "80-10-10" => Some(SplitScheme::Ratio801010),
            "90-5-5" => Some(SplitScheme::Ratio9055),
            _ => None,
        }
    }

    fn dev_frac(self) -> f64 {
        match self {
            SplitScheme::Ratio801010 => 0.10,
            SplitScheme::Ratio9055 => 0.05,
        }
    }

    fn test_frac(self) -> f64 {
        self.dev_frac()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSlot {
    Train,
    Dev,
    Test,
}

impl SplitSlot {
    pub fn name(self) -> &'static str {
        match self {
            SplitSlot::Train => "train",
            SplitSlot::Dev => "dev",
            SplitSlot::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<SplitSlot> {
        match name {
            "train" => Some(SplitSlot::Train),
            "dev" => Some(SplitSlot::Dev),
            "test" => Some(SplitSlot::Test),
            _ => None,
        }
    }
}

/// Assignment of every example to a split, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub scheme: SplitScheme,
    pub seed: u64,
    pub assignment: Vec<(String, SplitSlot)>,
}

impl SplitManifest {
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for (_, slot) in &self.assignment {
            match slot {
                SplitSlot::Train => counts.0 += 1,
                SplitSlot::Dev => counts.1 += 1,
                SplitSlot::Test => counts.2 += 1,
            }
        }
        counts
    }
}

/// Group-aware split: every example of one (plot_id, actor) lands in the
/// same split, so no context is shared across splits. Groups are shuffled
/// by seed, then drawn to fill the test target, the dev target, and train
/// with the rest. With singleton groups the sizes hit the scheme exactly;
/// larger groups can overshoot a target by at most one group.
pub fn split(examples: &[DatasetExample], scheme: SplitScheme, seed: u64) -> Result<SplitManifest> {
    if examples.len() < 10 {
        return Err(Error::invalid(format!(
            "split needs at least 10 examples, got {}",
            examples.len()
        )));
    }

    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, example) in examples.iter().enumerate() {
        groups.entry((&example.plot_id, &example.actor)).or_default().push(i);
    }
    let mut keys: Vec<(&str, &str)> = groups.keys().copied().collect();
    let mut rng = util::seeded_rng(seed);
    util::shuffle(&mut keys, &mut rng);

    let total = examples.len();
    let test_target = (total as f64 * scheme.test_frac()).round() as usize;
    let dev_target = (total as f64 * scheme.dev_frac()).round() as usize;

    let mut slots: Vec<SplitSlot> = vec![SplitSlot::Train; total];
    let (mut in_test, mut in_dev) = (0usize, 0usize);
    for key in keys {
        let members = &groups[&key];
        let slot = if in_test < test_target {
            in_test += members.len();
            SplitSlot::Test
        } else if in_dev < dev_target {
            in_dev += members.len();
            SplitSlot::Dev
        } else {
            SplitSlot::Train
        };
        for &i in members {
            slots[i] = slot;
        }
    }

    let assignment = examples
        .iter()
        .zip(&slots)
        .map(|(example, slot)| (example.example_id.clone(), *slot))
        .collect();
    Ok(SplitManifest { scheme, seed, assignment })
}

/// Manifest as a three-column tab-separated table with a header row.
pub fn write_manifest(path: &Path, manifest: &SplitManifest) -> Result<()> {
    let mut out = String::from("example_id\tscheme\tsplit\n");
    for (example_id, slot) in &manifest.assignment {
        out.push_str(example_id);
        out.push('\t');
        out.push_str(manifest.scheme.name());
        out.push('\t');
        out.push_str(slot.name());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Count of one class, reported in canonical class order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCount {
    pub class: EmotionClass,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarityBalance {
    /// Percentages over filtered non-neutral soft labels; sum is 100 up to
    /// rounding.
    pub positive: f64,
    pub negative: f64,
    pub ambiguous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub examples: usize,
    /// Examples with at least one filtered label (the training rows).
    pub training_rows: usize,
    pub primary_hist: Vec<ClassCount>,
    /// Histogram over filtered soft labels.
    pub soft_hist: Vec<ClassCount>,
    pub polarity_balance: PolarityBalance,
    /// Fraction of examples carrying a neutral label before filtering.
    pub neutral_share_pre: f64,
    /// Fraction of examples still carrying a neutral label after filtering.
    pub neutral_share_post: f64,
    /// Mean and population std of filtered label counts over training rows.
    pub labels_per_example_mean: f64,
    pub labels_per_example_std: f64,
}

/// Distribution statistics over assembled examples. Invariant under row
/// permutation.
pub fn stats(examples: &[DatasetExample]) -> DistributionReport {
    let mut primary = [0usize; 28];
    let mut soft = [0usize; 28];
    let (mut positive, mut negative, mut ambiguous) = (0usize, 0usize, 0usize);
    let (mut neutral_pre, mut neutral_post) = (0usize, 0usize);
    let mut label_counts = Vec::new();

    for example in examples {
        primary[example.primary_emotion.index()] += 1;
        if example.soft_labels.labels.iter().any(|l| l.class.is_neutral()) {
            neutral_pre += 1;
        }
        if example.soft_labels_filtered.iter().any(|l| l.class.is_neutral()) {
            neutral_post += 1;
        }
        for label in &example.soft_labels_filtered {
            soft[label.class.index()] += 1;
            match label.class.polarity() {
                Polarity::Positive => positive += 1,
                Polarity::Negative => negative += 1,
                Polarity::Ambiguous => ambiguous += 1,
                Polarity::Neutral => {}
            }
        }
        if !example.soft_labels_filtered.is_empty() {
            label_counts.push(example.soft_labels_filtered.len() as f64);
        }
    }

    let polar_total = (positive + negative + ambiguous).max(1) as f64;
    let share = |n: usize| {
        if examples.is_empty() {
            0.0
        } else {
            n as f64 / examples.len() as f64
        }
    };
    let (mean, std) = util::mean_std(&label_counts);

    DistributionReport {
        examples: examples.len(),
        training_rows: label_counts.len(),
        primary_hist: EmotionClass::ALL
            .iter()
            .map(|&class| ClassCount { class, count: primary[class.index()] })
            .collect(),
        soft_hist: EmotionClass::ALL
            .iter()
            .map(|&class| ClassCount { class, count: soft[class.index()] })
            .collect(),
        polarity_balance: PolarityBalance {
            positive: 100.0 * positive as f64 / polar_total,
            negative: 100.0 * negative as f64 / polar_total,
            ambiguous: 100.0 * ambiguous as f64 / polar_total,
        },
        neutral_share_pre: share(neutral_pre),
        neutral_share_post: share(neutral_post),
        labels_per_example_mean: mean,
        labels_per_example_std: std,
    }
}

impl DistributionReport {
    /// Plain-text summary.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("examples        {}\n", self.examples));
        out.push_str(&format!("training rows   {}\n", self.training_rows));
        out.push_str(&format!(
            "labels/example  mean {:.2}  std {:.2}\n",
            self.labels_per_example_mean, self.labels_per_example_std
        ));
        out.push_str(&format!(
            "polarity        positive {:.1}%  negative {:.1}%  ambiguous {:.1}%\n",
            self.polarity_balance.positive,
            self.polarity_balance.negative,
            self.polarity_balance.ambiguous
        ));
        out.push_str(&format!(
            "neutral share   pre-filter {:.1}%  post-filter {:.1}%\n",
            100.0 * self.neutral_share_pre,
            100.0 * self.neutral_share_post
        ));
        out.push_str("primary histogram:\n");
        for entry in &self.primary_hist {
            out.push_str(&format!("  {:<16}{}\n", entry.class.name(), entry.count));
        }
        out.push_str("soft-label histogram (filtered):\n");
        for entry in &self.soft_hist {
            out.push_str(&format!("  {:<16}{}\n", entry.class.name(), entry.count));
        }
        out
    }
}

/// Which text column a flattened row carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlatView {
    /// The original utterance alone.
    Orig,
    /// Cleaned context, separator, original utterance.
    ContextOrig,
    /// Cleaned context, separator, rewritten utterance.
    ContextRewr,
}

impl FlatView {
    pub fn name(self) -> &'static str {
        match self {
            FlatView::Orig => "orig",
            FlatView::ContextOrig => "context-orig",
            FlatView::ContextRewr => "context-rewr",
        }
    }

    pub fn from_name(name: &str) -> Option<FlatView> {
        match name {
            "orig" => Some(FlatView::Orig),
            "context-orig" => Some(FlatView::ContextOrig),
            "context-rewr" => Some(FlatView::ContextRewr),
            _ => None,
        }
    }
}

/// Default separator between context and utterance in flattened text.
pub const DEFAULT_SEPARATOR: &str = "[SEP]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatRow {
    pub text: String,
    /// Semicolon-joined class names, descending expressiveness.
    pub labels: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlattenReport {
    pub rows: usize,
    pub skipped_label_less: usize,
    pub skipped_missing_fields: usize,
}

/// Two-column (text, labels) view for training tools. Label-less examples
/// and examples lacking the view's text fields are skipped and counted.
pub fn flatten(
    examples: &[DatasetExample],
    view: FlatView,
    separator: &str,
) -> (Vec<FlatRow>, FlattenReport) {
    let mut rows = Vec::new();
    let mut report = FlattenReport::default();
    for example in examples {
        if example.soft_labels_filtered.is_empty() {
            report.skipped_label_less += 1;
            continue;
        }
        let text = match view {
            FlatView::Orig => example.utterance_orig.clone(),
            FlatView::ContextOrig => match &example.context_clean {
                Some(context) => format!("{context} {separator} {}", example.utterance_orig),
                None => {
                    report.skipped_missing_fields += 1;
                    continue;
                }
            },
            FlatView::ContextRewr => match (&example.context_clean, &example.utterance_rewr) {
                (Some(context), Some(utterance)) => format!("{context} {separator} {utterance}"),
                _ => {
                    report.skipped_missing_fields += 1;
                    continue;
                }
            },
        };
        let labels = example
            .soft_labels_filtered
            .iter()
            .map(|l| l.class.name())
            .collect::<Vec<_>>()
            .join(";");
        rows.push(FlatRow { text, labels });
    }
    report.rows = rows.len();
    (rows, report)
}

/// Write flattened rows as a two-column tab-separated table. Text fields
/// have tabs and newlines flattened to spaces.
pub fn write_flat(path: &Path, rows: &[FlatRow]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("text\tlabels\n");
    for row in rows {
        out.push_str(&util::sanitize_field(&row.text));
        out.push('\t');
        out.push_str(&row.labels);
        out.push('\n');
    }
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PlotRecord;
    use crate::gateway::mock::MockChat;
    use crate::gateway::{Gateway, RetryPolicy};
    use crate::journal::{JournalRecord, JournalWriter};
    use crate::pipeline::{run, RunOptions, StageContext};
    use crate::prompts::PromptSet;
    use crate::taxonomy::Taxonomy;
    use proptest::prelude::*;

    fn toy_label(class: EmotionClass, expressiveness: f64) -> SoftLabel {
        SoftLabel {
            class,
            expressiveness,
            explanation: String::new(),
            raw_label: class.name().to_string(),
            off_grid: false,
        }
    }

    fn toy_example(
        plot_id: &str,
        actor: &str,
        ordinal: u32,
        primary: EmotionClass,
        scored: &[(EmotionClass, f64)],
    ) -> DatasetExample {
        let labels: Vec<SoftLabel> = scored.iter().map(|(c, s)| toy_label(*c, *s)).collect();
        let filtered = filter_expressive(&labels, DEFAULT_EXPRESSIVENESS_THRESHOLD, false);
        DatasetExample {
            example_id: example_id(plot_id, actor, ordinal),
            plot_id: plot_id.into(),
            actor: actor.into(),
            ordinal,
            neutral_slot: primary.is_neutral(),
            primary_emotion: primary,
            raw_primary: None,
            utterance_orig: format!("utterance {ordinal} of {actor}"),
            utterance_rewr: None,
            context_orig: None,
            context_clean: None,
            soft_labels: SoftLabelSet { labels, ..SoftLabelSet::default() },
            soft_labels_filtered: filtered,
            flags: Vec::new(),
        }
    }

    fn run_mock_pipeline(dir: &Path, plots: &[PlotRecord]) -> std::path::PathBuf {
        let journal = dir.join("journal.jsonl");
        let taxonomy = Taxonomy::builtin();
        let prompts = PromptSet::builtin();
        let gateway = Gateway::new(Box::new(MockChat::new()), 4, RetryPolicy::default()).unwrap();
        let ctx = StageContext { gateway: &gateway, prompts: &prompts, taxonomy: &taxonomy };
        run(&ctx, plots, &journal, &RunOptions::default()).unwrap();
        journal
    }

    #[test]
    fn example_ids_are_readable_and_stable() {
        let id = example_id("a1b2c3d4e5f60718", "Rick Deckard", 1);
        assert!(id.starts_with("a1b2c3d4e5f60718.rick-deckard-"));
        assert!(id.ends_with(".01"));
        assert_eq!(id, example_id("a1b2c3d4e5f60718", "Rick Deckard", 1));
        let odd = example_id("f00d", "  !!  ", 10);
        assert!(odd.starts_with("f00d.actor-"));
        assert_ne!(example_id("f00d", "Zoë", 1), example_id("f00d", "Zoe", 1));
    }

    #[test]
    fn full_mock_run_assembles_thirty_examples_per_plot() {
        let dir = tempfile::tempdir().unwrap();
        let journal = run_mock_pipeline(
            dir.path(),
            &[PlotRecord::new("Solo", "A lighthouse keeper rescues a stranded violinist.")],
        );
        let index = JournalIndex::load(&journal).unwrap();
        let output = assemble(&index, &AssembleOptions::default()).unwrap();
        assert_eq!(output.report.examples, 30, "3 actors x (8 emotional + 2 neutral)");
        assert_eq!(output.report.quarantined, 0);
        assert_eq!(output.report.orig_only + output.report.context_full, output.report.examples);
        assert!(output.report.context_full > 0);
        for example in &output.examples {
            assert!(!example.soft_labels.labels.is_empty());
            assert!(example.soft_labels_filtered.len() <= 5);
            if example.is_context_full() {
                assert!(example.context_orig.is_some());
                assert!(example.utterance_rewr.is_some());
            }
        }
        let sorted: Vec<_> = output
            .examples
            .iter()
            .map(|e| (e.plot_id.clone(), e.actor.clone(), e.ordinal))
            .collect();
        let mut expected = sorted.clone();
        expected.sort();
        assert_eq!(sorted, expected, "examples come out in key order");
    }

    #[test]
    fn reassembly_of_an_unchanged_journal_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let journal = run_mock_pipeline(
            dir.path(),
            &[PlotRecord::new("Twice", "An actuary discovers a second moon.")],
        );
        let index = JournalIndex::load(&journal).unwrap();
        let first = assemble(&index, &AssembleOptions::default()).unwrap();
        let second = assemble(&index, &AssembleOptions::default()).unwrap();
        let path_a = dir.path().join("a.jsonl");
        let path_b = dir.path().join("b.jsonl");
        write_dataset(&path_a, &first.examples).unwrap();
        write_dataset(&path_b, &second.examples).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());
    }

    #[test]
    fn dataset_round_trips_through_the_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let examples = vec![
            toy_example("aa", "Mara", 1, EmotionClass::Joy, &[(EmotionClass::Joy, 0.9)]),
            toy_example("aa", "Mara", 9, EmotionClass::Neutral, &[(EmotionClass::Neutral, 0.8)]),
        ];
        let path = dir.path().join("dataset.jsonl");
        write_dataset(&path, &examples).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), examples);
    }

    #[test]
    fn corrupt_dataset_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.jsonl");
        let good = serde_json::to_string(&toy_example(
            "aa",
            "Mara",
            1,
            EmotionClass::Joy,
            &[(EmotionClass::Joy, 0.9)],
        ))
        .unwrap();
        std::fs::write(&path, format!("{good}\nbroken")).unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Corrupt { line, .. } => assert_eq!(line, 2),
            other => panic!("expected corrupt error, got {other}"),
        }
    }

    #[test]
    fn partial_chains_are_quarantined_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("journal.jsonl");
        let mut writer = JournalWriter::open(&journal).unwrap();

        let drafts = vec![
            UtteranceDraft {
                ordinal: 1,
                text: "labelled and complete".into(),
                raw_emotion: Some("Anger".into()),
                primary: PrimaryLabel::Class { class: EmotionClass::Anger },
                neutral_slot: false,
            },
            UtteranceDraft {
                ordinal: 2,
                text: "context without cleaning".into(),
                raw_emotion: Some("Joy".into()),
                primary: PrimaryLabel::Class { class: EmotionClass::Joy },
                neutral_slot: false,
            },
            UtteranceDraft {
                ordinal: 3,
                text: "no labels journaled".into(),
                raw_emotion: Some("Fear".into()),
                primary: PrimaryLabel::Class { class: EmotionClass::Fear },
                neutral_slot: false,
            },
            UtteranceDraft {
                ordinal: 4,
                text: "unmapped tag".into(),
                raw_emotion: Some("melancholy".into()),
                primary: PrimaryLabel::Unknown { raw: "melancholy".into() },
                neutral_slot: false,
            },
            UtteranceDraft {
                ordinal: 5,
                text: "context settled empty".into(),
                raw_emotion: Some("Pride".into()),
                primary: PrimaryLabel::Class { class: EmotionClass::Pride },
                neutral_slot: false,
            },
        ];
        writer
            .append(&JournalRecord::ok(
                JournalKey::utterances("aa, ", "Mara"),
                StagePayload::Utterances { drafts: drafts.clone() },
            ))
            .unwrap();

        let labels = |class: EmotionClass| SoftLabelSet {
            labels: vec![toy_label(class, 0.9)],
            ..SoftLabelSet::default()
        };
        for (ordinal, class) in
            [(1, EmotionClass::Anger), (2, EmotionClass::Joy), (5, EmotionClass::Pride)]
        {
            writer
                .append(&JournalRecord::ok(
                    JournalKey::draft_stage("aa, ", "Mara", ordinal, Stage::SoftLabels),
                    StagePayload::SoftLabels { labels: labels(class) },
                ))
                .unwrap();
        }
        writer
            .append(&JournalRecord::ok(
                JournalKey::draft_stage("aa, ", "Mara", 2, Stage::Context),
                StagePayload::Context { text: "orphaned context".into() },
            ))
            .unwrap();
        writer
            .append(&JournalRecord::empty(
                JournalKey::draft_stage("aa, ", "Mara", 5, Stage::Context),
                "nothing came back".into(),
            ))
            .unwrap();
        drop(writer);

        let index = JournalIndex::load(&journal).unwrap();
        let output = assemble(&index, &AssembleOptions::default()).unwrap();
        assert_eq!(output.report.examples, 2, "ordinals 1 and 5");
        assert_eq!(output.report.quarantined, 3);
        assert_eq!(output.report.orig_only, 2);
        let reasons: Vec<(&u32, &str)> = output
            .quarantine
            .iter()
            .map(|q| (q.ordinal.as_ref().unwrap(), q.reason.as_str()))
            .collect();
        assert!(reasons.iter().any(|(o, r)| **o == 2 && r.contains("cleaning missing")));
        assert!(reasons.iter().any(|(o, r)| **o == 3 && r.contains("missing from the journal")));
        assert!(reasons.iter().any(|(o, r)| **o == 4 && r.contains("not recognized")));
        let empty_context = output.examples.iter().find(|e| e.ordinal == 5).unwrap();
        assert!(empty_context.flags.contains(&QualityFlag::ContextEmpty));
        assert!(!empty_context.is_context_full());
    }

    #[test]
    fn singleton_groups_hit_the_scheme_sizes_exactly() {
        let examples: Vec<DatasetExample> = (0..100)
            .map(|i| {
                toy_example(
                    &format!("p{i:03}"),
                    "Solo",
                    1,
                    EmotionClass::Joy,
                    &[(EmotionClass::Joy, 0.9)],
                )
            })
            .collect();
        let manifest = split(&examples, SplitScheme::Ratio801010, 7).unwrap();
        assert_eq!(manifest.counts(), (80, 10, 10));
        let manifest = split(&examples, SplitScheme::Ratio9055, 7).unwrap();
        assert_eq!(manifest.counts(), (90, 5, 5));
    }

    #[test]
    fn same_seed_gives_identical_manifests() {
        let examples: Vec<DatasetExample> = (0..40)
            .map(|i| {
                toy_example(
                    &format!("p{i:02}"),
                    "Solo",
                    1,
                    EmotionClass::Fear,
                    &[(EmotionClass::Fear, 0.8)],
                )
            })
            .collect();
        let a = split(&examples, SplitScheme::Ratio801010, 99).unwrap();
        let b = split(&examples, SplitScheme::Ratio801010, 99).unwrap();
        assert_eq!(a, b);
        let c = split(&examples, SplitScheme::Ratio801010, 100).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn tiny_datasets_are_rejected() {
        let examples: Vec<DatasetExample> = (0..9)
            .map(|i| toy_example("p", "Solo", i, EmotionClass::Joy, &[(EmotionClass::Joy, 0.9)]))
            .collect();
        assert!(split(&examples, SplitScheme::Ratio801010, 1).unwrap_err().is_user_error());
    }

    #[test]
    fn manifest_file_layout_is_three_columns() {
        let dir = tempfile::tempdir().unwrap();
        let examples: Vec<DatasetExample> = (0..10)
            .map(|i| {
                toy_example(
                    &format!("p{i}"),
                    "Solo",
                    1,
                    EmotionClass::Joy,
                    &[(EmotionClass::Joy, 0.9)],
                )
            })
            .collect();
        let manifest = split(&examples, SplitScheme::Ratio801010, 3).unwrap();
        let path = dir.path().join("splits.tsv");
        write_manifest(&path, &manifest).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("example_id\tscheme\tsplit"));
        for line in lines {
            let columns: Vec<&str> = line.split('\t').collect();
            assert_eq!(columns.len(), 3);
            assert_eq!(columns[1], "80-10-10");
            assert!(["train", "dev", "test"].contains(&columns[2]));
        }
    }

    #[test]
    fn stats_counts_histograms_and_polarity() {
        let examples = vec![
            toy_example(
                "p1",
                "A",
                1,
                EmotionClass::Joy,
                &[(EmotionClass::Joy, 0.9), (EmotionClass::Neutral, 0.2)],
            ),
            toy_example("p1", "A", 2, EmotionClass::Joy, &[(EmotionClass::Joy, 0.8)]),
            toy_example(
                "p1",
                "B",
                1,
                EmotionClass::Fear,
                &[(EmotionClass::Fear, 0.7), (EmotionClass::Surprise, 0.5)],
            ),
        ];
        let report = stats(&examples);
        assert_eq!(report.examples, 3);
        assert_eq!(report.training_rows, 3);
        let count = |class: EmotionClass, hist: &[ClassCount]| {
            hist.iter().find(|c| c.class == class).unwrap().count
        };
        assert_eq!(count(EmotionClass::Joy, &report.primary_hist), 2);
        assert_eq!(count(EmotionClass::Fear, &report.primary_hist), 1);
        assert_eq!(count(EmotionClass::Joy, &report.soft_hist), 2);
        assert_eq!(count(EmotionClass::Neutral, &report.soft_hist), 0, "0.2 is filtered out");
        let balance = report.polarity_balance;
        assert!((balance.positive + balance.negative + balance.ambiguous - 100.0).abs() < 1e-9);
        assert!((balance.positive - 50.0).abs() < 1e-9);
        assert!((report.neutral_share_pre - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(report.neutral_share_post, 0.0);
        assert!((report.labels_per_example_mean - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn stats_is_permutation_invariant() {
        let mut examples = vec![
            toy_example("p1", "A", 1, EmotionClass::Joy, &[(EmotionClass::Joy, 0.9)]),
            toy_example("p2", "B", 1, EmotionClass::Fear, &[(EmotionClass::Fear, 0.6)]),
            toy_example("p3", "C", 1, EmotionClass::Anger, &[(EmotionClass::Anger, 0.5)]),
        ];
        let before = stats(&examples);
        examples.reverse();
        assert_eq!(before, stats(&examples));
    }

    #[test]
    fn flatten_skips_label_less_and_missing_fields() {
        let mut with_context = toy_example(
            "p1",
            "A",
            1,
            EmotionClass::Joy,
            &[(EmotionClass::Joy, 0.9), (EmotionClass::Pride, 0.4)],
        );
        with_context.context_orig = Some("raw context".into());
        with_context.context_clean = Some("clean context".into());
        with_context.utterance_rewr = Some("rewritten words".into());
        let orig_only = toy_example("p1", "A", 2, EmotionClass::Fear, &[(EmotionClass::Fear, 0.7)]);
        let label_less = toy_example("p1", "A", 3, EmotionClass::Joy, &[(EmotionClass::Joy, 0.2)]);
        let examples = vec![with_context.clone(), orig_only, label_less];

        let (rows, report) = flatten(&examples, FlatView::Orig, DEFAULT_SEPARATOR);
        assert_eq!(rows.len(), 2);
        assert_eq!(report.skipped_label_less, 1);
        assert_eq!(rows[0].labels, "joy;pride");

        let (rows, report) = flatten(&examples, FlatView::ContextRewr, DEFAULT_SEPARATOR);
        assert_eq!(rows.len(), 1);
        assert_eq!(report.skipped_missing_fields, 1);
        assert_eq!(rows[0].text, "clean context [SEP] rewritten words");
    }

    #[test]
    fn flat_file_is_two_sanitized_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut example = toy_example("p1", "A", 1, EmotionClass::Joy, &[(EmotionClass::Joy, 0.9)]);
        example.utterance_orig = "line one\nline\ttwo".into();
        let (rows, _) = flatten(&[example], FlatView::Orig, DEFAULT_SEPARATOR);
        let path = dir.path().join("flat.tsv");
        write_flat(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "text\tlabels\nline one line two\tjoy\n");
    }

    proptest! {
        #[test]
        fn no_group_ever_spans_two_splits(
            sizes in proptest::collection::vec(1usize..6, 10..40),
            seed in any::<u64>(),
            scheme_pick in any::<bool>(),
        ) {
            let mut examples = Vec::new();
            for (g, size) in sizes.iter().enumerate() {
                for ordinal in 0..*size {
                    examples.push(toy_example(
                        &format!("p{:02}", g / 3),
                        &format!("actor-{g}"),
                        ordinal as u32,
                        EmotionClass::Joy,
                        &[(EmotionClass::Joy, 0.9)],
                    ));
                }
            }
            let scheme = if scheme_pick { SplitScheme::Ratio801010 } else { SplitScheme::Ratio9055 };
            let manifest = split(&examples, scheme, seed).unwrap();
            prop_assert_eq!(manifest.assignment.len(), examples.len());
            let mut group_slot: std::collections::HashMap<(&str, &str), SplitSlot> =
                std::collections::HashMap::new();
            for (example, (id, slot)) in examples.iter().zip(&manifest.assignment) {
                prop_assert_eq!(&example.example_id, id);
                let key = (example.plot_id.as_str(), example.actor.as_str());
                if let Some(previous) = group_slot.insert(key, *slot) {
                    prop_assert_eq!(previous, *slot);
                }
            }
            let (train, dev, test) = manifest.counts();
            prop_assert_eq!(train + dev + test, examples.len());
        }
    }
}
