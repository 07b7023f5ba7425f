//! Human-evaluation protocol: multiple-choice annotation tasks generated
//! from dataset examples, and scoring of returned annotations.
//!
//! Each task shows one utterance and seven options: six emotion sets of
//! equal size built around the validated labels, plus a fixed `none`
//! option. Annotators also flag neutrality and whether they consulted the
//! context. Scoring covers pairwise agreement, consensus accuracy against
//! the withheld answer key, neutrality recall, and block comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetExample;
use crate::error::{Error, Result};
use crate::taxonomy::EmotionClass;
use crate::util;

/// Which utterance variant a task displays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceKind {
    Orig,
    Rewr,
}

impl UtteranceKind {
    pub fn name(self) -> &'static str {
        match self {
            UtteranceKind::Orig => "orig",
            UtteranceKind::Rewr => "rewr",
        }
    }

    pub fn from_name(name: &str) -> Option<UtteranceKind> {
        match name {
            "orig" => Some(UtteranceKind::Orig),
            "rewr" => Some(UtteranceKind::Rewr),
            _ => None,
        }
    }
}

/// One multiple-choice item. Options 1-6 are emotion sets of equal size;
/// option 7 is always `none`. The validated option index is written to a
/// separate answer key, never shown to annotators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationTask {
    /// Sequential, 1-based, in generation order.
    pub task_id: u32,
    pub example_id: String,
    pub utterance: String,
    pub utterance_kind: UtteranceKind,
    /// Shown only on request; consultation is recorded per response.
    pub context: Option<String>,
    /// The six emotion-set options; the seventh `none` option is fixed.
    pub options: Vec<Vec<EmotionClass>>,
    /// 1..=6 for an emotion option, 7 when the answer is `none`.
    pub validated_option_index: u32,
    /// Whether the form asks the "is this utterance neutral?" question.
    pub neutral_question: bool,
    /// First ceil(ranked_fraction * N) tasks: the validated option keeps
    /// its expressiveness order instead of being shuffled internally.
    pub ranked_block: bool,
}

impl AnnotationTask {
    /// All seven option labels as shown, `none` last.
    pub fn option_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .options
            .iter()
            .map(|set| set.iter().map(|c| c.name()).collect::<Vec<_>>().join(","))
            .collect();
        labels.push("none".to_string());
        labels
    }

    pub fn pure_neutral(&self) -> bool {
        self.validated_option_index == 7
    }
}

/// One annotator's answer to one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationResult {
    pub task_id: u32,
    pub annotator_id: String,
    /// 1..=7; 7 is the `none` option.
    pub choice: u32,
    /// The annotator considered the utterance neutral.
    pub neutral_flag: bool,
    pub consulted_context: bool,
    /// Free-text emotion suggestions, when offered.
    pub suggested: Option<String>,
}

/// Output of task generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationOutcome {
    pub tasks: Vec<AnnotationTask>,
    /// (example id, reason) for examples that could not become tasks.
    pub skipped: Vec<(String, String)>,
}

const OPTION_COUNT: usize = 6;
const NONE_OPTION: u32 = 7;

/// Generate annotation tasks. Randomness is drawn per example from the
/// seed and the example id, so edits elsewhere in the corpus do not change
/// an example's task. Examples without any filtered label are skipped and
/// reported. `ranked_fraction` in [0, 1] sizes the ranked block.
pub fn generate_tasks(
    examples: &[DatasetExample],
    seed: u64,
    ranked_fraction: f64,
) -> Result<GenerationOutcome> {
    if !(0.0..=1.0).contains(&ranked_fraction) {
        return Err(Error::invalid("ranked fraction must be within [0, 1]"));
    }

    let mut skipped = Vec::new();
    let mut viable: Vec<&DatasetExample> = Vec::new();
    for example in examples {
        if example.soft_labels_filtered.is_empty() {
            skipped.push((example.example_id.clone(), "no labels cleared the filter".to_string()));
        } else {
            viable.push(example);
        }
    }
    let total = viable.len();
    let ranked_count = ((ranked_fraction * total as f64) - 1e-9).ceil().max(0.0) as usize;

    let mut tasks = Vec::with_capacity(total);
    for (position, example) in viable.into_iter().enumerate() {
        let ranked_block = position < ranked_count;
        let mut rng = example_rng(seed, &example.example_id);
        let task = build_task(example, position as u32 + 1, ranked_block, &mut rng);
        tasks.push(task);
    }
    Ok(GenerationOutcome { tasks, skipped })
}

/// Deterministic per-example stream: the task for one example survives
/// insertions and deletions elsewhere.
fn example_rng(seed: u64, example_id: &str) -> impl rand::Rng {
    let digest = Sha256::digest(example_id.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    util::seeded_rng(seed ^ u64::from_le_bytes(bytes))
}

fn build_task(
    example: &DatasetExample,
    task_id: u32,
    ranked_block: bool,
    rng: &mut impl rand::Rng,
) -> AnnotationTask {
    // highest-expressiveness non-neutral labels, at most three; the
    // filtered list is already sorted by descending expressiveness
    let validated: Vec<EmotionClass> = example
        .soft_labels_filtered
        .iter()
        .map(|label| label.class)
        .filter(|class| !class.is_neutral())
        .take(3)
        .collect();

    let (options, validated_option_index) = if validated.is_empty() {
        (neutral_options(rng), NONE_OPTION)
    } else {
        emotion_options(&validated, ranked_block, rng)
    };

    let (utterance, utterance_kind) = match &example.utterance_rewr {
        Some(rewr) => (rewr.clone(), UtteranceKind::Rewr),
        None => (example.utterance_orig.clone(), UtteranceKind::Orig),
    };
    let context = example.context_clean.clone().or_else(|| example.context_orig.clone());

    AnnotationTask {
        task_id,
        example_id: example.example_id.clone(),
        utterance,
        utterance_kind,
        context,
        options,
        validated_option_index,
        neutral_question: true,
        ranked_block,
    }
}

/// A purely neutral example shows six random single-emotion options; the
/// right answer is the `none` option.
fn neutral_options(rng: &mut impl rand::Rng) -> Vec<Vec<EmotionClass>> {
    let mut pool: Vec<EmotionClass> =
        EmotionClass::ALL.iter().copied().filter(|c| !c.is_neutral()).collect();
    util::shuffle(&mut pool, rng);
    pool.truncate(OPTION_COUNT);
    pool.into_iter().map(|class| vec![class]).collect()
}

/// Build the six equal-size options around the validated labels: a
/// six-emotion pool of the validated classes, up to three of their group
/// mates, and uniform top-up; distractors are the other same-size subsets.
fn emotion_options(
    validated: &[EmotionClass],
    ranked_block: bool,
    rng: &mut impl rand::Rng,
) -> (Vec<Vec<EmotionClass>>, u32) {
    let mut pool: Vec<EmotionClass> = validated.to_vec();
    let in_pool = |pool: &[EmotionClass], class: EmotionClass| pool.contains(&class);

    let mut group_mates: Vec<EmotionClass> = Vec::new();
    for class in EmotionClass::ALL {
        if class.is_neutral() || in_pool(&pool, class) {
            continue;
        }
        let shares_group = validated.iter().any(|v| v.marker_group() == class.marker_group());
        if shares_group {
            group_mates.push(class);
        }
    }
    util::shuffle(&mut group_mates, rng);
    for class in group_mates.into_iter().take(3) {
        if pool.len() < OPTION_COUNT {
            pool.push(class);
        }
    }

    let mut filler: Vec<EmotionClass> = EmotionClass::ALL
        .iter()
        .copied()
        .filter(|c| !c.is_neutral() && !in_pool(&pool, *c))
        .collect();
    util::shuffle(&mut filler, rng);
    for class in filler {
        if pool.len() == OPTION_COUNT {
            break;
        }
        pool.push(class);
    }
    debug_assert_eq!(pool.len(), OPTION_COUNT);

    // every size-k subset of the pool except the validated set is a
    // distractor candidate; five are drawn at random
    let size = validated.len();
    let validated_set: BTreeSet<EmotionClass> = validated.iter().copied().collect();
    let mut distractors: Vec<Vec<EmotionClass>> = subsets(&pool, size)
        .into_iter()
        .filter(|subset| {
            subset.iter().copied().collect::<BTreeSet<EmotionClass>>() != validated_set
        })
        .collect();
    util::shuffle(&mut distractors, rng);
    distractors.truncate(OPTION_COUNT - 1);

    let mut options: Vec<Vec<EmotionClass>> = Vec::with_capacity(OPTION_COUNT);
    options.push(validated.to_vec());
    options.extend(distractors);
    for (index, option) in options.iter_mut().enumerate() {
        // the ranked block keeps the validated option in expressiveness
        // order; everything else shuffles internally
        if ranked_block && index == 0 {
            continue;
        }
        util::shuffle(option, rng);
    }

    let mut order: Vec<usize> = (0..OPTION_COUNT).collect();
    util::shuffle(&mut order, rng);
    let validated_position = order.iter().position(|&o| o == 0).expect("validated is present");
    let shuffled: Vec<Vec<EmotionClass>> = order.iter().map(|&o| options[o].clone()).collect();
    (shuffled, validated_position as u32 + 1)
}

/// All k-element subsets in pool order.
fn subsets(pool: &[EmotionClass], k: usize) -> Vec<Vec<EmotionClass>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn recurse(
        pool: &[EmotionClass],
        k: usize,
        start: usize,
        current: &mut Vec<EmotionClass>,
        out: &mut Vec<Vec<EmotionClass>>,
    ) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..pool.len() {
            current.push(pool[i]);
            recurse(pool, k, i + 1, current, out);
            current.pop();
        }
    }
    recurse(pool, k, 0, &mut current, &mut out);
    out
}

/// Tasks table, one row per task; the gold column lives in the answer key.
pub fn write_tasks(tasks: &[AnnotationTask], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut header = vec![
        "task_id".to_string(),
        "example_id".to_string(),
        "utterance_kind".to_string(),
        "ranked_block".to_string(),
        "neutral_question".to_string(),
        "utterance".to_string(),
        "context".to_string(),
    ];
    header.extend((1..=7).map(|i| format!("option{i}")));
    writeln!(file, "{}", header.join("\t")).map_err(|e| Error::io(path, e))?;
    for task in tasks {
        let mut fields = vec![
            task.task_id.to_string(),
            task.example_id.clone(),
            task.utterance_kind.name().to_string(),
            task.ranked_block.to_string(),
            task.neutral_question.to_string(),
            util::sanitize_field(&task.utterance),
            util::sanitize_field(task.context.as_deref().unwrap_or("")),
        ];
        fields.extend(task.option_labels());
        writeln!(file, "{}", fields.join("\t")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// The withheld gold answers.
pub fn write_answer_key(tasks: &[AnnotationTask], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "task_id\tvalidated_option_index\tpure_neutral")
        .map_err(|e| Error::io(path, e))?;
    for task in tasks {
        writeln!(
            file,
            "{}\t{}\t{}",
            task.task_id,
            task.validated_option_index,
            task.pure_neutral()
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn write_results(results: &[AnnotationResult], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "task_id\tannotator_id\tchoice\tneutral_flag\tconsulted_context\tsuggested")
        .map_err(|e| Error::io(path, e))?;
    for result in results {
        writeln!(
            file,
            "{}\t{}\t{}\t{}\t{}\t{}",
            result.task_id,
            util::sanitize_field(&result.annotator_id),
            result.choice,
            result.neutral_flag,
            result.consulted_context,
            util::sanitize_field(result.suggested.as_deref().unwrap_or(""))
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reload exported tasks, joining the task table with its answer key.
pub fn read_tasks(tasks_path: &Path, answers_path: &Path) -> Result<Vec<AnnotationTask>> {
    let corrupt = |path: &Path, line: usize, detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        line: line + 1,
        detail,
    };

    // answer key first: task id -> (validated index, pure-neutral flag)
    let file = std::fs::File::open(answers_path).map_err(|e| Error::io(answers_path, e))?;
    let mut answers: BTreeMap<u32, u32> = BTreeMap::new();
    let mut lines = BufReader::new(file).lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header == "task_id\tvalidated_option_index\tpure_neutral" => {}
        Some((n, Ok(_))) => {
            return Err(corrupt(answers_path, n, "unexpected answer-key header".to_string()))
        }
        Some((n, Err(e))) => return Err(corrupt(answers_path, n, e.to_string())),
        None => return Err(corrupt(answers_path, 0, "empty answer key".to_string())),
    }
    for (number, line) in lines {
        let line = line.map_err(|e| corrupt(answers_path, number, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(corrupt(
                answers_path,
                number,
                format!("{} fields, expected 3", fields.len()),
            ));
        }
        let task_id: u32 = fields[0]
            .parse()
            .map_err(|_| corrupt(answers_path, number, format!("bad task id {:?}", fields[0])))?;
        let index: u32 = fields[1]
            .parse()
            .map_err(|_| corrupt(answers_path, number, format!("bad index {:?}", fields[1])))?;
        if !(1..=7).contains(&index) {
            return Err(corrupt(answers_path, number, format!("index {index} outside 1..=7")));
        }
        answers.insert(task_id, index);
    }

    let file = std::fs::File::open(tasks_path).map_err(|e| Error::io(tasks_path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let expected_header = "task_id\texample_id\tutterance_kind\tranked_block\tneutral_question\
                           \tutterance\tcontext\toption1\toption2\toption3\toption4\toption5\
                           \toption6\toption7";
    match lines.next() {
        Some((_, Ok(header))) if header == expected_header => {}
        Some((n, Ok(_))) => {
            return Err(corrupt(tasks_path, n, "unexpected tasks header".to_string()))
        }
        Some((n, Err(e))) => return Err(corrupt(tasks_path, n, e.to_string())),
        None => return Err(corrupt(tasks_path, 0, "empty tasks file".to_string())),
    }
    let parse_bool = |line: usize, field: &str| match field {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(corrupt(tasks_path, line, format!("expected true/false, found {other:?}"))),
    };
    let mut tasks = Vec::new();
    for (number, line) in lines {
        let line = line.map_err(|e| corrupt(tasks_path, number, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 14 {
            return Err(corrupt(
                tasks_path,
                number,
                format!("{} fields, expected 14", fields.len()),
            ));
        }
        let task_id: u32 = fields[0]
            .parse()
            .map_err(|_| corrupt(tasks_path, number, format!("bad task id {:?}", fields[0])))?;
        let utterance_kind = UtteranceKind::from_name(fields[2]).ok_or_else(|| {
            corrupt(tasks_path, number, format!("unknown utterance kind {:?}", fields[2]))
        })?;
        if fields[13] != "none" {
            return Err(corrupt(tasks_path, number, "option7 must be none".to_string()));
        }
        let mut options = Vec::with_capacity(OPTION_COUNT);
        for field in &fields[7..13] {
            let mut set = Vec::new();
            for name in field.split(',') {
                let class = EmotionClass::from_name(name).ok_or_else(|| {
                    corrupt(tasks_path, number, format!("unknown emotion {name:?}"))
                })?;
                set.push(class);
            }
            options.push(set);
        }
        let validated_option_index = *answers.get(&task_id).ok_or_else(|| {
            corrupt(tasks_path, number, format!("task {task_id} missing from the answer key"))
        })?;
        tasks.push(AnnotationTask {
            task_id,
            example_id: fields[1].to_string(),
            utterance: fields[5].to_string(),
            utterance_kind,
            context: if fields[6].is_empty() { None } else { Some(fields[6].to_string()) },
            options,
            validated_option_index,
            neutral_question: parse_bool(number, fields[4])?,
            ranked_block: parse_bool(number, fields[3])?,
        });
    }
    Ok(tasks)
}

/// Read annotator responses; every row is validated strictly.
pub fn read_results(path: &Path) -> Result<Vec<AnnotationResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |line: usize, detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        line: line + 1,
        detail,
    };
    let mut lines = BufReader::new(file).lines().enumerate();
    match lines.next() {
        Some((_, Ok(header)))
            if header
                == "task_id\tannotator_id\tchoice\tneutral_flag\tconsulted_context\tsuggested" => {}
        Some((n, Ok(_))) => return Err(corrupt(n, "unexpected results header".to_string())),
        Some((n, Err(e))) => return Err(corrupt(n, e.to_string())),
        None => return Err(corrupt(0, "empty results file".to_string())),
    }

    let parse_bool = |line: usize, field: &str| match field {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(corrupt(line, format!("expected true/false, found {other:?}"))),
    };
    let mut results = Vec::new();
    for (number, line) in lines {
        let line = line.map_err(|e| corrupt(number, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(corrupt(number, format!("{} fields, expected 6", fields.len())));
        }
        let task_id: u32 = fields[0]
            .parse()
            .map_err(|_| corrupt(number, format!("bad task id {:?}", fields[0])))?;
        let choice: u32 = fields[2]
            .parse()
            .map_err(|_| corrupt(number, format!("bad choice {:?}", fields[2])))?;
        if !(1..=7).contains(&choice) {
            return Err(corrupt(number, format!("choice {choice} outside 1..=7")));
        }
        results.push(AnnotationResult {
            task_id,
            annotator_id: fields[1].to_string(),
            choice,
            neutral_flag: parse_bool(number, fields[3])?,
            consulted_context: parse_bool(number, fields[4])?,
            suggested: if fields[5].is_empty() { None } else { Some(fields[5].to_string()) },
        });
    }
    Ok(results)
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    /// Also compute the multi-rater (Fleiss) agreement statistic.
    pub fleiss: bool,
}

/// Neutrality behavior of one annotator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorNeutrality {
    pub annotator_id: String,
    pub answered: usize,
    pub neutral_flags: usize,
    /// Gold pure-neutral tasks this annotator answered.
    pub gold_neutral_seen: usize,
    pub gold_neutral_flagged: usize,
    /// gold_neutral_flagged / gold_neutral_seen; 0 when unseen.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumanEvalReport {
    /// Mean pairwise agreement across annotator pairs with shared tasks.
    pub kappa_pairwise_mean: f64,
    pub kappa_pairs: Vec<(String, String, f64)>,
    /// Annotator pairs with no task in common, excluded from the mean.
    pub excluded_pairs: Vec<(String, String)>,
    pub kappa_fleiss: Option<f64>,
    /// Gold-match rate on tasks where every annotator chose the same.
    pub accuracy_all_agree: f64,
    pub all_agree_tasks: usize,
    /// Gold-match rate on tasks with a unique most-voted choice (>= 2).
    pub accuracy_majority: f64,
    pub majority_tasks: usize,
    pub neutrality: Vec<AnnotatorNeutrality>,
    /// Pooled neutrality recall over all annotators.
    pub neutrality_recall_overall: f64,
    /// Per-response gold-match accuracy inside the ranked block.
    pub ranked_accuracy: f64,
    /// The same outside the ranked block.
    pub shuffled_accuracy: f64,
    /// Share of responses that consulted the context, split by variant.
    pub consulted_context_orig: f64,
    pub consulted_context_rewr: f64,
    pub responses: usize,
    pub tasks_answered: usize,
}

fn share(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Score annotation results against the generated tasks.
pub fn score(
    tasks: &[AnnotationTask],
    results: &[AnnotationResult],
    options: &ScoreOptions,
) -> Result<HumanEvalReport> {
    let task_by_id: BTreeMap<u32, &AnnotationTask> = tasks.iter().map(|t| (t.task_id, t)).collect();
    let mut by_task: BTreeMap<u32, Vec<&AnnotationResult>> = BTreeMap::new();
    let mut seen: BTreeSet<(u32, &str)> = BTreeSet::new();
    for result in results {
        if !task_by_id.contains_key(&result.task_id) {
            return Err(Error::invalid(format!(
                "result references unknown task {}",
                result.task_id
            )));
        }
        if !(1..=7).contains(&result.choice) {
            return Err(Error::invalid(format!(
                "task {} choice {} outside 1..=7",
                result.task_id, result.choice
            )));
        }
        if !seen.insert((result.task_id, result.annotator_id.as_str())) {
            return Err(Error::invalid(format!(
                "annotator {} answered task {} twice",
                result.annotator_id, result.task_id
            )));
        }
        by_task.entry(result.task_id).or_default().push(result);
    }

    // pairwise agreement over the 7 option categories
    let annotators: Vec<&str> = {
        let set: BTreeSet<&str> = results.iter().map(|r| r.annotator_id.as_str()).collect();
        set.into_iter().collect()
    };
    let choices: BTreeMap<(&str, u32), u32> =
        results.iter().map(|r| ((r.annotator_id.as_str(), r.task_id), r.choice)).collect();
    let mut kappa_pairs = Vec::new();
    let mut excluded_pairs = Vec::new();
    for (i, &a) in annotators.iter().enumerate() {
        for &b in &annotators[i + 1..] {
            let shared: Vec<(u32, u32)> = by_task
                .iter()
                .filter_map(|(&task_id, _)| {
                    match (choices.get(&(a, task_id)), choices.get(&(b, task_id))) {
                        (Some(&ca), Some(&cb)) => Some((ca, cb)),
                        _ => None,
                    }
                })
                .collect();
            if shared.is_empty() {
                excluded_pairs.push((a.to_string(), b.to_string()));
                continue;
            }
            kappa_pairs.push((a.to_string(), b.to_string(), cohen_kappa(&shared)));
        }
    }
    if annotators.len() >= 2 && kappa_pairs.is_empty() {
        return Err(Error::invalid("no two annotators share a task"));
    }
    if annotators.len() < 2 {
        return Err(Error::invalid("agreement metrics need at least two annotators"));
    }
    let kappa_pairwise_mean =
        kappa_pairs.iter().map(|(_, _, k)| k).sum::<f64>() / kappa_pairs.len() as f64;
    let kappa_fleiss = options.fleiss.then(|| fleiss_kappa(&by_task));

    // consensus accuracy against the withheld gold
    let mut all_agree_tasks = 0usize;
    let mut all_agree_correct = 0usize;
    let mut majority_tasks = 0usize;
    let mut majority_correct = 0usize;
    for (&task_id, rows) in &by_task {
        if rows.len() < 2 {
            continue;
        }
        let gold = task_by_id[&task_id].validated_option_index;
        let first = rows[0].choice;
        if rows.iter().all(|r| r.choice == first) {
            all_agree_tasks += 1;
            if first == gold {
                all_agree_correct += 1;
            }
        }
        let mut votes = [0usize; 7];
        for row in rows {
            votes[(row.choice - 1) as usize] += 1;
        }
        let best = *votes.iter().max().expect("seven buckets");
        let unique = votes.iter().filter(|&&v| v == best).count() == 1;
        if best >= 2 && unique {
            majority_tasks += 1;
            let winner = votes.iter().position(|&v| v == best).expect("max exists") as u32 + 1;
            if winner == gold {
                majority_correct += 1;
            }
        }
    }

    // neutrality against gold pure-neutral tasks
    let mut neutrality = Vec::new();
    let mut pooled_seen = 0usize;
    let mut pooled_flagged = 0usize;
    for &annotator in &annotators {
        let mine: Vec<&&AnnotationResult> =
            by_task.values().flatten().filter(|r| r.annotator_id == annotator).collect();
        let answered = mine.len();
        let neutral_flags = mine.iter().filter(|r| r.neutral_flag).count();
        let gold_neutral: Vec<&&&AnnotationResult> =
            mine.iter().filter(|r| task_by_id[&r.task_id].pure_neutral()).collect();
        let gold_neutral_seen = gold_neutral.len();
        let gold_neutral_flagged = gold_neutral.iter().filter(|r| r.neutral_flag).count();
        pooled_seen += gold_neutral_seen;
        pooled_flagged += gold_neutral_flagged;
        neutrality.push(AnnotatorNeutrality {
            annotator_id: annotator.to_string(),
            answered,
            neutral_flags,
            gold_neutral_seen,
            gold_neutral_flagged,
            recall: share(gold_neutral_flagged, gold_neutral_seen),
        });
    }

    // per-response splits
    let mut ranked = (0usize, 0usize);
    let mut shuffled = (0usize, 0usize);
    let mut consulted_orig = (0usize, 0usize);
    let mut consulted_rewr = (0usize, 0usize);
    for result in results {
        let task = task_by_id[&result.task_id];
        let correct = result.choice == task.validated_option_index;
        let block = if task.ranked_block { &mut ranked } else { &mut shuffled };
        block.0 += usize::from(correct);
        block.1 += 1;
        let split = match task.utterance_kind {
            UtteranceKind::Orig => &mut consulted_orig,
            UtteranceKind::Rewr => &mut consulted_rewr,
        };
        split.0 += usize::from(result.consulted_context);
        split.1 += 1;
    }

    Ok(HumanEvalReport {
        kappa_pairwise_mean,
        kappa_pairs,
        excluded_pairs,
        kappa_fleiss,
        accuracy_all_agree: share(all_agree_correct, all_agree_tasks),
        all_agree_tasks,
        accuracy_majority: share(majority_correct, majority_tasks),
        majority_tasks,
        neutrality,
        neutrality_recall_overall: share(pooled_flagged, pooled_seen),
        ranked_accuracy: share(ranked.0, ranked.1),
        shuffled_accuracy: share(shuffled.0, shuffled.1),
        consulted_context_orig: share(consulted_orig.0, consulted_orig.1),
        consulted_context_rewr: share(consulted_rewr.0, consulted_rewr.1),
        responses: results.len(),
        tasks_answered: by_task.len(),
    })
}

/// Cohen's kappa over paired choices. Full observed agreement is 1 even
/// under degenerate marginals; degenerate chance agreement without full
/// observed agreement is 0.
fn cohen_kappa(pairs: &[(u32, u32)]) -> f64 {
    let n = pairs.len() as f64;
    let observed = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    if observed == 1.0 {
        return 1.0;
    }
    let mut marginal_a = [0.0f64; 7];
    let mut marginal_b = [0.0f64; 7];
    for &(a, b) in pairs {
        marginal_a[(a - 1) as usize] += 1.0 / n;
        marginal_b[(b - 1) as usize] += 1.0 / n;
    }
    let expected: f64 = marginal_a.iter().zip(&marginal_b).map(|(a, b)| a * b).sum();
    if expected == 1.0 {
        return 0.0;
    }
    (observed - expected) / (1.0 - expected)
}

/// Multi-rater agreement over tasks with at least two responses.
fn fleiss_kappa(by_task: &BTreeMap<u32, Vec<&AnnotationResult>>) -> f64 {
    let mut item_agreements = Vec::new();
    let mut category_totals = [0.0f64; 7];
    let mut total_ratings = 0.0f64;
    for rows in by_task.values() {
        if rows.len() < 2 {
            continue;
        }
        let n = rows.len() as f64;
        let mut counts = [0.0f64; 7];
        for row in rows {
            counts[(row.choice - 1) as usize] += 1.0;
        }
        let agreement: f64 = counts.iter().map(|&c| c * (c - 1.0)).sum::<f64>() / (n * (n - 1.0));
        item_agreements.push(agreement);
        for (total, count) in category_totals.iter_mut().zip(&counts) {
            *total += count;
        }
        total_ratings += n;
    }
    if item_agreements.is_empty() {
        return 0.0;
    }
    let observed = item_agreements.iter().sum::<f64>() / item_agreements.len() as f64;
    if observed == 1.0 {
        return 1.0;
    }
    let expected: f64 = category_totals.iter().map(|&t| (t / total_ratings).powi(2)).sum();
    if expected == 1.0 {
        return 0.0;
    }
    (observed - expected) / (1.0 - expected)
}

impl HumanEvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("responses {} over {} tasks\n", self.responses, self.tasks_answered));
        out.push_str(&format!("kappa (pairwise mean)   {:.4}\n", self.kappa_pairwise_mean));
        if let Some(fleiss) = self.kappa_fleiss {
            out.push_str(&format!("kappa (multi-rater)     {fleiss:.4}\n"));
        }
        for (a, b, k) in &self.kappa_pairs {
            out.push_str(&format!("  {a} vs {b}: {k:.4}\n"));
        }
        for (a, b) in &self.excluded_pairs {
            out.push_str(&format!("  {a} vs {b}: no shared tasks, excluded\n"));
        }
        out.push_str(&format!(
            "accuracy all-agree      {:.4} over {} tasks\n",
            self.accuracy_all_agree, self.all_agree_tasks
        ));
        out.push_str(&format!(
            "accuracy majority       {:.4} over {} tasks\n",
            self.accuracy_majority, self.majority_tasks
        ));
        out.push_str(&format!(
            "neutrality recall       {:.4} pooled\n",
            self.neutrality_recall_overall
        ));
        for row in &self.neutrality {
            out.push_str(&format!(
                "  {}: {} answered, {} neutral flags, recall {:.4}\n",
                row.annotator_id, row.answered, row.neutral_flags, row.recall
            ));
        }
        out.push_str(&format!(
            "accuracy ranked/shuffled {:.4} / {:.4}\n",
            self.ranked_accuracy, self.shuffled_accuracy
        ));
        out.push_str(&format!(
            "context consulted orig/rewr {:.4} / {:.4}\n",
            self.consulted_context_orig, self.consulted_context_rewr
        ));
        out
    }

    pub fn render_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kappa_pairwise_mean={}\n", self.kappa_pairwise_mean));
        if let Some(fleiss) = self.kappa_fleiss {
            out.push_str(&format!("kappa_fleiss={fleiss}\n"));
        }
        for (a, b, k) in &self.kappa_pairs {
            out.push_str(&format!("kappa_pair annotator_a={a} annotator_b={b} kappa={k}\n"));
        }
        out.push_str(&format!(
            "accuracy_all_agree={} tasks={}\n",
            self.accuracy_all_agree, self.all_agree_tasks
        ));
        out.push_str(&format!(
            "accuracy_majority={} tasks={}\n",
            self.accuracy_majority, self.majority_tasks
        ));
        out.push_str(&format!("neutrality_recall={}\n", self.neutrality_recall_overall));
        for row in &self.neutrality {
            out.push_str(&format!(
                "neutrality annotator={} answered={} flags={} recall={}\n",
                row.annotator_id, row.answered, row.neutral_flags, row.recall
            ));
        }
        out.push_str(&format!(
            "ranked_accuracy={} shuffled_accuracy={}\n",
            self.ranked_accuracy, self.shuffled_accuracy
        ));
        out.push_str(&format!(
            "consulted_orig={} consulted_rewr={}\n",
            self.consulted_context_orig, self.consulted_context_rewr
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{SoftLabel, SoftLabelSet};
    use crate::taxonomy::EmotionClass::*;

    fn label(class: EmotionClass, expressiveness: f64) -> SoftLabel {
        SoftLabel {
            class,
            expressiveness,
            explanation: String::new(),
            raw_label: class.name().to_string(),
            off_grid: false,
        }
    }

    fn example(id: u32, labels: &[(EmotionClass, f64)]) -> DatasetExample {
        DatasetExample {
            example_id: crate::dataset::example_id("plot", "Actor", id),
            plot_id: "plot".to_string(),
            actor: "Actor".to_string(),
            ordinal: id,
            neutral_slot: labels.iter().all(|(c, _)| c.is_neutral()),
            primary_emotion: labels.first().map(|(c, _)| *c).unwrap_or(Neutral),
            raw_primary: None,
            utterance_orig: format!("utterance {id}"),
            utterance_rewr: Some(format!("rewritten {id}")),
            context_orig: Some(format!("context {id}")),
            context_clean: Some(format!("clean context {id}")),
            soft_labels: SoftLabelSet::default(),
            soft_labels_filtered: labels.iter().map(|&(c, e)| label(c, e)).collect(),
            flags: Vec::new(),
        }
    }

    fn check_invariants(task: &AnnotationTask) {
        let labels = task.option_labels();
        assert_eq!(labels.len(), 7, "exactly seven options");
        assert_eq!(labels[6], "none", "the last option is none");
        assert_eq!(task.options.len(), 6);
        let size = task.options[0].len();
        assert!((1..=3).contains(&size));
        let mut sets = Vec::new();
        for option in &task.options {
            assert_eq!(option.len(), size, "equal option sizes");
            assert!(option.iter().all(|c| !c.is_neutral()), "neutral stays out of options");
            let set: BTreeSet<EmotionClass> = option.iter().copied().collect();
            assert_eq!(set.len(), size, "no repeats inside an option");
            assert!(!sets.contains(&set), "options are pairwise distinct");
            sets.push(set);
        }
        assert!((1..=7).contains(&task.validated_option_index));
        if task.validated_option_index <= 6 {
            // the validated set appears exactly once: distinctness plus
            // membership at the validated index
            assert!(!task.options[(task.validated_option_index - 1) as usize].is_empty());
        }
    }

    #[test]
    fn generated_tasks_satisfy_all_invariants() {
        let mut examples = Vec::new();
        for i in 0..60u32 {
            let labels: Vec<(EmotionClass, f64)> = match i % 5 {
                0 => vec![(Amusement, 1.0)],
                1 => vec![(Anger, 1.0), (Disgust, 0.8)],
                2 => vec![(Joy, 0.9), (Pride, 0.7), (Excitement, 0.5)],
                3 => vec![(Neutral, 1.0)],
                _ => vec![(Fear, 1.0), (Nervousness, 0.9), (Sadness, 0.6), (Grief, 0.4)],
            };
            examples.push(example(i, &labels));
        }
        let outcome = generate_tasks(&examples, 99, 0.2).unwrap();
        assert_eq!(outcome.tasks.len(), 60);
        assert!(outcome.skipped.is_empty());
        for task in &outcome.tasks {
            check_invariants(task);
        }
        // task ids are sequential in generation order
        let ids: Vec<u32> = outcome.tasks.iter().map(|t| t.task_id).collect();
        assert_eq!(ids, (1..=60).collect::<Vec<u32>>());
    }

    #[test]
    fn generation_is_deterministic() {
        let examples: Vec<DatasetExample> =
            (0..10).map(|i| example(i, &[(Joy, 0.9), (Pride, 0.5)])).collect();
        let a = generate_tasks(&examples, 7, 0.2).unwrap();
        let b = generate_tasks(&examples, 7, 0.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_label_example_gets_seven_size_one_options() {
        let examples = vec![example(0, &[(Amusement, 1.0)])];
        let outcome = generate_tasks(&examples, 3, 0.0).unwrap();
        let task = &outcome.tasks[0];
        check_invariants(task);
        assert_eq!(task.options[0].len(), 1);
        let amusement_count =
            task.options.iter().filter(|option| option.contains(&Amusement)).count();
        assert_eq!(amusement_count, 1, "validated emotion appears exactly once");
        let validated = &task.options[(task.validated_option_index - 1) as usize];
        assert_eq!(validated, &vec![Amusement]);
    }

    #[test]
    fn pure_neutral_examples_answer_none() {
        let examples = vec![example(0, &[(Neutral, 1.0)])];
        let outcome = generate_tasks(&examples, 3, 0.0).unwrap();
        let task = &outcome.tasks[0];
        check_invariants(task);
        assert_eq!(task.validated_option_index, 7);
        assert!(task.pure_neutral());
        assert!(task.options.iter().all(|o| o.len() == 1), "six sampled singles");
    }

    #[test]
    fn top_three_by_expressiveness_form_the_validated_option() {
        let examples =
            vec![example(0, &[(Anger, 1.0), (Caring, 0.8), (Desire, 0.5), (Confusion, 0.4)])];
        // ranked block: the validated option keeps expressiveness order
        let outcome = generate_tasks(&examples, 5, 1.0).unwrap();
        let task = &outcome.tasks[0];
        assert!(task.ranked_block);
        let validated = &task.options[(task.validated_option_index - 1) as usize];
        assert_eq!(validated, &vec![Anger, Caring, Desire]);
    }

    #[test]
    fn ranked_block_is_the_first_fifth_rounded_up() {
        let examples: Vec<DatasetExample> = (0..7).map(|i| example(i, &[(Joy, 0.9)])).collect();
        let outcome = generate_tasks(&examples, 11, 0.2).unwrap();
        let ranked: Vec<bool> = outcome.tasks.iter().map(|t| t.ranked_block).collect();
        // ceil(0.2 * 7) = 2
        assert_eq!(ranked, vec![true, true, false, false, false, false, false]);
    }

    #[test]
    fn label_less_examples_are_skipped_and_reported() {
        let mut bare = example(0, &[(Joy, 0.9)]);
        bare.soft_labels_filtered.clear();
        let examples = vec![bare, example(1, &[(Joy, 0.9)])];
        let outcome = generate_tasks(&examples, 3, 0.2).unwrap();
        assert_eq!(outcome.tasks.len(), 1);
        assert_eq!(outcome.skipped.len(), 1);
        assert_eq!(outcome.skipped[0].0, examples[0].example_id);
    }

    #[test]
    fn ranked_fraction_is_validated() {
        let examples = vec![example(0, &[(Joy, 0.9)])];
        assert!(generate_tasks(&examples, 3, -0.1).unwrap_err().is_user_error());
        assert!(generate_tasks(&examples, 3, 1.1).unwrap_err().is_user_error());
    }

    #[test]
    fn rewritten_utterance_is_preferred_with_fallback_to_original() {
        let mut orig_only = example(0, &[(Joy, 0.9)]);
        orig_only.utterance_rewr = None;
        orig_only.context_clean = None;
        let examples = vec![orig_only, example(1, &[(Joy, 0.9)])];
        let outcome = generate_tasks(&examples, 3, 0.0).unwrap();
        assert_eq!(outcome.tasks[0].utterance_kind, UtteranceKind::Orig);
        assert_eq!(outcome.tasks[0].utterance, "utterance 0");
        assert_eq!(outcome.tasks[0].context.as_deref(), Some("context 0"));
        assert_eq!(outcome.tasks[1].utterance_kind, UtteranceKind::Rewr);
        assert_eq!(outcome.tasks[1].utterance, "rewritten 1");
        assert_eq!(outcome.tasks[1].context.as_deref(), Some("clean context 1"));
    }

    fn result(task_id: u32, annotator: &str, choice: u32) -> AnnotationResult {
        AnnotationResult {
            task_id,
            annotator_id: annotator.to_string(),
            choice,
            neutral_flag: false,
            consulted_context: false,
            suggested: None,
        }
    }

    fn simple_tasks(count: u32) -> Vec<AnnotationTask> {
        let examples: Vec<DatasetExample> = (0..count).map(|i| example(i, &[(Joy, 0.9)])).collect();
        generate_tasks(&examples, 21, 0.2).unwrap().tasks
    }

    #[test]
    fn identical_raters_have_kappa_exactly_one() {
        let tasks = simple_tasks(10);
        let mut results = Vec::new();
        for task in &tasks {
            results.push(result(task.task_id, "a", 3));
            results.push(result(task.task_id, "b", 3));
        }
        let report = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        assert_eq!(report.kappa_pairwise_mean, 1.0);
    }

    #[test]
    fn chance_level_raters_have_kappa_exactly_zero() {
        let tasks = simple_tasks(4);
        let choices_a = [1, 1, 2, 2];
        let choices_b = [1, 2, 1, 2];
        let mut results = Vec::new();
        for (task, (&ca, &cb)) in tasks.iter().zip(choices_a.iter().zip(&choices_b)) {
            results.push(result(task.task_id, "a", ca));
            results.push(result(task.task_id, "b", cb));
        }
        let report = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        assert_eq!(report.kappa_pairwise_mean, 0.0);
    }

    #[test]
    fn non_overlapping_pair_is_excluded_and_reported() {
        let tasks = simple_tasks(4);
        let results = vec![
            result(tasks[0].task_id, "a", 1),
            result(tasks[1].task_id, "a", 1),
            result(tasks[0].task_id, "b", 1),
            result(tasks[1].task_id, "b", 1),
            result(tasks[2].task_id, "c", 1),
            result(tasks[3].task_id, "c", 1),
        ];
        let report = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        assert_eq!(report.kappa_pairs.len(), 1);
        assert_eq!(report.excluded_pairs.len(), 2);
    }

    #[test]
    fn consensus_accuracy_counts_gold_matches() {
        let tasks = simple_tasks(4);
        let gold: Vec<u32> = tasks.iter().map(|t| t.validated_option_index).collect();
        let wrong = |g: u32| if g == 1 { 2 } else { 1 };
        let results = vec![
            // task 1: all agree on gold
            result(tasks[0].task_id, "a", gold[0]),
            result(tasks[0].task_id, "b", gold[0]),
            // task 2: all agree off gold
            result(tasks[1].task_id, "a", wrong(gold[1])),
            result(tasks[1].task_id, "b", wrong(gold[1])),
            // task 3: 2-1 majority on gold
            result(tasks[2].task_id, "a", gold[2]),
            result(tasks[2].task_id, "b", gold[2]),
            result(tasks[2].task_id, "c", wrong(gold[2])),
            // task 4: 1-1 tie, excluded from majority
            result(tasks[3].task_id, "a", gold[3]),
            result(tasks[3].task_id, "b", wrong(gold[3])),
        ];
        let report = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        assert_eq!(report.all_agree_tasks, 2);
        assert_eq!(report.accuracy_all_agree, 0.5);
        assert_eq!(report.majority_tasks, 3, "the tie is excluded");
        assert!((report.accuracy_majority - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn neutrality_recall_tracks_gold_neutral_tasks() {
        let examples = vec![
            example(0, &[(Neutral, 1.0)]),
            example(1, &[(Neutral, 1.0)]),
            example(2, &[(Joy, 0.9)]),
        ];
        let tasks = generate_tasks(&examples, 13, 0.0).unwrap().tasks;
        let flag = |task_id: u32, annotator: &str, flagged: bool| AnnotationResult {
            neutral_flag: flagged,
            ..result(task_id, annotator, 7)
        };
        let results = vec![
            flag(1, "a", true),
            flag(2, "a", false),
            flag(3, "a", false),
            flag(1, "b", true),
            flag(2, "b", true),
            flag(3, "b", false),
        ];
        let report = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        let a = report.neutrality.iter().find(|n| n.annotator_id == "a").unwrap();
        assert_eq!(a.gold_neutral_seen, 2);
        assert_eq!(a.gold_neutral_flagged, 1);
        assert_eq!(a.recall, 0.5);
        let b = report.neutrality.iter().find(|n| n.annotator_id == "b").unwrap();
        assert_eq!(b.recall, 1.0);
        assert_eq!(report.neutrality_recall_overall, 0.75);
    }

    #[test]
    fn report_is_invariant_under_result_order() {
        let tasks = simple_tasks(6);
        let mut results = Vec::new();
        for (i, task) in tasks.iter().enumerate() {
            results.push(result(task.task_id, "a", (i % 7 + 1) as u32));
            results.push(result(task.task_id, "b", (i % 3 + 1) as u32));
        }
        let forward = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        results.reverse();
        let backward = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        assert_eq!(forward.kappa_pairwise_mean, backward.kappa_pairwise_mean);
        assert_eq!(forward.accuracy_all_agree, backward.accuracy_all_agree);
        assert_eq!(forward.accuracy_majority, backward.accuracy_majority);
        assert_eq!(forward.neutrality, backward.neutrality);
    }

    #[test]
    fn fleiss_statistic_is_one_for_identical_raters() {
        let tasks = simple_tasks(5);
        let mut results = Vec::new();
        for task in &tasks {
            results.push(result(task.task_id, "a", 2));
            results.push(result(task.task_id, "b", 2));
            results.push(result(task.task_id, "c", 2));
        }
        let report = score(&tasks, &results, &ScoreOptions { fleiss: true }).unwrap();
        assert_eq!(report.kappa_fleiss, Some(1.0));
    }

    #[test]
    fn scoring_rejects_bad_references() {
        let tasks = simple_tasks(2);
        let unknown = vec![result(99, "a", 1), result(1, "b", 1)];
        assert!(score(&tasks, &unknown, &ScoreOptions::default()).unwrap_err().is_user_error());
        let duplicate = vec![result(1, "a", 1), result(1, "a", 2)];
        assert!(score(&tasks, &duplicate, &ScoreOptions::default()).unwrap_err().is_user_error());
        let lonely = vec![result(1, "a", 1)];
        assert!(score(&tasks, &lonely, &ScoreOptions::default()).unwrap_err().is_user_error());
    }

    #[test]
    fn context_consultation_splits_by_variant() {
        let mut orig_only = example(0, &[(Joy, 0.9)]);
        orig_only.utterance_rewr = None;
        let examples = vec![orig_only, example(1, &[(Joy, 0.9)])];
        let tasks = generate_tasks(&examples, 17, 0.0).unwrap().tasks;
        let consulted = |task_id: u32, annotator: &str, consulted: bool| AnnotationResult {
            consulted_context: consulted,
            ..result(task_id, annotator, 1)
        };
        let results = vec![
            consulted(1, "a", false),
            consulted(1, "b", false),
            consulted(2, "a", true),
            consulted(2, "b", false),
        ];
        let report = score(&tasks, &results, &ScoreOptions::default()).unwrap();
        assert_eq!(report.consulted_context_orig, 0.0);
        assert_eq!(report.consulted_context_rewr, 0.5);
    }

    #[test]
    fn files_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let tasks = simple_tasks(3);
        write_tasks(&tasks, &dir.path().join("tasks.tsv")).unwrap();
        write_answer_key(&tasks, &dir.path().join("answers.tsv")).unwrap();
        let answers = std::fs::read_to_string(dir.path().join("answers.tsv")).unwrap();
        assert!(answers.starts_with("task_id\tvalidated_option_index\tpure_neutral\n"));
        assert_eq!(answers.lines().count(), 4);
        let reloaded =
            read_tasks(&dir.path().join("tasks.tsv"), &dir.path().join("answers.tsv")).unwrap();
        assert_eq!(reloaded, tasks);

        let results = vec![
            AnnotationResult {
                task_id: 1,
                annotator_id: "a".to_string(),
                choice: 3,
                neutral_flag: true,
                consulted_context: false,
                suggested: Some("longing".to_string()),
            },
            result(2, "b", 7),
        ];
        let path = dir.path().join("results.tsv");
        write_results(&results, &path).unwrap();
        assert_eq!(read_results(&path).unwrap(), results);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("3\tc\t9\tfalse\tfalse\t\n");
        std::fs::write(&path, text).unwrap();
        match read_results(&path).unwrap_err() {
            Error::Corrupt { line, .. } => assert_eq!(line, 4),
            other => panic!("expected corrupt error, got {other}"),
        }
    }
}
