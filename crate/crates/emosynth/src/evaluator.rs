//! Multi-label evaluation over externally produced prediction files:
//! decision-boundary sweep, per-class and averaged scoring, and
//! downstream-task taxonomy mappings.
//!
//! Predictions arrive as a TSV matrix of sigmoid scores, one column per
//! class, with gold labels in a trailing column. Taxonomy-space files list
//! all 28 classes in canonical order; task-space files list the task's
//! classes. Nothing here runs a model; the evaluator only scores files.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::taxonomy::EmotionClass;
use crate::util;

/// Sigmoid scores for a set of examples over a fixed class list, plus the
/// gold label sets those examples carry.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    /// Column names: the 28 taxonomy classes in canonical order, or a
    /// downstream task's classes after projection.
    pub classes: Vec<String>,
    pub ids: Vec<String>,
    /// Row-major, `scores[row][column]`, every value in [0, 1].
    pub scores: Vec<Vec<f64>>,
    /// Gold labels per row; may be empty for unlabeled rows.
    pub truth: Vec<Vec<String>>,
}

impl PredictionMatrix {
    pub fn new(
        classes: Vec<String>,
        ids: Vec<String>,
        scores: Vec<Vec<f64>>,
        truth: Vec<Vec<String>>,
    ) -> Result<PredictionMatrix> {
        if ids.len() != scores.len() || ids.len() != truth.len() {
            return Err(Error::invalid("prediction matrix fields disagree on row count"));
        }
        for (id, row) in ids.iter().zip(&scores) {
            if row.len() != classes.len() {
                return Err(Error::invalid(format!(
                    "row {id} has {} scores for {} classes",
                    row.len(),
                    classes.len()
                )));
            }
            if let Some(score) = row.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(Error::invalid(format!("row {id} score {score} outside [0, 1]")));
            }
        }
        Ok(PredictionMatrix { classes, ids, scores, truth })
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Read the TSV layout: header `example_id`, one column per class,
    /// `truth`; then one row per example with scores in [0, 1] and
    /// semicolon-joined gold labels. A file whose columns are exactly the
    /// 28 taxonomy classes must list them in canonical order; any other
    /// class set (a downstream task's matrix) is taken in file order.
    pub fn read_tsv(path: &Path) -> Result<PredictionMatrix> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let corrupt = |line: usize, detail: String| Error::Corrupt {
            path: path.to_path_buf(),
            line: line + 1,
            detail,
        };

        let header = match lines.next() {
            Some((_, Ok(text))) => text,
            Some((n, Err(e))) => return Err(corrupt(n, e.to_string())),
            None => return Err(corrupt(0, "empty prediction file".to_string())),
        };
        let columns: Vec<&str> = header.split('\t').collect();
        if columns.len() < 3
            || columns.first() != Some(&"example_id")
            || columns.last() != Some(&"truth")
        {
            return Err(Error::invalid(format!(
                "prediction header must be example_id, class columns, truth in {}",
                path.display()
            )));
        }
        let classes: Vec<&str> = columns[1..columns.len() - 1].to_vec();
        let class_set: BTreeSet<&str> = classes.iter().copied().collect();
        if class_set.len() != classes.len() {
            return Err(Error::invalid(format!(
                "prediction header repeats a class column in {}",
                path.display()
            )));
        }
        let canonical: Vec<&str> = EmotionClass::ALL.iter().map(|c| c.name()).collect();
        if class_set == canonical.iter().copied().collect() && classes != canonical {
            return Err(Error::invalid(format!(
                "prediction header does not match the taxonomy column order in {}",
                path.display()
            )));
        }

        let mut ids = Vec::new();
        let mut scores = Vec::new();
        let mut truth = Vec::new();
        for (number, line) in lines {
            let line = line.map_err(|e| corrupt(number, e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != columns.len() {
                return Err(corrupt(
                    number,
                    format!("{} fields, expected {}", fields.len(), columns.len()),
                ));
            }
            let mut row = Vec::with_capacity(classes.len());
            for (class, field) in classes.iter().zip(&fields[1..=classes.len()]) {
                let score: f64 = field
                    .parse()
                    .map_err(|_| corrupt(number, format!("bad {class} score {field:?}")))?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(corrupt(number, format!("{class} score {score} outside [0, 1]")));
                }
                row.push(score);
            }
            ids.push(fields[0].to_string());
            scores.push(row);
            truth.push(split_labels(fields[columns.len() - 1]));
        }
        PredictionMatrix::new(classes.iter().map(|c| c.to_string()).collect(), ids, scores, truth)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut header = vec!["example_id".to_string()];
        header.extend(self.classes.iter().cloned());
        header.push("truth".to_string());
        writeln!(file, "{}", header.join("\t")).map_err(|e| Error::io(path, e))?;
        for ((id, row), labels) in self.ids.iter().zip(&self.scores).zip(&self.truth) {
            let mut fields = vec![util::sanitize_field(id)];
            fields.extend(row.iter().map(|s| format!("{s}")));
            fields.push(labels.join(";"));
            writeln!(file, "{}", fields.join("\t")).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn split_labels(field: &str) -> Vec<String> {
    field.split(';').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Precision, recall, and F1 for one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Rows whose gold labels include the class.
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores at one decision boundary: per-class rows in column order, then
/// pooled (micro) and unweighted-mean (macro) summaries with the spread of
/// the per-class values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub boundary: f64,
    pub per_class: Vec<ClassScores>,
    pub micro_avg: Averages,
    pub macro_avg: Averages,
    pub std_dev: Averages,
}

/// Unweighted mean; empty input is 0.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    // 0/0 settles to 0: a class never predicted and never true scores zero
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Score a matrix at a boundary: class c is predicted for a row iff its
/// score is >= boundary (inclusive). Every gold label must be one of the
/// matrix's columns.
pub fn score(matrix: &PredictionMatrix, boundary: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&boundary) {
        return Err(Error::invalid("decision boundary must be within [0, 1]"));
    }
    let known: HashSet<&str> = matrix.classes.iter().map(String::as_str).collect();
    for (id, labels) in matrix.ids.iter().zip(&matrix.truth) {
        if let Some(stray) = labels.iter().find(|l| !known.contains(l.as_str())) {
            return Err(Error::invalid(format!(
                "row {id} gold label {stray:?} is not a column of the matrix"
            )));
        }
    }

    let columns = matrix.classes.len();
    let mut tp = vec![0usize; columns];
    let mut fp = vec![0usize; columns];
    let mut fn_ = vec![0usize; columns];
    for (row, labels) in matrix.scores.iter().zip(&matrix.truth) {
        for (c, class) in matrix.classes.iter().enumerate() {
            let predicted = row[c] >= boundary;
            let actual = labels.iter().any(|l| l == class);
            match (predicted, actual) {
                (true, true) => tp[c] += 1,
                (true, false) => fp[c] += 1,
                (false, true) => fn_[c] += 1,
                (false, false) => {}
            }
        }
    }

    let per_class: Vec<ClassScores> = (0..columns)
        .map(|c| ClassScores {
            class: matrix.classes[c].clone(),
            precision: ratio(tp[c], tp[c] + fp[c]),
            recall: ratio(tp[c], tp[c] + fn_[c]),
            // one expression so independently counted oracles match bit-exact
            f1: ratio(2 * tp[c], 2 * tp[c] + fp[c] + fn_[c]),
            support: tp[c] + fn_[c],
        })
        .collect();

    let pooled_tp: usize = tp.iter().sum();
    let pooled_fp: usize = fp.iter().sum();
    let pooled_fn: usize = fn_.iter().sum();
    let micro_avg = Averages {
        precision: ratio(pooled_tp, pooled_tp + pooled_fp),
        recall: ratio(pooled_tp, pooled_tp + pooled_fn),
        f1: ratio(2 * pooled_tp, 2 * pooled_tp + pooled_fp + pooled_fn),
    };
    let precisions: Vec<f64> = per_class.iter().map(|c| c.precision).collect();
    let recalls: Vec<f64> = per_class.iter().map(|c| c.recall).collect();
    let f1s: Vec<f64> = per_class.iter().map(|c| c.f1).collect();
    let macro_avg = Averages {
        precision: macro_average(&precisions),
        recall: macro_average(&recalls),
        f1: macro_average(&f1s),
    };
    let std_dev = Averages {
        precision: util::mean_std(&precisions).1,
        recall: util::mean_std(&recalls).1,
        f1: util::mean_std(&f1s).1,
    };
    Ok(EvalReport { boundary, per_class, micro_avg, macro_avg, std_dev })
}

/// One grid point of a boundary sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub boundary: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub boundary: f64,
    /// Full report at the winning boundary.
    pub report: EvalReport,
    /// All 91 grid points, for external plotting.
    pub curve: Vec<SweepPoint>,
}

/// Try every boundary 0.05, 0.06, .., 0.95 and keep the one with the best
/// macro F1; ties go to the smallest boundary.
pub fn sweep_boundary(matrix: &PredictionMatrix) -> Result<SweepOutcome> {
    if matrix.is_empty() {
        return Err(Error::invalid("boundary sweep needs at least one row"));
    }
    if matrix.truth.iter().all(|labels| labels.is_empty()) {
        return Err(Error::invalid("boundary sweep needs at least one gold label"));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut curve = Vec::with_capacity(91);
    for k in 0..=90u32 {
        let boundary = f64::from(k + 5) / 100.0;
        let report = score(matrix, boundary)?;
        curve.push(SweepPoint {
            boundary,
            macro_precision: report.macro_avg.precision,
            macro_recall: report.macro_avg.recall,
            macro_f1: report.macro_avg.f1,
        });
        let improved = match best {
            None => true,
            Some((_, best_f1)) => report.macro_avg.f1 > best_f1,
        };
        if improved {
            best = Some((boundary, report.macro_avg.f1));
        }
    }
    let (boundary, _) = best.expect("grid is never empty");
    let report = score(matrix, boundary)?;
    Ok(SweepOutcome { boundary, report, curve })
}

/// Project a taxonomy-space matrix onto a downstream task's classes. Each
/// `(task class, taxonomy class)` pair copies one column; scores for
/// taxonomy classes outside the task are dropped, which is how out-of-task
/// predictions get ignored. Gold labels pass through untouched.
pub fn map_taxonomy(
    matrix: &PredictionMatrix,
    mapping: &[(String, String)],
) -> Result<PredictionMatrix> {
    if mapping.is_empty() {
        return Err(Error::invalid("task mapping has no classes"));
    }
    let mut seen = HashSet::new();
    for (task_class, _) in mapping {
        if !seen.insert(task_class.as_str()) {
            return Err(Error::invalid(format!("task class {task_class:?} mapped twice")));
        }
    }
    let sources: Vec<usize> = mapping
        .iter()
        .map(|(task_class, taxonomy_class)| {
            matrix.classes.iter().position(|c| c == taxonomy_class).ok_or_else(|| {
                Error::invalid(format!(
                    "task class {task_class:?} maps to unknown class {taxonomy_class:?}"
                ))
            })
        })
        .collect::<Result<_>>()?;
    let classes: Vec<String> = mapping.iter().map(|(task_class, _)| task_class.clone()).collect();
    let scores: Vec<Vec<f64>> =
        matrix.scores.iter().map(|row| sources.iter().map(|&c| row[c]).collect()).collect();
    PredictionMatrix::new(classes, matrix.ids.clone(), scores, matrix.truth.clone())
}

/// The built-in survey-corpus mapping: shame and guilt land on their
/// closest taxonomy classes, the other five map 1-to-1.
pub fn isear_mapping() -> Vec<(String, String)> {
    [
        ("anger", "anger"),
        ("disgust", "disgust"),
        ("fear", "fear"),
        ("guilt", "remorse"),
        ("joy", "joy"),
        ("sadness", "sadness"),
        ("shame", "embarrassment"),
    ]
    .into_iter()
    .map(|(task, taxonomy)| (task.to_string(), taxonomy.to_string()))
    .collect()
}

/// Load a `[mapping]` table of `task_class = "taxonomy_class"` pairs.
/// Entries are sorted by task class for a deterministic column order.
pub fn load_mapping_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    #[derive(serde::Deserialize)]
    struct MappingFile {
        mapping: std::collections::BTreeMap<String, String>,
    }
    let parsed: MappingFile = toml::from_str(&text)
        .map_err(|e| Error::invalid(format!("bad mapping file {}: {e}", path.display())))?;
    if parsed.mapping.is_empty() {
        return Err(Error::invalid(format!("mapping file {} has no classes", path.display())));
    }
    Ok(parsed.mapping.into_iter().collect())
}

/// Rewritten gold labels after resolving a placeholder class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelabelOutcome {
    pub truth: Vec<Vec<String>>,
    /// Rows whose label was replaced by an argmax class.
    pub relabelled: usize,
    /// Rows that fell below the floor and became neutral.
    pub to_neutral: usize,
}

/// Replace each row labeled exactly `others` with the argmax class of its
/// scores (ties to the first column). When the maximum score is strictly
/// below `floor` the row becomes `neutral` instead; a maximum equal to the
/// floor keeps the class. Rows with any other label pass through.
pub fn relabel_others(matrix: &PredictionMatrix, floor: f64) -> Result<RelabelOutcome> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(Error::invalid("relabel floor must be within [0, 1]"));
    }
    let mut truth = matrix.truth.clone();
    let mut relabelled = 0;
    let mut to_neutral = 0;
    for (labels, row) in truth.iter_mut().zip(&matrix.scores) {
        if labels.as_slice() != ["others".to_string()] {
            continue;
        }
        let (argmax, max) = row.iter().copied().enumerate().fold(
            (0usize, f64::NEG_INFINITY),
            |(bi, bs), (i, s)| {
                if s > bs {
                    (i, s)
                } else {
                    (bi, bs)
                }
            },
        );
        if max < floor {
            *labels = vec!["neutral".to_string()];
            to_neutral += 1;
        } else {
            *labels = vec![matrix.classes[argmax].clone()];
            relabelled += 1;
        }
    }
    Ok(RelabelOutcome { truth, relabelled, to_neutral })
}

impl EvalReport {
    /// Fixed-width table: per-class rows in column order, then micro,
    /// macro, and spread rows.
    pub fn render_table(&self) -> String {
        let mut out = format!("boundary {:.2}\n", self.boundary);
        out.push_str(&format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}\n",
            "class", "precision", "recall", "f1", "support"
        ));
        for row in &self.per_class {
            out.push_str(&format!(
                "{:<16} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
                row.class, row.precision, row.recall, row.f1, row.support
            ));
        }
        for (name, avg) in [
            ("micro average", self.micro_avg),
            ("macro average", self.macro_avg),
            ("std", self.std_dev),
        ] {
            out.push_str(&format!(
                "{:<16} {:>9.2} {:>9.2} {:>9.2} {:>9}\n",
                name, avg.precision, avg.recall, avg.f1, ""
            ));
        }
        out
    }

    /// One `key=value` record per line, machine-splittable.
    pub fn render_lines(&self) -> String {
        let mut out = format!("boundary={}\n", self.boundary);
        for row in &self.per_class {
            out.push_str(&format!(
                "class={} precision={} recall={} f1={} support={}\n",
                row.class, row.precision, row.recall, row.f1, row.support
            ));
        }
        for (name, avg) in
            [("micro", self.micro_avg), ("macro", self.macro_avg), ("std", self.std_dev)]
        {
            out.push_str(&format!(
                "summary={} precision={} recall={} f1={}\n",
                name, avg.precision, avg.recall, avg.f1
            ));
        }
        out
    }
}
