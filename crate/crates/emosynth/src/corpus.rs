//! Narrative corpus ingestion and deterministic sampling.
//!
//! Two source layouts are understood:
//!
//! * a directory of UTF-8 text files, one plot per file, title taken from the
//!   file stem;
//! * a two-file pairing of a titles file (one title per line) and a plots
//!   file where story sentences are listed one per line and stories are
//!   separated by lines containing only `<EOS>`.
//!
//! Ingestion normalizes nothing beyond trimming trailing whitespace from the
//! body; plots that are empty after trimming are skipped and counted. The
//! persisted corpus is line-delimited JSON, one record per line.

use crate::error::{Error, Result};
use crate::util::{self, token_estimate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One story. `plot_id` is a content hash of title and body, so re-ingesting
/// the same source yields the same ids and journals stay resumable across
/// re-ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotRecord {
    pub plot_id: String,
    pub title: String,
    pub body: String,
    pub token_estimate: usize,
}

impl PlotRecord {
    pub fn new(title: impl Into<String>, body: impl Into<String>) -> PlotRecord {
        let title = title.into();
        let body: String = body.into();
        let body = body.trim_end().to_string();
        PlotRecord {
            plot_id: plot_id(&title, &body),
            token_estimate: token_estimate(&body),
            title,
            body,
        }
    }
}

/// Content hash identifying a plot: sha-256 over title and body, truncated
/// to 16 hex characters.
pub fn plot_id(title: &str, body: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(title.as_bytes());
    hasher.update([0u8]);
    hasher.update(body.as_bytes());
    let digest = hasher.finalize();
    let mut id = String::with_capacity(16);
    for byte in &digest[..8] {
        id.push_str(&format!("{byte:02x}"));
    }
    id
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub ingested: usize,
    /// Sources whose body was empty after trimming.
    pub skipped_empty: usize,
}

/// Ingest a directory of one-plot-per-file sources. Files are visited in
/// lexicographic name order so the output is stable.
pub fn ingest_dir(dir: &Path) -> Result<(Vec<PlotRecord>, IngestReport)> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_file())
        .map(|entry| entry.path())
        .collect();
    names.sort();
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for path in names {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        push_plot(&mut records, &mut report, title, text);
    }
    Ok((records, report))
}

/// Ingest the two-file pairing: one title per line, stories separated by
/// `<EOS>` lines. Titles and stories pair up positionally; a count mismatch
/// is an error because silently misaligned titles would poison every id.
pub fn ingest_paired(
    titles_path: &Path,
    plots_path: &Path,
) -> Result<(Vec<PlotRecord>, IngestReport)> {
    let titles_text =
        std::fs::read_to_string(titles_path).map_err(|e| Error::io(titles_path, e))?;
    let plots_text = std::fs::read_to_string(plots_path).map_err(|e| Error::io(plots_path, e))?;
    let titles: Vec<&str> = titles_text.lines().collect();

    let mut stories: Vec<String> = Vec::new();
    let mut current = String::new();
    for line in plots_text.lines() {
        if line.trim() == "<EOS>" {
            stories.push(std::mem::take(&mut current));
        } else {
            if !current.is_empty() {
                current.push('\n');
            }
            current.push_str(line);
        }
    }
    if !current.trim().is_empty() {
        stories.push(current);
    }

    if titles.len() != stories.len() {
        return Err(Error::invalid(format!(
            "titles/plots mismatch: {} titles vs {} stories",
            titles.len(),
            stories.len()
        )));
    }

    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for (title, body) in titles.iter().zip(stories) {
        push_plot(&mut records, &mut report, title.trim().to_string(), body);
    }
    Ok((records, report))
}

fn push_plot(
    records: &mut Vec<PlotRecord>,
    report: &mut IngestReport,
    title: String,
    body: String,
) {
    let body = body.trim_end();
    if body.is_empty() {
        report.skipped_empty += 1;
        return;
    }
    records.push(PlotRecord::new(title, body));
    report.ingested += 1;
}

/// Write a corpus as line-delimited JSON.
pub fn write_corpus(path: &Path, records: &[PlotRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::invalid(format!("corpus record failed to serialize: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read a corpus written by [`write_corpus`]. Corrupt lines are hard errors:
/// a corpus is an input artifact, not a journal.
pub fn read_corpus(path: &Path) -> Result<Vec<PlotRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PlotRecord = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Sample `n` plots without replacement, deterministically in `seed`.
///
/// Records are ordered by plot id, shuffled with a seeded permutation, and
/// the first `n` are returned. For a fixed seed the result never changes
/// across runs, and `sample(n)` is a prefix of `sample(m)` whenever n <= m.
pub fn sample(records: &[PlotRecord], n: usize, seed: u64) -> Result<Vec<PlotRecord>> {
    if n > records.len() {
        return Err(Error::invalid(format!(
            "requested {n} plots but the corpus holds {}",
            records.len()
        )));
    }
    let mut ordered: Vec<&PlotRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.plot_id.cmp(&b.plot_id));
    let mut rng = util::seeded_rng(seed);
    util::shuffle(&mut ordered, &mut rng);
    Ok(ordered.into_iter().take(n).cloned().collect())
}
