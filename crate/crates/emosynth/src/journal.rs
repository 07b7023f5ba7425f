//! Append-only run journal.
//!
//! Every completed stage for a (plot, actor, ordinal) unit is one JSON line,
//! flushed as soon as it is written, so an interrupted run loses at most the
//! stage that was in flight. Resume loads the journal into an index and
//! skips any tuple already present, including stage-empty outcomes: a plot
//! that produced no actors yesterday will produce none today.
//!
//! Lines are appended in completion order. With concurrent workers that
//! order varies run to run; the record set does not, and dataset assembly
//! sorts before writing.

use crate::error::{Error, Result};
use crate::pipeline::{CleanedContext, RewrittenUtterance, SoftLabelSet, UtteranceDraft};
use crate::stage::Stage;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// Identity of one unit of stage work. `actor` is absent for the actors
/// stage (per plot); `ordinal` is absent for actors and utterances (per
/// actor); the four downstream stages carry all three parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JournalKey {
    pub plot_id: String,
    pub actor: Option<String>,
    pub ordinal: Option<u32>,
    pub stage: Stage,
}

impl JournalKey {
    pub fn actors(plot_id: &str) -> JournalKey {
        JournalKey { plot_id: plot_id.into(), actor: None, ordinal: None, stage: Stage::Actors }
    }

    pub fn utterances(plot_id: &str, actor: &str) -> JournalKey {
        JournalKey {
            plot_id: plot_id.into(),
            actor: Some(actor.into()),
            ordinal: None,
            stage: Stage::Utterances,
        }
    }

    pub fn draft_stage(plot_id: &str, actor: &str, ordinal: u32, stage: Stage) -> JournalKey {
        JournalKey {
            plot_id: plot_id.into(),
            actor: Some(actor.into()),
            ordinal: Some(ordinal),
            stage,
        }
    }
}

/// Journaled actor entry (name plus optional parenthetical gloss).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

/// Stage-specific payload of a successful record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StagePayload {
    Actors { actors: Vec<ActorEntry> },
    Utterances { drafts: Vec<UtteranceDraft> },
    SoftLabels { labels: SoftLabelSet },
    Context { text: String },
    Cleaning { cleaned: CleanedContext },
    Rewriting { rewritten: RewrittenUtterance },
}

impl StagePayload {
    /// Stage this payload kind belongs to.
    pub fn stage(&self) -> Stage {
        match self {
            StagePayload::Actors { .. } => Stage::Actors,
            StagePayload::Utterances { .. } => Stage::Utterances,
            StagePayload::SoftLabels { .. } => Stage::SoftLabels,
            StagePayload::Context { .. } => Stage::Context,
            StagePayload::Cleaning { .. } => Stage::Cleaning,
            StagePayload::Rewriting { .. } => Stage::Rewriting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    /// The stage ran and produced nothing usable; the unit is settled, not
    /// retried on resume.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub plot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u32>,
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<StagePayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JournalRecord {
    pub fn ok(key: JournalKey, payload: StagePayload) -> JournalRecord {
        debug_assert_eq!(key.stage, payload.stage());
        JournalRecord {
            plot_id: key.plot_id,
            actor: key.actor,
            ordinal: key.ordinal,
            stage: key.stage,
            status: StageStatus::Ok,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn empty(key: JournalKey, detail: String) -> JournalRecord {
        JournalRecord {
            plot_id: key.plot_id,
            actor: key.actor,
            ordinal: key.ordinal,
            stage: key.stage,
            status: StageStatus::Empty,
            payload: None,
            error: Some(detail),
        }
    }

    pub fn key(&self) -> JournalKey {
        JournalKey {
            plot_id: self.plot_id.clone(),
            actor: self.actor.clone(),
            ordinal: self.ordinal,
            stage: self.stage,
        }
    }

    /// An ok record must carry a payload of its own stage's kind; an empty
    /// record carries none. Anything else is treated as a corrupt line so
    /// consumers can trust the payload variant without re-checking.
    fn is_coherent(&self) -> bool {
        match (self.status, &self.payload) {
            (StageStatus::Ok, Some(payload)) => payload.stage() == self.stage,
            (StageStatus::Ok, None) => false,
            (StageStatus::Empty, payload) => payload.is_none(),
        }
    }
}

/// Appending writer. One record per line, flushed per record.
pub struct JournalWriter {
    path: PathBuf,
    file: std::fs::File,
}

impl JournalWriter {
    pub fn open(path: &Path) -> Result<JournalWriter> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(JournalWriter { path: path.to_path_buf(), file })
    }

    pub fn append(&mut self, record: &JournalRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::invalid(format!("journal record failed to serialize: {e}")))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

/// In-memory view of a journal for resume and assembly.
#[derive(Debug, Default)]
pub struct JournalIndex {
    records: HashMap<JournalKey, JournalRecord>,
    /// 1-based numbers of lines that did not decode. Corrupt lines are
    /// skipped, not fatal: a truncated tail from a crash is expected.
    pub corrupt_lines: Vec<usize>,
}

impl JournalIndex {
    /// Load a journal; a missing file is an empty index. Duplicate keys keep
    /// the last record (a rewritten stage supersedes earlier attempts).
    pub fn load(path: &Path) -> Result<JournalIndex> {
        let mut index = JournalIndex::default();
        let file = match std::fs::File::open(path) {
            Ok(file) => file,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(index),
            Err(e) => return Err(Error::io(path, e)),
        };
        for (number, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<JournalRecord>(&line) {
                Ok(record) if record.is_coherent() => {
                    index.records.insert(record.key(), record);
                }
                _ => index.corrupt_lines.push(number + 1),
            }
        }
        Ok(index)
    }

    pub fn get(&self, key: &JournalKey) -> Option<&JournalRecord> {
        self.records.get(key)
    }

    pub fn contains(&self, key: &JournalKey) -> bool {
        self.records.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &JournalRecord> {
        self.records.values()
    }
}
