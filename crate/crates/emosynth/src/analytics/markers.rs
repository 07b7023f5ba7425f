//! Emotion-marker lexicon extraction.
//!
//! A marker is a word the neutral rewriting stage systematically deletes:
//! its removal ratio across paired original/rewritten rows clears one
//! threshold, and each emotion attached to it co-occurs with enough of its
//! original occurrences to clear another. Counting is multiset-based per
//! row, so a word that merely moves within a sentence is not "removed".

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::taxonomy::{EmotionClass, MarkerGroup};

/// One original/rewritten utterance pair with the emotions of the original.
#[derive(Debug, Clone)]
pub struct MarkerRow {
    pub original: String,
    pub rewritten: String,
    pub emotions: Vec<EmotionClass>,
}

#[derive(Debug, Clone)]
pub struct MarkerOptions {
    /// Minimum share of a word's occurrences that must disappear.
    pub removal_threshold: f64,
    /// Minimum share of occurrences an emotion must co-occur with to be
    /// listed on the entry.
    pub cooccur_threshold: f64,
    /// Restrict entries to these words when set. A plain allow-list, useful
    /// for pre-filtered vocabulary such as adverbs; no part-of-speech
    /// analysis happens here.
    pub word_filter: Option<BTreeSet<String>>,
}

impl Default for MarkerOptions {
    fn default() -> MarkerOptions {
        MarkerOptions { removal_threshold: 0.6, cooccur_threshold: 0.05, word_filter: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkerEntry {
    pub word: String,
    /// removed / total_occurrences.
    pub removal_ratio: f64,
    pub total_occurrences: usize,
    pub removed: usize,
    /// Emotions clearing the co-occurrence threshold, canonical order.
    pub emotions: Vec<EmotionClass>,
    /// Share of group-attributable co-occurrences per marker group, indexed
    /// by [`MarkerGroup::index`]; sums to 1 when any exists.
    pub group_strengths: [f64; 6],
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkerLexicon {
    /// Sorted by descending removal ratio, then word.
    pub entries: Vec<MarkerEntry>,
    pub rows_scanned: usize,
}

/// Comparisons against the thresholds forgive float representation noise.
const THRESHOLD_EPSILON: f64 = 1e-9;

fn clears(share: f64, threshold: f64) -> bool {
    share + THRESHOLD_EPSILON >= threshold
}

/// Lowercased word tokens: split on characters that are neither
/// alphanumeric nor an apostrophe or hyphen, then trim apostrophes and
/// hyphens from the edges. Keeps "don't" and "self-aware" whole while
/// stripping quotes and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|piece| piece.trim_matches(|c: char| c == '\'' || c == '-'))
        .filter(|piece| !piece.is_empty())
        .map(|piece| piece.to_lowercase())
        .collect()
}

fn counted(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for token in tokens {
        *counts.entry(token.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Build the marker lexicon from paired rows.
pub fn extract_markers(rows: &[MarkerRow], options: &MarkerOptions) -> Result<MarkerLexicon> {
    if rows.is_empty() {
        return Err(Error::invalid("marker extraction needs at least one row"));
    }
    if !(0.0..=1.0).contains(&options.removal_threshold)
        || !(0.0..=1.0).contains(&options.cooccur_threshold)
    {
        return Err(Error::invalid("marker thresholds must be within [0, 1]"));
    }

    struct Tally {
        total: usize,
        removed: usize,
        cooccur: BTreeMap<EmotionClass, usize>,
    }
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();

    for row in rows {
        let original = tokenize(&row.original);
        let rewritten = tokenize(&row.rewritten);
        let orig_counts = counted(&original);
        let rewr_counts = counted(&rewritten);
        for (word, &count) in &orig_counts {
            let kept = *rewr_counts.get(word).unwrap_or(&0);
            let removed = count.saturating_sub(kept);
            let tally = tallies.entry((*word).to_string()).or_insert_with(|| Tally {
                total: 0,
                removed: 0,
                cooccur: BTreeMap::new(),
            });
            tally.total += count;
            tally.removed += removed;
            // occurrence-weighted: a word appearing twice in a row counts
            // twice toward each of that row's emotions
            for &class in &row.emotions {
                *tally.cooccur.entry(class).or_insert(0) += count;
            }
        }
    }

    let mut entries = Vec::new();
    for (word, tally) in &tallies {
        if let Some(filter) = &options.word_filter {
            if !filter.contains(word) {
                continue;
            }
        }
        let removal_ratio = tally.removed as f64 / tally.total as f64;
        if !clears(removal_ratio, options.removal_threshold) {
            continue;
        }
        let emotions: Vec<EmotionClass> = EmotionClass::ALL
            .iter()
            .copied()
            .filter(|class| {
                let count = *tally.cooccur.get(class).unwrap_or(&0);
                count > 0 && clears(count as f64 / tally.total as f64, options.cooccur_threshold)
            })
            .collect();
        if emotions.is_empty() {
            continue;
        }

        let mut group_counts = [0usize; 6];
        for (&class, &count) in &tally.cooccur {
            if let Some(group) = class.marker_group() {
                group_counts[group.index()] += count;
            }
        }
        let group_total: usize = group_counts.iter().sum();
        let group_strengths = if group_total == 0 {
            [0.0; 6]
        } else {
            let mut strengths = [0.0; 6];
            for (slot, &count) in strengths.iter_mut().zip(&group_counts) {
                *slot = count as f64 / group_total as f64;
            }
            strengths
        };

        let entry = MarkerEntry {
            word: word.clone(),
            removal_ratio,
            total_occurrences: tally.total,
            removed: tally.removed,
            emotions,
            group_strengths,
        };
        debug_assert!(clears(entry.removal_ratio, options.removal_threshold));
        debug_assert!(entry.emotions.iter().all(|class| {
            clears(tally.cooccur[class] as f64 / tally.total as f64, options.cooccur_threshold)
        }));
        entries.push(entry);
    }

    entries.sort_by(|a, b| {
        b.removal_ratio
            .partial_cmp(&a.removal_ratio)
            .expect("removal ratios are finite")
            .then_with(|| a.word.cmp(&b.word))
    });
    Ok(MarkerLexicon { entries, rows_scanned: rows.len() })
}

impl MarkerLexicon {
    /// Per-group view: each group lists its markers by descending strength
    /// in that group, strongest group memberships first.
    pub fn render_group_table(&self) -> String {
        let mut out = String::new();
        for group in MarkerGroup::ALL {
            let mut members: Vec<(&str, f64)> = self
                .entries
                .iter()
                .filter(|entry| entry.group_strengths[group.index()] > 0.0)
                .map(|entry| (entry.word.as_str(), entry.group_strengths[group.index()]))
                .collect();
            members.sort_by(|a, b| {
                b.1.partial_cmp(&a.1).expect("strengths are finite").then_with(|| a.0.cmp(b.0))
            });
            out.push_str(group.name());
            out.push_str(": ");
            if members.is_empty() {
                out.push_str("(none)");
            } else {
                let rendered: Vec<String> =
                    members.iter().map(|(word, s)| format!("{word} ({s:.2})")).collect();
                out.push_str(&rendered.join(", "));
            }
            out.push('\n');
        }
        out
    }
}
