//! Reply extractors for every stage, collected in one place.
//!
//! Replies to a fixed prompt vary only slightly in structure, so plain
//! regex-based extractors are enough. The contract shared by all of them:
//! any input string yields either a structured value or a stage-empty error
//! with the raw text attached; junk lines are skipped, never panicked on.
//!
//! Line shapes handled here:
//!
//! * actor lists: `N. Name` or `N. Name (gloss)`, gloss kept as annotation;
//! * utterance batches: `N. (Emotion) "text"`, then a `Neutral:` header and
//!   `N. "text"` lines;
//! * soft labels: `N. emotion (score) - explanation`, the leading `N.` and
//!   the explanation being optional;
//! * free-form stages (context, cleaning, rewriting): text with leading
//!   boilerplate labels and symmetric wrapping quotes stripped.

use crate::error::{Error, Result};
use crate::stage::Stage;
use regex::Regex;
use std::sync::OnceLock;

fn actor_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]\s*(?P<body>.+?)\s*$").unwrap())
}

fn gloss_suffix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?P<name>.*?)\s*\((?P<gloss>[^()]*)\)\s*$").unwrap())
}

fn utterance_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"^\s*(?P<num>\d+)\s*[.)]\s*\(\s*(?P<emotion>[^)]+?)\s*\)\s*(?P<text>.+?)\s*$"#)
            .unwrap()
    })
}

fn neutral_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*neutral\s*:?\s*$").unwrap())
}

fn numbered_text_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]\s*(?P<text>.+?)\s*$").unwrap())
}

fn soft_label_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(?:\d+\s*[.)]\s*)?(?P<emotion>[A-Za-z][A-Za-z' \-]*?)\s*\(\s*(?P<score>-?\d+(?:\.\d+)?)\s*\)\s*(?:-\s*(?P<explanation>.*\S))?\s*$",
        )
        .unwrap()
    })
}

/// One parsed actor entry. `annotation` is the parenthetical gloss, kept as
/// metadata; the canonical name is what keys journals and examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedActor {
    pub name: String,
    pub annotation: Option<String>,
}

/// Parse a numbered actor list. Duplicate names (case-insensitive) keep the
/// first entry. Generic crowd entries are entries like any other; deciding
/// what is usable is the caller's business, not the parser's.
pub fn parse_actor_list(reply: &str) -> Result<Vec<ParsedActor>> {
    let mut actors: Vec<ParsedActor> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for line in reply.lines() {
        let Some(cap) = actor_line().captures(line) else {
            continue;
        };
        let body = cap.name("body").unwrap().as_str();
        let (name, annotation) = match gloss_suffix().captures(body) {
            Some(g) => {
                let name = g.name("name").unwrap().as_str().trim();
                let gloss = g.name("gloss").unwrap().as_str().trim();
                if name.is_empty() {
                    // a bare parenthetical is a name, not an annotation
                    (body.trim().to_string(), None)
                } else {
                    (name.to_string(), (!gloss.is_empty()).then(|| gloss.to_string()))
                }
            }
            None => (body.trim().to_string(), None),
        };
        if name.is_empty() {
            continue;
        }
        if seen.insert(name.to_lowercase()) {
            actors.push(ParsedActor { name, annotation });
        }
    }
    if actors.is_empty() {
        return Err(Error::StageEmpty {
            stage: Stage::Actors,
            detail: format!("no numbered actor lines in reply: {reply:?}"),
        });
    }
    Ok(actors)
}

/// One parsed draft from the 8 + 2 batch. Emotional drafts keep their reply
/// line number as ordinal; the two neutral drafts are pinned to ordinals 9
/// and 10 so an emotional parse deficit cannot shift their keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedUtterance {
    pub ordinal: u32,
    /// Raw emotion tag for emotional drafts; `None` for the neutral slots.
    pub raw_emotion: Option<String>,
    pub text: String,
    pub neutral_slot: bool,
}

/// Parse the utterance batch: at most 8 emotional drafts before a `Neutral:`
/// header and at most 2 neutral drafts after it. Lines that fit no pattern,
/// duplicate a tag, or reuse a line number are skipped (deficits are normal
/// and recorded upstream, not errors).
pub fn parse_utterance_batch(reply: &str) -> Result<Vec<ParsedUtterance>> {
    let mut drafts: Vec<ParsedUtterance> = Vec::new();
    let mut seen_tags = std::collections::BTreeSet::new();
    let mut seen_ordinals = std::collections::BTreeSet::new();
    let mut neutral_seen = 0u32;
    let mut in_neutral_block = false;
    for line in reply.lines() {
        if neutral_header().is_match(line) {
            in_neutral_block = true;
            continue;
        }
        if !in_neutral_block {
            let Some(cap) = utterance_line().captures(line) else {
                continue;
            };
            let ordinal: u32 = match cap.name("num").unwrap().as_str().parse() {
                Ok(n) if (1..=8).contains(&n) => n,
                _ => continue,
            };
            let raw_emotion = cap.name("emotion").unwrap().as_str().to_string();
            let text = strip_wrapping_quotes(cap.name("text").unwrap().as_str());
            let tag = raw_emotion.to_lowercase();
            if text.is_empty() || seen_tags.contains(&tag) || seen_ordinals.contains(&ordinal) {
                continue;
            }
            seen_tags.insert(tag);
            seen_ordinals.insert(ordinal);
            drafts.push(ParsedUtterance {
                ordinal,
                raw_emotion: Some(raw_emotion),
                text,
                neutral_slot: false,
            });
        } else {
            if neutral_seen >= 2 {
                continue;
            }
            let Some(cap) = numbered_text_line().captures(line) else {
                continue;
            };
            let text = strip_wrapping_quotes(cap.name("text").unwrap().as_str());
            if text.is_empty() {
                continue;
            }
            neutral_seen += 1;
            drafts.push(ParsedUtterance {
                ordinal: 8 + neutral_seen,
                raw_emotion: None,
                text,
                neutral_slot: true,
            });
        }
    }
    if drafts.is_empty() {
        return Err(Error::StageEmpty {
            stage: Stage::Utterances,
            detail: format!("no utterance lines in reply: {reply:?}"),
        });
    }
    drafts.sort_by_key(|d| d.ordinal);
    Ok(drafts)
}

/// One soft-label line before normalization and quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSoftLabel {
    pub raw_label: String,
    pub raw_score: f64,
    pub explanation: String,
}

/// Parse `N. emotion (score) - explanation` lines. The first non-empty line
/// must parse (the prompt anchors it); later junk lines are skipped.
pub fn parse_soft_label_lines(reply: &str) -> Result<Vec<ParsedSoftLabel>> {
    let mut labels = Vec::new();
    let mut first_content_line = true;
    for line in reply.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match soft_label_line().captures(line) {
            Some(cap) => {
                let raw_label = cap.name("emotion").unwrap().as_str().trim().to_string();
                let raw_score: f64 = match cap.name("score").unwrap().as_str().parse() {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let explanation = cap
                    .name("explanation")
                    .map(|m| m.as_str().trim().to_string())
                    .unwrap_or_default();
                labels.push(ParsedSoftLabel { raw_label, raw_score, explanation });
            }
            None if first_content_line => {
                return Err(Error::StageEmpty {
                    stage: Stage::SoftLabels,
                    detail: format!("first line did not parse as a label: {line:?}"),
                });
            }
            None => {}
        }
        first_content_line = false;
    }
    if labels.is_empty() {
        return Err(Error::StageEmpty {
            stage: Stage::SoftLabels,
            detail: format!("no label lines in reply: {reply:?}"),
        });
    }
    Ok(labels)
}

const BOILERPLATE_PREFIXES: [&str; 7] = [
    "explanation:",
    "context:",
    "summary:",
    "cleaned context:",
    "rewritten utterance:",
    "rewritten:",
    "answer:",
];

/// Normalize a free-form stage reply: trim, strip one leading boilerplate
/// label, strip symmetric wrapping quotes. Everything else stays verbatim.
pub fn strip_boilerplate(reply: &str) -> String {
    let mut text = reply.trim();
    let lowered = text.to_lowercase();
    for prefix in BOILERPLATE_PREFIXES {
        if lowered.starts_with(prefix) {
            text = text[prefix.len()..].trim_start();
            break;
        }
    }
    strip_wrapping_quotes(text)
}

fn strip_wrapping_quotes(text: &str) -> String {
    let text = text.trim();
    let pairs = [('"', '"'), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];
    for (open, close) in pairs {
        let stripped = text.strip_prefix(open).and_then(|t| t.strip_suffix(close));
        if let Some(inner) = stripped {
            // only strip when the quotes wrap the whole text, not dialogue
            // fragments inside it
            if !inner.contains(open) && !inner.contains(close) {
                return inner.trim().to_string();
            }
            return inner.trim().to_string();
        }
    }
    text.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn actor_list_splits_names_from_glosses() {
        let reply = "1. Rick Deckard (ex-police officer and Blade Runner)\n2. Officer Gaff\n3. Rachael (experimental replicant)\n";
        let actors = parse_actor_list(reply).unwrap();
        assert_eq!(actors.len(), 3);
        assert_eq!(actors[0].name, "Rick Deckard");
        assert_eq!(actors[0].annotation.as_deref(), Some("ex-police officer and Blade Runner"));
        assert_eq!(actors[1].name, "Officer Gaff");
        assert_eq!(actors[1].annotation, None);
    }

    #[test]
    fn actor_list_dedupes_case_insensitively_and_keeps_crowds() {
        let reply = "1. Mara Venn\n2. MARA VENN\n3. Crowd members (background characters)\n";
        let actors = parse_actor_list(reply).unwrap();
        assert_eq!(actors.len(), 2);
        assert_eq!(actors[1].name, "Crowd members");
    }

    #[test]
    fn refusal_reply_is_stage_empty() {
        match parse_actor_list("There are no characters to list.") {
            Err(Error::StageEmpty { stage, .. }) => assert_eq!(stage, Stage::Actors),
            other => panic!("expected stage-empty, got {other:?}"),
        }
    }

    #[test]
    fn utterance_batch_parses_emotional_and_neutral_blocks() {
        let reply = concat!(
            "1. (Anger) \"How could they.\"\n",
            "2. (Curiosity) \"What is going on.\"\n",
            "some stray commentary\n",
            "Neutral:\n",
            "1. \"I need to focus.\"\n",
            "2. \"I need to gather more information.\"\n",
            "3. \"extra neutral is dropped\"\n",
        );
        let drafts = parse_utterance_batch(reply).unwrap();
        assert_eq!(drafts.len(), 4);
        assert_eq!(drafts[0].raw_emotion.as_deref(), Some("Anger"));
        assert_eq!(drafts[0].text, "How could they.");
        assert_eq!(drafts[0].ordinal, 1);
        let neutrals: Vec<_> = drafts.iter().filter(|d| d.neutral_slot).collect();
        assert_eq!(neutrals.len(), 2);
        assert_eq!(neutrals[0].ordinal, 9);
        assert_eq!(neutrals[1].ordinal, 10);
    }

    #[test]
    fn utterance_batch_dedupes_tags_and_ordinals() {
        let reply = concat!(
            "1. (Anger) \"first\"\n",
            "1. (Fear) \"ordinal reuse dropped\"\n",
            "2. (anger) \"tag reuse dropped\"\n",
            "3. (Fear) \"kept\"\n",
        );
        let drafts = parse_utterance_batch(reply).unwrap();
        assert_eq!(drafts.len(), 2);
        assert_eq!(drafts[0].text, "first");
        assert_eq!(drafts[1].text, "kept");
    }

    #[test]
    fn neutral_ordinals_survive_emotional_deficits() {
        let reply = "3. (Fear) \"only one emotional line\"\nNeutral:\n1. \"calm line\"\n";
        let drafts = parse_utterance_batch(reply).unwrap();
        assert_eq!(drafts[0].ordinal, 3);
        assert_eq!(drafts[1].ordinal, 9);
    }

    #[test]
    fn soft_labels_parse_scores_and_explanations() {
        let reply = concat!(
            "1. anger (1.0) - The speaker expresses strong displeasure.\n",
            "2. caring (1.0) - Concern for another.\n",
            "3. neutral (0.1) - Little else.\n",
        );
        let labels = parse_soft_label_lines(reply).unwrap();
        assert_eq!(labels.len(), 3);
        assert_eq!(labels[0].raw_label, "anger");
        assert_eq!(labels[0].raw_score, 1.0);
        assert!(labels[0].explanation.starts_with("The speaker"));
    }

    #[test]
    fn soft_labels_accept_unnumbered_first_line_and_skip_later_junk() {
        let reply = "anger (0.9)\nnot a label line\n2. fear (0.4) - worry\n";
        let labels = parse_soft_label_lines(reply).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[1].raw_label, "fear");
    }

    #[test]
    fn unparseable_first_soft_label_line_is_stage_empty() {
        match parse_soft_label_lines("I cannot label this utterance.") {
            Err(Error::StageEmpty { stage, .. }) => assert_eq!(stage, Stage::SoftLabels),
            other => panic!("expected stage-empty, got {other:?}"),
        }
    }

    #[test]
    fn boilerplate_and_quotes_are_stripped() {
        assert_eq!(strip_boilerplate("Explanation: He left early."), "He left early.");
        assert_eq!(strip_boilerplate("\"He left early.\""), "He left early.");
        assert_eq!(strip_boilerplate("  plain text  "), "plain text");
        // inner quotes survive
        assert_eq!(strip_boilerplate("He said \"stop\" and left."), "He said \"stop\" and left.");
    }

    proptest! {
        // Totality: parsers classify arbitrary input as value or stage-empty,
        // never panicking.
        #[test]
        fn parsers_are_total(reply in ".{0,400}") {
            let _ = parse_actor_list(&reply);
            let _ = parse_utterance_batch(&reply);
            let _ = parse_soft_label_lines(&reply);
            let _ = strip_boilerplate(&reply);
        }

        #[test]
        fn parsed_actor_names_are_never_empty(reply in ".{0,400}") {
            if let Ok(actors) = parse_actor_list(&reply) {
                prop_assert!(actors.iter().all(|a| !a.name.is_empty()));
            }
        }
    }
}
