//! Deterministic offline chat backend.
//!
//! Replies come from two layers, both pure functions of the prompt text:
//!
//! 1. fixture files: a directory mapping `sha256(prompt)` hex to a reply,
//!    one file per prompt, named `<hash>.txt`;
//! 2. synthesis: when no fixture matches and synthesis is enabled (the
//!    default), a stage-appropriate reply is derived from the prompt hash so
//!    full pipeline runs work on arbitrary corpora with no endpoint at all.
//!
//! With synthesis disabled, a missing fixture is a protocol error; tests use
//! that mode to pin down exactly which prompts a run may issue.

use super::{ChatBackend, ChatReply, ChatRequest, TokenUsage};
use crate::error::{Error, Result};
use crate::stage::Stage;
use crate::taxonomy::EmotionClass;
use crate::util;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

pub struct MockChat {
    fixtures: Option<PathBuf>,
    synthesize: bool,
    latency: Option<Duration>,
    calls: AtomicUsize,
    call_log: Mutex<Vec<String>>,
}

impl Default for MockChat {
    fn default() -> Self {
        MockChat::new()
    }
}

impl MockChat {
    /// Pure-synthesis mock: every prompt gets a generated reply.
    pub fn new() -> MockChat {
        MockChat {
            fixtures: None,
            synthesize: true,
            latency: None,
            calls: AtomicUsize::new(0),
            call_log: Mutex::new(Vec::new()),
        }
    }

    /// Fixture directory first, synthesis as fallback.
    pub fn with_fixtures(dir: impl Into<PathBuf>) -> MockChat {
        MockChat { fixtures: Some(dir.into()), ..MockChat::new() }
    }

    /// Fixture directory only; a missing fixture is a protocol error.
    pub fn fixtures_only(dir: impl Into<PathBuf>) -> MockChat {
        MockChat { fixtures: Some(dir.into()), synthesize: false, ..MockChat::new() }
    }

    /// Artificial per-call latency, for exercising the concurrency gauge.
    pub fn with_latency(mut self, latency: Duration) -> MockChat {
        self.latency = Some(latency);
        self
    }

    /// Fixture key for a prompt.
    pub fn prompt_hash(prompt: &str) -> String {
        let digest = Sha256::digest(prompt.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Write the fixture file that will answer `prompt` with `reply`.
    pub fn seed_fixture(dir: &Path, prompt: &str, reply: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.txt", MockChat::prompt_hash(prompt)));
        std::fs::write(&path, reply).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Backend invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Prompt hashes in call order; resume tests assert no hash repeats.
    pub fn call_hashes(&self) -> Vec<String> {
        self.call_log.lock().unwrap().clone()
    }
}

impl ChatBackend for MockChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = MockChat::prompt_hash(&request.prompt);
        self.call_log.lock().unwrap().push(hash.clone());
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        if let Some(dir) = &self.fixtures {
            let path = dir.join(format!("{hash}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                return Ok(reply(text));
            }
        }
        if self.synthesize {
            return Ok(reply(synthesize(request.params.stage, &request.prompt)));
        }
        Err(Error::protocol(
            format!("no fixture for prompt hash {hash} and synthesis is disabled"),
            request.prompt.clone(),
        ))
    }
}

fn reply(text: String) -> ChatReply {
    ChatReply { text, usage: TokenUsage::default(), latency: Duration::ZERO }
}

fn prompt_rng(prompt: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(prompt.as_bytes());
    util::seeded_rng(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Pull the value of a `Label: value` line out of a prompt. Values run to
/// the end of the line; the templates keep each parameter on one line.
fn prompt_field(prompt: &str, label: &str) -> Option<String> {
    prompt.lines().find_map(|line| line.strip_prefix(label)).map(|rest| rest.trim().to_string())
}

const NAME_POOL: [&str; 12] = [
    "Mara Venn",
    "Tobias Hale",
    "Ingrid Solt",
    "Arno Pike",
    "Celia Marsh",
    "Dmitri Rook",
    "Frida Lund",
    "Jonas Beck",
    "Petra Quill",
    "Ruben Tide",
    "Sana Moor",
    "Viktor Lane",
];

const GLOSSES: [&str; 6] = [
    "ship engineer",
    "retired detective",
    "young heir",
    "wandering scholar",
    "innkeeper",
    "stowaway",
];

const TOPICS: [&str; 10] = [
    "the harbor",
    "the ledger",
    "the old bridge",
    "the farmstead",
    "the archive",
    "the expedition",
    "the locked gate",
    "the night train",
    "the orchard",
    "the signal tower",
];

const OBSERVATIONS: [&str; 8] = [
    "nothing about it adds up yet",
    "the plan depends on timing",
    "someone has been here before us",
    "the records tell a different story",
    "we are running short of options",
    "everything hinges on the next move",
    "the others do not suspect a thing",
    "it has waited there for years",
];

fn synthesize(stage: Stage, prompt: &str) -> String {
    let mut rng = prompt_rng(prompt);
    match stage {
        Stage::Actors => synth_actors(&mut rng),
        Stage::Utterances => synth_utterances(&mut rng),
        Stage::SoftLabels => synth_soft_labels(&mut rng, prompt),
        Stage::Context => synth_context(&mut rng, prompt),
        Stage::Cleaning => synth_cleaning(prompt),
        Stage::Rewriting => synth_rewrite(prompt),
    }
}

fn synth_actors(rng: &mut ChaCha8Rng) -> String {
    let mut names: Vec<&str> = NAME_POOL.to_vec();
    util::shuffle(&mut names, rng);
    let mut out = String::new();
    for (i, name) in names.iter().take(3).enumerate() {
        if i == 0 {
            let gloss = GLOSSES[rng.gen_range(0..GLOSSES.len())];
            out.push_str(&format!("{}. {name} ({gloss})\n", i + 1));
        } else {
            out.push_str(&format!("{}. {name}\n", i + 1));
        }
    }
    out
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let topic = TOPICS[rng.gen_range(0..TOPICS.len())];
    let observation = OBSERVATIONS[rng.gen_range(0..OBSERVATIONS.len())];
    format!("I keep thinking about {topic}, and {observation}.")
}

fn synth_utterances(rng: &mut ChaCha8Rng) -> String {
    let mut emotional: Vec<EmotionClass> =
        EmotionClass::ALL.into_iter().filter(|c| !c.is_neutral()).collect();
    util::shuffle(&mut emotional, rng);
    let mut out = String::new();
    for (i, class) in emotional.iter().take(8).enumerate() {
        let mut name: Vec<char> = class.name().chars().collect();
        name[0] = name[0].to_ascii_uppercase();
        let name: String = name.into_iter().collect();
        out.push_str(&format!("{}. ({name}) \"{}\"\n", i + 1, sentence(rng)));
    }
    out.push_str("Neutral:\n");
    for i in 0..2 {
        out.push_str(&format!("{}. \"{}\"\n", i + 1, sentence(rng)));
    }
    out
}

fn synth_soft_labels(rng: &mut ChaCha8Rng, prompt: &str) -> String {
    // The prompt seeds the reply with "1. <primary>" as its last line.
    let primary = prompt
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| l.trim().strip_prefix("1."))
        .map(|rest| rest.trim().to_string())
        .unwrap_or_else(|| "neutral".to_string());
    let mut others: Vec<EmotionClass> = EmotionClass::ALL
        .into_iter()
        .filter(|c| !c.name().eq_ignore_ascii_case(&primary))
        .collect();
    util::shuffle(&mut others, rng);
    let mut out = String::new();
    let primary_score: f64 = [0.7, 0.8, 0.9, 1.0][rng.gen_range(0..4)];
    out.push_str(&format!(
        "1. {primary} ({primary_score:.1}) - The utterance leads with {primary}.\n"
    ));
    let mut score = primary_score;
    for (i, class) in others.iter().take(4).enumerate() {
        // non-increasing tail so filtering exercises both sides of 0.3
        let step = [0.1, 0.2, 0.3][rng.gen_range(0..3)];
        score = (score - step).max(0.0);
        out.push_str(&format!(
            "{}. {} ({score:.1}) - Secondary signal of {}.\n",
            i + 2,
            class.name(),
            class.name()
        ));
    }
    out
}

fn synth_context(rng: &mut ChaCha8Rng, prompt: &str) -> String {
    let actor = prompt_field(prompt, "Actor:").unwrap_or_else(|| "The speaker".to_string());
    let mut out = format!("{actor} set out early in the story. ");
    for _ in 0..3 {
        out.push_str(&sentence(rng));
        out.push(' ');
    }
    out.push_str(&format!("By that point {actor} had reached the moment of the utterance."));
    out
}

/// The cleaning template holds the context between a `Context:` line and a
/// blank line before the instruction paragraph. Echo it back minus its last
/// sentence, which is how a cleaned context relates to its original.
fn synth_cleaning(prompt: &str) -> String {
    let context = extract_block(prompt, "Context:");
    let sentences: Vec<&str> = context.split_inclusive(". ").collect();
    if sentences.len() > 1 {
        sentences[..sentences.len() - 1].concat().trim().to_string()
    } else {
        context
    }
}

fn synth_rewrite(prompt: &str) -> String {
    let utterance = prompt_field(prompt, "Character's utterance:").unwrap_or_default();
    let words: Vec<&str> = utterance.trim_matches('"').split_whitespace().collect();
    if words.is_empty() {
        return "I will see this through.".to_string();
    }
    let keep = (words.len() * 3).div_ceil(5).max(1);
    let mut out = words[..keep].join(" ");
    out = out.trim_end_matches(['.', ',', ';', '!', '?']).to_string();
    out.push('.');
    out
}

/// Text from `label` to the next blank line (or end of prompt), with the
/// label line's own remainder included. Multi-line parameter blocks in the
/// templates are delimited exactly this way.
fn extract_block(prompt: &str, label: &str) -> String {
    let Some(start) = prompt.find(label) else {
        return String::new();
    };
    let after = &prompt[start + label.len()..];
    let end = after.find("\n\n").unwrap_or(after.len());
    after[..end].trim().to_string()
}
