//! Corpus-level statistical analyses over an assembled dataset: embedding
//! similarity studies between sampled text pairs, near-duplicate filtering,
//! and a cosine-similarity topic graph with community detection.

pub mod community;
pub mod markers;
pub mod partial_ratio;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use serde::Serialize;

use crate::dataset::DatasetExample;
use crate::error::{Error, Result};
use crate::gateway::embed::{cosine, Embedder};
use crate::util;

pub use community::{detect_communities, CommunityResult};
pub use markers::{
    extract_markers, tokenize, MarkerEntry, MarkerLexicon, MarkerOptions, MarkerRow,
};
pub use partial_ratio::partial_levenshtein_ratio;

/// Which two text populations a similarity study samples pairs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Two random original utterances from anywhere in the dataset.
    RandomUtterances,
    /// Two random neutral-slot utterances from anywhere.
    RandomNeutral,
    /// Two neutral-slot utterances of the same plot and actor.
    SameActorNeutral,
    /// Two generated contexts of the same plot and actor.
    SameActorContexts,
    /// Two contexts from the same plot but different actors.
    CrossActorContexts,
    /// Two contexts from different plots.
    CrossStoryContexts,
    /// A context before and after boilerplate cleaning, same example.
    OrigVsClean,
    /// An utterance before and after neutral rewriting, same example.
    OrigVsRewr,
}

impl Pairing {
    pub const ALL: [Pairing; 8] = [
        Pairing::RandomUtterances,
        Pairing::RandomNeutral,
        Pairing::SameActorNeutral,
        Pairing::SameActorContexts,
        Pairing::CrossActorContexts,
        Pairing::CrossStoryContexts,
        Pairing::OrigVsClean,
        Pairing::OrigVsRewr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pairing::RandomUtterances => "random-utterances",
            Pairing::RandomNeutral => "random-neutral",
            Pairing::SameActorNeutral => "same-actor-neutral",
            Pairing::SameActorContexts => "same-actor-contexts",
            Pairing::CrossActorContexts => "cross-actor-contexts",
            Pairing::CrossStoryContexts => "cross-story-contexts",
            Pairing::OrigVsClean => "orig-vs-clean",
            Pairing::OrigVsRewr => "orig-vs-rewr",
        }
    }

    pub fn from_name(name: &str) -> Option<Pairing> {
        Pairing::ALL.iter().copied().find(|p| p.name() == name)
    }
}

impl std::fmt::Display for Pairing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Summary of cosine similarities over sampled pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityStats {
    pub pairing: Pairing,
    pub mean: f64,
    pub std: f64,
    /// 99th percentile, nearest-rank definition.
    pub q99: f64,
    /// Pairs actually sampled; capped by how many exist.
    pub sample_size: usize,
}

/// Constraint a sampled index pair must satisfy within its text pool.
enum PairRule {
    Any,
    SameUnit,
    SamePlotDifferentUnit,
    DifferentPlot,
}

/// Run one similarity study. Sampling is uniform without replacement over
/// the eligible pairs, deterministic for a given seed; `pair_count` is an
/// upper bound, the stats report how many pairs actually existed. A pairing
/// with no eligible pair at all is an error naming the pairing.
pub fn similarity_stats(
    pairing: Pairing,
    examples: &[DatasetExample],
    embedder: &dyn Embedder,
    pair_count: usize,
    seed: u64,
) -> Result<SimilarityStats> {
    let pairs = collect_pairs(pairing, examples, pair_count, seed)?;

    // embed each distinct text once
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (a, b) in &pairs {
        for text in [a, b] {
            if !index.contains_key(text.as_str()) {
                index.insert(text, order.len());
                order.push(text.clone());
            }
        }
    }
    let vectors = embedder.embed(&order)?;

    let similarities: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| cosine(&vectors[index[a.as_str()]], &vectors[index[b.as_str()]]))
        .collect();
    let (mean, std) = util::mean_std(&similarities);
    let q99 = nearest_rank_percentile(&similarities, 0.99)?;
    Ok(SimilarityStats { pairing, mean, std, q99, sample_size: similarities.len() })
}

/// Gather the sampled text pairs for a pairing.
pub(crate) fn collect_pairs(
    pairing: Pairing,
    examples: &[DatasetExample],
    pair_count: usize,
    seed: u64,
) -> Result<Vec<(String, String)>> {
    if pair_count == 0 {
        return Err(Error::invalid("pair count must be at least 1"));
    }
    let too_few =
        || Error::invalid(format!("pairing {} has too few eligible rows", pairing.name()));
    let mut rng = util::seeded_rng(seed);

    // before/after pairings pair two fields of the same example
    let per_row: Option<Vec<(&str, &str)>> = match pairing {
        Pairing::OrigVsClean => Some(
            examples
                .iter()
                .filter_map(|e| match (&e.context_orig, &e.context_clean) {
                    (Some(orig), Some(clean)) => Some((orig.as_str(), clean.as_str())),
                    _ => None,
                })
                .collect(),
        ),
        Pairing::OrigVsRewr => Some(
            examples
                .iter()
                .filter_map(|e| {
                    e.utterance_rewr.as_deref().map(|rewr| (e.utterance_orig.as_str(), rewr))
                })
                .collect(),
        ),
        _ => None,
    };
    if let Some(rows) = per_row {
        if rows.is_empty() {
            return Err(too_few());
        }
        let mut indices: Vec<usize> = (0..rows.len()).collect();
        util::shuffle(&mut indices, &mut rng);
        indices.truncate(pair_count);
        return Ok(indices
            .into_iter()
            .map(|i| (rows[i].0.to_string(), rows[i].1.to_string()))
            .collect());
    }

    // cross pairings sample two rows from one text pool
    let neutral_only = matches!(pairing, Pairing::RandomNeutral | Pairing::SameActorNeutral);
    let contexts = matches!(
        pairing,
        Pairing::SameActorContexts | Pairing::CrossActorContexts | Pairing::CrossStoryContexts
    );
    let mut texts: Vec<&str> = Vec::new();
    let mut unit: Vec<usize> = Vec::new();
    let mut plot: Vec<usize> = Vec::new();
    let mut unit_ids: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut plot_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for example in examples {
        if neutral_only && !example.neutral_slot {
            continue;
        }
        let text = if contexts {
            match &example.context_orig {
                Some(context) => context.as_str(),
                None => continue,
            }
        } else {
            example.utterance_orig.as_str()
        };
        texts.push(text);
        let next_unit = unit_ids.len();
        unit.push(
            *unit_ids
                .entry((example.plot_id.as_str(), example.actor.as_str()))
                .or_insert(next_unit),
        );
        let next_plot = plot_ids.len();
        plot.push(*plot_ids.entry(example.plot_id.as_str()).or_insert(next_plot));
    }
    if texts.len() < 2 {
        return Err(too_few());
    }

    let rule = match pairing {
        Pairing::RandomUtterances | Pairing::RandomNeutral => PairRule::Any,
        Pairing::SameActorNeutral | Pairing::SameActorContexts => PairRule::SameUnit,
        Pairing::CrossActorContexts => PairRule::SamePlotDifferentUnit,
        Pairing::CrossStoryContexts => PairRule::DifferentPlot,
        Pairing::OrigVsClean | Pairing::OrigVsRewr => unreachable!("handled above"),
    };
    let accept = |i: usize, j: usize| match rule {
        PairRule::Any => true,
        PairRule::SameUnit => unit[i] == unit[j],
        PairRule::SamePlotDifferentUnit => plot[i] == plot[j] && unit[i] != unit[j],
        PairRule::DifferentPlot => plot[i] != plot[j],
    };
    let picked = sample_index_pairs(texts.len(), &accept, pair_count, &mut rng);
    if picked.is_empty() {
        return Err(too_few());
    }
    Ok(picked.into_iter().map(|(i, j)| (texts[i].to_string(), texts[j].to_string())).collect())
}

/// Small pair spaces are enumerated outright; enumeration stays exact and
/// cheap up to this many unordered index pairs.
const ENUMERATION_LIMIT: usize = 250_000;

/// Sample up to `count` distinct unordered index pairs satisfying `accept`,
/// uniformly without replacement. Large sparse draws use rejection
/// sampling; if that stalls (acceptance rate too low) a reservoir pass over
/// the full pair stream finishes the job exactly.
fn sample_index_pairs(
    n: usize,
    accept: &dyn Fn(usize, usize) -> bool,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    if total <= ENUMERATION_LIMIT {
        let mut accepted: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if accept(i, j) {
                    accepted.push((i, j));
                }
            }
        }
        util::shuffle(&mut accepted, rng);
        accepted.truncate(count);
        return accepted;
    }

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut picked: Vec<(usize, usize)> = Vec::new();
    let cap = count.saturating_mul(40).saturating_add(100_000);
    let mut attempts = 0usize;
    while picked.len() < count && attempts < cap {
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if !accept(key.0, key.1) || !seen.insert(key) {
            continue;
        }
        picked.push(key);
    }
    if picked.len() < count {
        // reservoir over every accepted pair, uniform and deterministic
        picked.clear();
        let mut streamed = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                if !accept(i, j) {
                    continue;
                }
                if picked.len() < count {
                    picked.push((i, j));
                } else {
                    let slot = rng.gen_range(0..=streamed);
                    if slot < count {
                        picked[slot] = (i, j);
                    }
                }
                streamed += 1;
            }
        }
    }
    picked
}

/// Nearest-rank percentile: the value at 1-based rank ceil(fraction·n) of
/// the ascending sort. `fraction` must lie in (0, 1].
pub fn nearest_rank_percentile(values: &[f64], fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("percentile fraction must be inside (0, 1]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // the epsilon keeps an exact product like 0.99·100 from ceiling to 100
    let rank = ((fraction * sorted.len() as f64) - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Near-duplicate pass over a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct DedupReport {
    /// Example ids kept, in id order.
    pub retained: Vec<String>,
    /// (dropped id, earlier retained id it duplicated).
    pub dropped: Vec<(String, String)>,
}

/// Drop examples whose original utterance embeds too close to an earlier
/// retained one. Greedy scan in example-id order; a candidate is dropped
/// when its similarity to any retained example strictly exceeds `cutoff`,
/// so a cutoff of 1.0 retains everything. `cutoff` must lie in (0, 1].
pub fn near_duplicate_filter(
    examples: &[DatasetExample],
    embedder: &dyn Embedder,
    cutoff: f64,
) -> Result<DedupReport> {
    if !(cutoff > 0.0 && cutoff <= 1.0) {
        return Err(Error::invalid("duplicate cutoff must be inside (0, 1]"));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| examples[a].example_id.cmp(&examples[b].example_id));
    let texts: Vec<String> = examples.iter().map(|e| e.utterance_orig.clone()).collect();
    let vectors = embedder.embed(&texts)?;

    let mut retained_indices: Vec<usize> = Vec::new();
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for &candidate in &order {
        let near = retained_indices
            .iter()
            .find(|&&kept| cosine(&vectors[candidate], &vectors[kept]) > cutoff);
        match near {
            Some(&kept) => dropped
                .push((examples[candidate].example_id.clone(), examples[kept].example_id.clone())),
            None => {
                retained_indices.push(candidate);
                retained.push(examples[candidate].example_id.clone());
            }
        }
    }
    Ok(DedupReport { retained, dropped })
}

/// Similarity graph over example utterances plus its community structure.
#[derive(Debug, Clone, Serialize)]
pub struct TopicGraph {
    /// Example ids, dataset order; indices below refer to this list.
    pub nodes: Vec<String>,
    /// Undirected edges (i, j, similarity) with i < j.
    pub edges: Vec<(usize, usize, f64)>,
    /// Community id per node, compact and first-appearance ordered.
    pub communities: Vec<usize>,
    pub modularity: f64,
    pub phase_modularities: Vec<f64>,
}

impl TopicGraph {
    pub fn community_count(&self) -> usize {
        self.communities.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// (community id, size) sorted by descending size, then id.
    pub fn community_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![0usize; self.community_count()];
        for &c in &self.communities {
            sizes[c] += 1;
        }
        let mut pairs: Vec<(usize, usize)> = sizes.into_iter().enumerate().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        pairs
    }

    /// First few member ids of a community, for manual labeling.
    pub fn exemplars(&self, community: usize, max: usize) -> Vec<&str> {
        self.nodes
            .iter()
            .zip(&self.communities)
            .filter(|(_, &c)| c == community)
            .take(max)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Human-readable digest of the largest communities.
    pub fn render_summary(&self, top: usize, exemplars_per: usize) -> String {
        let mut out = format!(
            "{} nodes, {} edges, {} communities, modularity {:.4}\n",
            self.nodes.len(),
            self.edges.len(),
            self.community_count(),
            self.modularity
        );
        for (community, size) in self.community_sizes().into_iter().take(top) {
            let ids = self.exemplars(community, exemplars_per).join(", ");
            out.push_str(&format!("community {community}: {size} examples ({ids})\n"));
        }
        out
    }
}

/// Connect examples whose utterance embeddings exceed `edge_threshold`
/// (strictly) and detect communities. The threshold must lie strictly
/// inside (0, 1) and at least two examples are required.
pub fn build_topic_graph(
    examples: &[DatasetExample],
    embedder: &dyn Embedder,
    edge_threshold: f64,
) -> Result<TopicGraph> {
    if !(edge_threshold > 0.0 && edge_threshold < 1.0) {
        return Err(Error::invalid("edge threshold must be inside (0, 1)"));
    }
    if examples.len() < 2 {
        return Err(Error::invalid("topic graph needs at least two examples"));
    }
    let texts: Vec<String> = examples.iter().map(|e| e.utterance_orig.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let mut edges = Vec::new();
    for i in 0..examples.len() {
        for j in i + 1..examples.len() {
            let similarity = cosine(&vectors[i], &vectors[j]);
            if similarity > edge_threshold {
                edges.push((i, j, similarity));
            }
        }
    }
    let plain: Vec<(usize, usize)> = edges.iter().map(|&(i, j, _)| (i, j)).collect();
    let detected = community::detect_communities(examples.len(), &plain);
    Ok(TopicGraph {
        nodes: examples.iter().map(|e| e.example_id.clone()).collect(),
        edges,
        communities: detected.assignment,
        modularity: detected.modularity,
        phase_modularities: detected.phase_modularities,
    })
}
