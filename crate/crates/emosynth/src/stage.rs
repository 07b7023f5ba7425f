//! The six synthesis stages and their per-stage generation defaults.

use serde::{Deserialize, Serialize};
use std::fmt;

/// One step of the synthesis chain, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Extract the character list from a plot.
    Actors,
    /// Generate the 8 emotional + 2 neutral thinking-aloud drafts for an actor.
    Utterances,
    /// Score a draft with up to five weighted emotion labels.
    SoftLabels,
    /// Generate the narrative context leading up to a draft.
    Context,
    /// Remove emotion-spelling clauses from a generated context.
    Cleaning,
    /// Rewrite a draft so its emotions are ambiguous without the context.
    Rewriting,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Actors,
        Stage::Utterances,
        Stage::SoftLabels,
        Stage::Context,
        Stage::Cleaning,
        Stage::Rewriting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Actors => "actors",
            Stage::Utterances => "utterances",
            Stage::SoftLabels => "soft_labels",
            Stage::Context => "context",
            Stage::Cleaning => "cleaning",
            Stage::Rewriting => "rewriting",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        let name = name.trim().to_ascii_lowercase();
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Generation budget used for this stage unless overridden by config.
    pub fn default_max_new_tokens(self) -> u32 {
        match self {
            Stage::Actors => 300,
            Stage::Utterances => 500,
            Stage::SoftLabels => 100,
            Stage::Context => 300,
            Stage::Cleaning => 300,
            Stage::Rewriting => 300,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for stage in Stage::ALL {
            assert_eq!(Stage::from_name(stage.name()), Some(stage));
        }
        assert_eq!(Stage::from_name(" Soft_Labels "), Some(Stage::SoftLabels));
        assert_eq!(Stage::from_name("bogus"), None);
    }

    #[test]
    fn token_budgets_match_stage_scale() {
        assert_eq!(Stage::Utterances.default_max_new_tokens(), 500);
        assert_eq!(Stage::SoftLabels.default_max_new_tokens(), 100);
        for stage in [Stage::Actors, Stage::Context, Stage::Cleaning, Stage::Rewriting] {
            assert_eq!(stage.default_max_new_tokens(), 300);
        }
    }
}
