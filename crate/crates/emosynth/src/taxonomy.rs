//! The 28-class emotion taxonomy.
//!
//! Structure (class list, marker groups, polarities) is fixed in code because
//! the rest of the toolkit hangs invariants off it: the 27 non-neutral classes
//! partition into six marker groups sized 5+3+3+5+3+8, and polarity counts are
//! always 11 negative / 5 ambiguous / 11 positive. Free-text parts (per-class
//! definitions used in prompts, the mapping for out-of-taxonomy labels) load
//! from one declarative TOML file; a default is shipped with the crate and a
//! user file can override definitions or extend the mapping.

use crate::error::{Error, Result};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Shipped definitions-and-mapping config, embedded so the toolkit works
/// without any installed data files.
pub const DEFAULT_CONFIG: &str = include_str!("../assets/taxonomy.toml");

/// Sentiment polarity of a class, derived from its marker group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Negative,
    Ambiguous,
    Positive,
    Neutral,
}

impl Polarity {
    pub fn name(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Ambiguous => "ambiguous",
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
        }
    }
}

macro_rules! emotion_classes {
    ($(($variant:ident, $name:literal, $idx:literal)),* $(,)?) => {
        /// One of the 28 emotion classes. Order is canonical: the 27 emotions
        /// alphabetically, then `neutral` last. Histograms and prediction-file
        /// columns follow this order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum EmotionClass {
            $($variant = $idx,)*
        }

        impl EmotionClass {
            pub const ALL: [EmotionClass; 28] = [$(EmotionClass::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(EmotionClass::$variant => $name,)*
                }
            }

            /// Case-insensitive, whitespace-trimmed lookup.
            pub fn from_name(name: &str) -> Option<EmotionClass> {
                let name = name.trim().to_lowercase();
                match name.as_str() {
                    $($name => Some(EmotionClass::$variant),)*
                    _ => None,
                }
            }

            /// Position in the canonical order (also the prediction-file column).
            pub fn index(self) -> usize {
                self as usize
            }
        }
    };
}

emotion_classes![
    (Admiration, "admiration", 0),
    (Amusement, "amusement", 1),
    (Anger, "anger", 2),
    (Annoyance, "annoyance", 3),
    (Approval, "approval", 4),
    (Caring, "caring", 5),
    (Confusion, "confusion", 6),
    (Curiosity, "curiosity", 7),
    (Desire, "desire", 8),
    (Disappointment, "disappointment", 9),
    (Disapproval, "disapproval", 10),
    (Disgust, "disgust", 11),
    (Embarrassment, "embarrassment", 12),
    (Excitement, "excitement", 13),
    (Fear, "fear", 14),
    (Gratitude, "gratitude", 15),
    (Grief, "grief", 16),
    (Joy, "joy", 17),
    (Love, "love", 18),
    (Nervousness, "nervousness", 19),
    (Optimism, "optimism", 20),
    (Pride, "pride", 21),
    (Realization, "realization", 22),
    (Relief, "relief", 23),
    (Remorse, "remorse", 24),
    (Sadness, "sadness", 25),
    (Surprise, "surprise", 26),
    (Neutral, "neutral", 27),
];

impl EmotionClass {
    pub fn polarity(self) -> Polarity {
        match self.marker_group() {
            Some(group) => group.polarity(),
            None => Polarity::Neutral,
        }
    }

    /// The marker group containing this class; `None` for neutral, which
    /// stands alone outside the six groups.
    pub fn marker_group(self) -> Option<MarkerGroup> {
        MarkerGroup::ALL.into_iter().find(|g| g.members().contains(&self))
    }

    pub fn is_neutral(self) -> bool {
        self == EmotionClass::Neutral
    }
}

impl fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for EmotionClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EmotionClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        EmotionClass::from_name(&name)
            .ok_or_else(|| D::Error::custom(format!("unknown emotion class: {name}")))
    }
}

/// One of the six marker groups partitioning the non-neutral classes.
/// Groups are named after a representative member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerGroup {
    Anger,
    Sadness,
    Fear,
    Surprise,
    Optimism,
    Joy,
}

impl MarkerGroup {
    pub const ALL: [MarkerGroup; 6] = [
        MarkerGroup::Anger,
        MarkerGroup::Sadness,
        MarkerGroup::Fear,
        MarkerGroup::Surprise,
        MarkerGroup::Optimism,
        MarkerGroup::Joy,
    ];

    pub fn members(self) -> &'static [EmotionClass] {
        use EmotionClass::*;
        match self {
            MarkerGroup::Anger => &[Anger, Disappointment, Annoyance, Disapproval, Disgust],
            MarkerGroup::Sadness => &[Sadness, Grief, Remorse],
            MarkerGroup::Fear => &[Fear, Nervousness, Embarrassment],
            MarkerGroup::Surprise => &[Surprise, Confusion, Curiosity, Amusement, Realization],
            MarkerGroup::Optimism => &[Optimism, Desire, Caring],
            MarkerGroup::Joy => {
                &[Excitement, Admiration, Joy, Pride, Love, Relief, Approval, Gratitude]
            }
        }
    }

    pub fn polarity(self) -> Polarity {
        match self {
            MarkerGroup::Anger | MarkerGroup::Sadness | MarkerGroup::Fear => Polarity::Negative,
            MarkerGroup::Surprise => Polarity::Ambiguous,
            MarkerGroup::Optimism | MarkerGroup::Joy => Polarity::Positive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MarkerGroup::Anger => "anger_group",
            MarkerGroup::Sadness => "sadness_group",
            MarkerGroup::Fear => "fear_group",
            MarkerGroup::Surprise => "surprise_group",
            MarkerGroup::Optimism => "optimism_group",
            MarkerGroup::Joy => "joy_group",
        }
    }

    pub fn index(self) -> usize {
        MarkerGroup::ALL.iter().position(|g| *g == self).unwrap()
    }
}

impl fmt::Display for MarkerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Marker group of a non-neutral class. Neutral has no group and is rejected.
pub fn group_of(class: EmotionClass) -> Result<MarkerGroup> {
    class.marker_group().ok_or_else(|| Error::invalid("neutral belongs to no marker group"))
}

/// Where a raw label string lands after normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelOutcome {
    /// In taxonomy, either directly or through the mapping.
    Class(EmotionClass),
    /// Explicitly mapped to nothing (e.g. states that are not emotions).
    Dropped,
    /// Absent from both the taxonomy and the mapping. Kept for audit.
    Unknown,
}

/// A raw label plus its normalization outcome. The raw spelling is preserved
/// so releases can carry pre-mapping labels next to the canonical ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedLabel {
    pub raw: String,
    pub outcome: LabelOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum MappingTarget {
    Class(EmotionClass),
    Drop,
}

/// Case-insensitive mapping from out-of-taxonomy labels to classes or to an
/// explicit drop. Extensible from config; the shipped entries cover the
/// frequent aliases plus two non-emotion states that are dropped outright.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMapping {
    entries: BTreeMap<String, MappingTarget>,
}

impl LabelMapping {
    /// Register an alias. `target` is a class name, or the literal `DROP`.
    pub fn insert(&mut self, alias: &str, target: &str) -> Result<()> {
        let alias = alias.trim().to_lowercase();
        if alias.is_empty() {
            return Err(Error::invalid("mapping alias must be non-empty"));
        }
        let target = if target.trim() == "DROP" {
            MappingTarget::Drop
        } else {
            let class = EmotionClass::from_name(target).ok_or_else(|| {
                Error::invalid(format!(
                    "mapping target for {alias:?} is neither a class nor DROP: {target:?}"
                ))
            })?;
            MappingTarget::Class(class)
        };
        self.entries.insert(alias, target);
        Ok(())
    }

    fn lookup(&self, normalized: &str) -> Option<&MappingTarget> {
        self.entries.get(normalized)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    definitions: BTreeMap<String, String>,
    #[serde(default)]
    mapping: BTreeMap<String, String>,
}

/// Class definitions plus the label mapping. Definitions feed prompt
/// construction; the mapping feeds label normalization.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    definitions: BTreeMap<EmotionClass, String>,
    mapping: LabelMapping,
}

impl Taxonomy {
    /// The shipped configuration.
    pub fn builtin() -> Taxonomy {
        Taxonomy::from_config_str(DEFAULT_CONFIG).expect("shipped taxonomy config must be valid")
    }

    /// Parse a config. Definitions must cover all 28 classes once the
    /// defaults are applied; when called on a user file the shipped defaults
    /// are merged in first via [`Taxonomy::with_overrides`].
    pub fn from_config_str(text: &str) -> Result<Taxonomy> {
        let file: ConfigFile = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("taxonomy config did not parse: {e}")))?;
        let mut definitions = BTreeMap::new();
        for (name, definition) in &file.definitions {
            let class = EmotionClass::from_name(name)
                .ok_or_else(|| Error::invalid(format!("definition for unknown class: {name:?}")))?;
            if definition.trim().is_empty() {
                return Err(Error::invalid(format!("empty definition for {name}")));
            }
            definitions.insert(class, definition.trim().to_string());
        }
        let mut mapping = LabelMapping::default();
        for (alias, target) in &file.mapping {
            mapping.insert(alias, target)?;
        }
        for class in EmotionClass::ALL {
            if !definitions.contains_key(&class) {
                return Err(Error::invalid(format!(
                    "taxonomy config is missing a definition for {}",
                    class.name()
                )));
            }
        }
        Ok(Taxonomy { definitions, mapping })
    }

    /// Load a user config file on top of the shipped defaults: definitions
    /// replace per class, mapping entries add or replace per alias.
    pub fn from_config_file(path: &Path) -> Result<Taxonomy> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Taxonomy::builtin().with_overrides(&text)
    }

    fn with_overrides(mut self, text: &str) -> Result<Taxonomy> {
        let file: ConfigFile = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("taxonomy config did not parse: {e}")))?;
        for (name, definition) in &file.definitions {
            let class = EmotionClass::from_name(name)
                .ok_or_else(|| Error::invalid(format!("definition for unknown class: {name:?}")))?;
            if definition.trim().is_empty() {
                return Err(Error::invalid(format!("empty definition for {name}")));
            }
            self.definitions.insert(class, definition.trim().to_string());
        }
        for (alias, target) in &file.mapping {
            self.mapping.insert(alias, target)?;
        }
        Ok(self)
    }

    pub fn definition(&self, class: EmotionClass) -> &str {
        &self.definitions[&class]
    }

    pub fn mapping(&self) -> &LabelMapping {
        &self.mapping
    }

    /// `name: definition` lines in canonical order, as inlined into prompts.
    pub fn definitions_block(&self, include_neutral: bool) -> String {
        let mut out = String::new();
        for class in EmotionClass::ALL {
            if class.is_neutral() && !include_neutral {
                continue;
            }
            out.push_str(class.name());
            out.push_str(": ");
            out.push_str(self.definition(class));
            out.push('\n');
        }
        out
    }

    /// Normalize one raw label: trim, case-fold, then resolve through the
    /// class list and the mapping. Unknown labels are reported, not dropped.
    /// Normalization is idempotent because class names map to themselves.
    pub fn normalize_label(&self, raw: &str) -> Result<NormalizedLabel> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(Error::invalid("label must be non-empty"));
        }
        let folded = trimmed.to_lowercase();
        let outcome = if let Some(class) = EmotionClass::from_name(&folded) {
            LabelOutcome::Class(class)
        } else {
            match self.mapping.lookup(&folded) {
                Some(MappingTarget::Class(class)) => LabelOutcome::Class(*class),
                Some(MappingTarget::Drop) => LabelOutcome::Dropped,
                None => LabelOutcome::Unknown,
            }
        };
        Ok(NormalizedLabel { raw: raw.to_string(), outcome })
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::builtin()
    }
}
