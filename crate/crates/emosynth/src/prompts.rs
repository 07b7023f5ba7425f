//! Prompt templates for the six stages.
//!
//! Templates are plain text files with angle-bracket placeholders. The
//! shipped set is embedded; a directory of `<stage>.txt` files can override
//! any subset. Each stage's template must contain the placeholders that
//! stage substitutes, which is validated at load time so a typo in a user
//! template fails fast instead of producing silently broken prompts.

use crate::corpus::PlotRecord;
use crate::error::{Error, Result};
use crate::stage::Stage;
use crate::taxonomy::Taxonomy;
use std::path::Path;

pub const PLOT: &str = "<text of the plot>";
pub const EMOTIONS_WITH_DEFINITIONS: &str = "<emotions and their definitions>";
pub const CLASSES_WITH_DEFINITIONS: &str = "<classes (incl. neutral) and their definitions>";
pub const ACTOR: &str = "<extracted actor>";
pub const UTTERANCE: &str = "<utterance>";
pub const PRIMARY_EMOTION: &str = "<primary emotion>";
pub const EMOTIONS: &str = "<emotions>";
pub const GENERATED_CONTEXT: &str = "<generated context>";
pub const CLEANED_CONTEXT: &str = "<cleaned context>";

fn required_placeholders(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Actors => &[PLOT],
        Stage::Utterances => &[PLOT, EMOTIONS_WITH_DEFINITIONS, ACTOR],
        Stage::SoftLabels => &[CLASSES_WITH_DEFINITIONS, UTTERANCE, PRIMARY_EMOTION],
        Stage::Context => &[PLOT, ACTOR, UTTERANCE, EMOTIONS],
        Stage::Cleaning => &[ACTOR, GENERATED_CONTEXT, EMOTIONS],
        Stage::Rewriting => &[CLEANED_CONTEXT, ACTOR, UTTERANCE, EMOTIONS],
    }
}

fn builtin_template(stage: Stage) -> &'static str {
    match stage {
        Stage::Actors => include_str!("../assets/prompts/actors.txt"),
        Stage::Utterances => include_str!("../assets/prompts/utterances.txt"),
        Stage::SoftLabels => include_str!("../assets/prompts/soft_labels.txt"),
        Stage::Context => include_str!("../assets/prompts/context.txt"),
        Stage::Cleaning => include_str!("../assets/prompts/cleaning.txt"),
        Stage::Rewriting => include_str!("../assets/prompts/rewriting.txt"),
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: [String; 6],
}

impl PromptSet {
    pub fn builtin() -> PromptSet {
        let templates = Stage::ALL.map(|stage| builtin_template(stage).to_string());
        PromptSet { templates }
    }

    /// Load overrides from a directory of `<stage>.txt` files. Stages with
    /// no file keep the shipped template.
    pub fn from_dir(dir: &Path) -> Result<PromptSet> {
        let mut set = PromptSet::builtin();
        for stage in Stage::ALL {
            let path = dir.join(format!("{}.txt", stage.name()));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.templates[stage_slot(stage)] = text;
            }
        }
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        for stage in Stage::ALL {
            let template = self.template(stage);
            for placeholder in required_placeholders(stage) {
                if !template.contains(placeholder) {
                    return Err(Error::invalid(format!(
                        "template for stage {stage} is missing placeholder {placeholder}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn template(&self, stage: Stage) -> &str {
        &self.templates[stage_slot(stage)]
    }

    pub fn actors_prompt(&self, plot: &PlotRecord) -> String {
        self.template(Stage::Actors).replace(PLOT, &plot.body).trim_end().to_string()
    }

    pub fn utterances_prompt(&self, taxonomy: &Taxonomy, plot: &PlotRecord, actor: &str) -> String {
        // the available list deliberately excludes neutral; the instruction
        // text itself asks for the two neutral drafts
        self.template(Stage::Utterances)
            .replace(PLOT, &plot.body)
            .replace(EMOTIONS_WITH_DEFINITIONS, taxonomy.definitions_block(false).trim_end())
            .replace(ACTOR, actor)
            .trim_end()
            .to_string()
    }

    /// The reply is anchored by ending the prompt with `1. <primary>`.
    pub fn soft_labels_prompt(
        &self,
        taxonomy: &Taxonomy,
        utterance: &str,
        primary: &str,
    ) -> String {
        self.template(Stage::SoftLabels)
            .replace(CLASSES_WITH_DEFINITIONS, taxonomy.definitions_block(true).trim_end())
            .replace(UTTERANCE, utterance)
            .replace(PRIMARY_EMOTION, primary)
            .trim_end()
            .to_string()
    }

    /// `emotions` is the comma-joined expressed-emotion list for the draft.
    pub fn context_prompt(
        &self,
        plot: &PlotRecord,
        actor: &str,
        utterance: &str,
        emotions: &str,
    ) -> String {
        self.template(Stage::Context)
            .replace(PLOT, &plot.body)
            .replace(ACTOR, actor)
            .replace(UTTERANCE, utterance)
            .replace(EMOTIONS, emotions)
            .trim_end()
            .to_string()
    }

    pub fn cleaning_prompt(&self, actor: &str, context: &str, emotions: &str) -> String {
        self.template(Stage::Cleaning)
            .replace(ACTOR, actor)
            .replace(GENERATED_CONTEXT, context)
            .replace(EMOTIONS, emotions)
            .trim_end()
            .to_string()
    }

    pub fn rewriting_prompt(
        &self,
        cleaned_context: &str,
        actor: &str,
        utterance: &str,
        emotions: &str,
    ) -> String {
        self.template(Stage::Rewriting)
            .replace(CLEANED_CONTEXT, cleaned_context)
            .replace(ACTOR, actor)
            .replace(UTTERANCE, utterance)
            .replace(EMOTIONS, emotions)
            .trim_end()
            .to_string()
    }
}

fn stage_slot(stage: Stage) -> usize {
    Stage::ALL.iter().position(|s| *s == stage).unwrap()
}
