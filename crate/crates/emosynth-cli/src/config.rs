//! Run configuration: TOML file, command-line overrides, validation, and
//! the content hash that names a run directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use emosynth::gateway::embed::{Embedder, HashEmbedder};
use emosynth::gateway::http::{EndpointConfig, HttpChat, HttpEmbedder};
use emosynth::gateway::mock::MockChat;
use emosynth::gateway::{ChatBackend, Gateway, RetryPolicy};
use emosynth::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatBackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackendKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSection {
    pub backend: ChatBackendKind,
    /// Mock backend: directory of canned replies keyed by prompt hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Mock backend: a missing canned reply is an error instead of a
    /// synthesized reply.
    pub fixtures_only: bool,
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub supports_repetition_penalty: bool,
    pub timeout_secs: u64,
}

impl Default for ChatSection {
    fn default() -> Self {
        let endpoint = EndpointConfig::default();
        ChatSection {
            backend: ChatBackendKind::Mock,
            fixtures: None,
            fixtures_only: false,
            base_url: endpoint.base_url,
            model: endpoint.model,
            api_key_env: endpoint.api_key_env,
            supports_repetition_penalty: endpoint.supports_repetition_penalty,
            timeout_secs: endpoint.timeout.as_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsSection {
    pub backend: EmbeddingBackendKind,
    /// Hash backend: vector width.
    pub dim: usize,
    /// Hash backend: projection seed.
    pub seed: u64,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        let endpoint = EndpointConfig::default();
        EmbeddingsSection {
            backend: EmbeddingBackendKind::Hash,
            dim: 256,
            seed: 17,
            base_url: endpoint.base_url,
            model: endpoint.model,
            api_key_env: endpoint.api_key_env,
            timeout_secs: endpoint.timeout.as_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub concurrency: usize,
    pub expressiveness_threshold: f64,
    pub strict_threshold: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection { concurrency: 4, expressiveness_threshold: 0.3, strict_threshold: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Pairs sampled per similarity pairing.
    pub pair_count: usize,
    /// Cosine threshold for topic-graph edges.
    pub edge_threshold: f64,
    /// Cosine cutoff for the near-duplicate filter.
    pub dedup_cutoff: f64,
    /// Marker extraction thresholds.
    pub removal_threshold: f64,
    pub cooccur_threshold: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            pair_count: 1000,
            edge_threshold: 0.85,
            dedup_cutoff: 0.95,
            removal_threshold: 0.6,
            cooccur_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub split: u64,
    pub sample: u64,
    pub analysis: u64,
    pub humaneval: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection { split: 17, sample: 17, analysis: 17, humaneval: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Parent of run directories.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Prompt template overrides, one `<stage>.txt` per overridden stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
}

/// The whole configuration file. Every field has a default, so an empty
/// file (or none at all) is valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chat: ChatSection,
    pub embeddings: EmbeddingsSection,
    pub pipeline: PipelineSection,
    pub analysis: AnalysisSection,
    pub seeds: SeedsSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {} did not parse: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pipeline.concurrency == 0 {
            return Err(Error::invalid("pipeline.concurrency must be at least 1"));
        }
        let unit = |name: &str, value: f64| {
            if (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be within [0, 1], got {value}")))
            }
        };
        unit("pipeline.expressiveness_threshold", self.pipeline.expressiveness_threshold)?;
        unit("analysis.edge_threshold", self.analysis.edge_threshold)?;
        unit("analysis.dedup_cutoff", self.analysis.dedup_cutoff)?;
        unit("analysis.removal_threshold", self.analysis.removal_threshold)?;
        unit("analysis.cooccur_threshold", self.analysis.cooccur_threshold)?;
        if self.embeddings.dim == 0 {
            return Err(Error::invalid("embeddings.dim must be at least 1"));
        }
        Ok(())
    }

    /// Identity of a synthesis run: everything that changes what the run
    /// produces. Execution controls (stage selection, concurrency, resume)
    /// stay out so partial runs of one experiment share a directory.
    pub fn run_hash(&self, corpus: &Path) -> String {
        let mut hasher = Sha256::new();
        let mut push = |key: &str, value: &str| {
            hasher.update(key.as_bytes());
            hasher.update([0x1f]);
            hasher.update(value.as_bytes());
            hasher.update([0x1e]);
        };
        push("corpus", &corpus.to_string_lossy());
        let backend = match self.chat.backend {
            ChatBackendKind::Mock => "mock",
            ChatBackendKind::Http => "http",
        };
        push("chat.backend", backend);
        match self.chat.backend {
            ChatBackendKind::Mock => {
                let fixtures = self
                    .chat
                    .fixtures
                    .as_ref()
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_default();
                push("chat.fixtures", &fixtures);
                push("chat.fixtures_only", &self.chat.fixtures_only.to_string());
            }
            ChatBackendKind::Http => {
                push("chat.base_url", &self.chat.base_url);
                push("chat.model", &self.chat.model);
            }
        }
        push(
            "pipeline.expressiveness_threshold",
            &format!("{}", self.pipeline.expressiveness_threshold),
        );
        push("pipeline.strict_threshold", &self.pipeline.strict_threshold.to_string());
        let prompts = self
            .paths
            .prompts_dir
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        push("paths.prompts_dir", &prompts);
        let digest = hasher.finalize();
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_gateway(&self) -> Result<Gateway> {
        let backend: Box<dyn ChatBackend> = match self.chat.backend {
            ChatBackendKind::Mock => {
                let mock = match (&self.chat.fixtures, self.chat.fixtures_only) {
                    (Some(dir), true) => MockChat::fixtures_only(dir),
                    (Some(dir), false) => MockChat::with_fixtures(dir),
                    (None, true) => {
                        return Err(Error::invalid(
                            "chat.fixtures_only requires chat.fixtures to be set",
                        ))
                    }
                    (None, false) => MockChat::new(),
                };
                Box::new(mock)
            }
            ChatBackendKind::Http => Box::new(HttpChat::new(self.chat_endpoint())?),
        };
        Gateway::new(backend, self.pipeline.concurrency, RetryPolicy::default())
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        match self.embeddings.backend {
            EmbeddingBackendKind::Hash => {
                Ok(Box::new(HashEmbedder::new(self.embeddings.dim, self.embeddings.seed)))
            }
            EmbeddingBackendKind::Http => {
                let endpoint = EndpointConfig {
                    base_url: self.embeddings.base_url.clone(),
                    model: self.embeddings.model.clone(),
                    api_key_env: self.embeddings.api_key_env.clone(),
                    supports_repetition_penalty: false,
                    timeout: Duration::from_secs(self.embeddings.timeout_secs),
                };
                Ok(Box::new(HttpEmbedder::new(endpoint)?))
            }
        }
    }

    fn chat_endpoint(&self) -> EndpointConfig {
        EndpointConfig {
            base_url: self.chat.base_url.clone(),
            model: self.chat.model.clone(),
            api_key_env: self.chat.api_key_env.clone(),
            supports_repetition_penalty: self.chat.supports_repetition_penalty,
            timeout: Duration::from_secs(self.chat.timeout_secs),
        }
    }
}
