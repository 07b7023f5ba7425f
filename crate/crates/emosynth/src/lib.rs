//! emosynth: a resumable synthesis pipeline and evaluation toolkit for
//! fine-grained, context-aware emotion classification datasets.
//!
//! The library is organized around the data flow:
//!
//! * [`corpus`] ingests and samples narrative plots;
//! * [`gateway`] talks to a chat-completions endpoint (or a deterministic
//!   mock) under a global concurrency bound with retries;
//! * [`prompts`] and [`extract`] turn stage templates into prompts and
//!   replies back into structured values;
//! * [`pipeline`] chains the six stages per (plot, actor, draft) unit and
//!   journals every completed step so runs resume without repeating work;
//! * [`dataset`] assembles journals into examples, splits and summarizes;
//! * [`analytics`] measures similarity structure, topic communities,
//!   emotional markers and near-duplicates;
//! * [`evaluator`] scores multi-label predictions and picks decision
//!   boundaries;
//! * [`humaneval`] generates and scores the human annotation protocol.

pub mod analytics;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod extract;
pub mod gateway;
pub mod humaneval;
pub mod journal;
pub mod pipeline;
pub mod prompts;
pub mod stage;
pub mod taxonomy;
mod util;

pub use error::{Error, Result};
pub use stage::Stage;
