//! Access to the generation endpoint.
//!
//! # Architecture
//!
//! A [`Gateway`] wraps one [`ChatBackend`] (HTTP or mock) and enforces the
//! cross-cutting policies the backends should not have to care about: a
//! global bounded-concurrency semaphore, retries with exponential backoff,
//! and call accounting. Requests carry exactly one user turn; decoding is
//! always greedy (temperature 0) with a configurable repetition penalty and
//! a per-stage new-token budget.
//!
//! # Error handling
//!
//! Backends distinguish transport-class failures ([`Error::Gateway`]), which
//! are retried, from protocol-shape failures ([`Error::Protocol`]), which are
//! not. After the retry budget is exhausted the returned error carries the
//! total attempt count.

pub mod embed;
pub mod http;
pub mod mock;

use crate::error::{Error, Result};
use crate::stage::Stage;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Decoding parameters for one request. Greedy decoding is fixed; only the
/// penalty and the token budget vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub stage: Stage,
    pub max_new_tokens: u32,
    pub repetition_penalty: f64,
}

impl GenerationParams {
    /// Stage defaults: penalty 1.03 and the stage's token budget.
    pub fn for_stage(stage: Stage) -> GenerationParams {
        GenerationParams {
            stage,
            max_new_tokens: stage.default_max_new_tokens(),
            repetition_penalty: 1.03,
        }
    }
}

/// A single-turn chat request: one user message, nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub params: GenerationParams,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, params: GenerationParams) -> ChatRequest {
        ChatRequest { prompt: prompt.into(), params }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub text: String,
    pub usage: TokenUsage,
    pub latency: Duration,
}

/// One backend behind the gateway. Implementations must be callable from
/// many threads at once.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply>;
}

/// Retry budget for transport failures. `retries` excludes the first try, so
/// the error attempt count is `retries + 1` when everything fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.backoff_base
            .checked_mul(factor)
            .map(|d| d.min(self.backoff_cap))
            .unwrap_or(self.backoff_cap)
    }
}

/// Counting semaphore (Mutex + Condvar). Not fair; the pipeline's work units
/// are homogeneous so fairness does not matter here.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
    }

    fn release(&self) {
        let mut permits = self.permits.lock().unwrap();
        *permits += 1;
        self.cv.notify_one();
    }
}

/// The concurrency- and retry-enforcing wrapper around a backend.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    semaphore: Semaphore,
    limit: usize,
    retry: RetryPolicy,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    calls: AtomicUsize,
}

impl Gateway {
    /// `limit` is the global in-flight bound; zero is rejected.
    pub fn new(backend: Box<dyn ChatBackend>, limit: usize, retry: RetryPolicy) -> Result<Gateway> {
        if limit == 0 {
            return Err(Error::invalid("concurrency limit must be at least 1"));
        }
        Ok(Gateway {
            backend,
            semaphore: Semaphore::new(limit),
            limit,
            retry,
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        })
    }

    /// Complete one request, holding a concurrency permit across all retry
    /// attempts so the in-flight bound covers retries too.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatReply> {
        self.semaphore.acquire();
        let current = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(current, Ordering::SeqCst);
        let start = Instant::now();
        let result = self.complete_with_retries(request);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.semaphore.release();
        result.map(|mut reply| {
            reply.latency = start.elapsed();
            reply
        })
    }

    fn complete_with_retries(&self, request: &ChatRequest) -> Result<ChatReply> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(request) {
                Ok(reply) => return Ok(reply),
                Err(Error::Gateway { detail, .. }) => {
                    if attempts > self.retry.retries {
                        return Err(Error::Gateway { attempts, detail });
                    }
                    log::warn!(
                        "gateway attempt {attempts} failed ({detail}); backing off before retry"
                    );
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
                Err(other) => return Err(other),
            }
        }
    }

    pub fn concurrency_limit(&self) -> usize {
        self.limit
    }

    /// Gauge: requests currently inside a backend call.
    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    /// Gauge high-water mark since construction.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    /// Backend invocations made, retries included.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
