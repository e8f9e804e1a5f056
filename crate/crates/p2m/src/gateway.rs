//! Batched LLM requests with adaptive concurrency.
//!
//! A [`Gateway`] admits a request only while fewer than the current limit are
//! in flight. The limit follows AIMD: a rate-limit reply halves it (never
//! below `min_concurrency`), and every `success_window_for_increase`
//! consecutive successes add one (never above `max_concurrency`). Failed
//! attempts release their slot, sleep with full-jitter exponential backoff,
//! and queue again.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use futures::future::join_all;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::backend::{BackendError, CompletionBackend, ErrorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
}

impl CompletionRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>, temperature: f64, max_output_tokens: u32) -> Self {
        Self {
            prompt_text: prompt.into(),
            temperature,
            max_output_tokens,
            request_tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub request_tag: String,
    pub outcome: Result<String, ErrorKind>,
    pub attempts: u32,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThrottlePolicy {
    pub initial_concurrency: usize,
    pub min_concurrency: usize,
    pub max_concurrency: usize,
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub request_timeout_ms: u64,
    pub success_window_for_increase: usize,
    pub jitter_seed: u64,
}

impl Default for ThrottlePolicy {
    fn default() -> Self {
        Self {
            initial_concurrency: 8,
            min_concurrency: 1,
            max_concurrency: 32,
            max_retries: 5,
            base_backoff_ms: 1_000,
            max_backoff_ms: 60_000,
            request_timeout_ms: 60_000,
            success_window_for_increase: 10,
            jitter_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid throttle policy: {0}")]
pub struct PolicyError(String);

impl ThrottlePolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.min_concurrency == 0 {
            return Err(PolicyError("min_concurrency must be at least 1".into()));
        }
        if !(self.min_concurrency <= self.initial_concurrency && self.initial_concurrency <= self.max_concurrency) {
            return Err(PolicyError(format!(
                "need min ({}) <= initial ({}) <= max ({})",
                self.min_concurrency, self.initial_concurrency, self.max_concurrency
            )));
        }
        if self.base_backoff_ms == 0 || self.request_timeout_ms == 0 || self.max_backoff_ms == 0 {
            return Err(PolicyError("backoff and timeout must be positive".into()));
        }
        if self.success_window_for_increase == 0 {
            return Err(PolicyError("success_window_for_increase must be positive".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    /// Upper bound of the jittered sleep before retry number `retry` (1-based).
    pub fn backoff_cap(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// One change of the concurrency limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitChange {
    Decrease { from: usize, to: usize },
    Increase { from: usize, to: usize },
}

#[derive(Debug)]
struct State {
    limit: usize,
    in_flight: usize,
    streak: usize,
    peak_in_flight: usize,
    changes: Vec<LimitChange>,
}

/// Shared, internally synchronized request scheduler.
#[derive(Debug)]
pub struct Gateway {
    policy: ThrottlePolicy,
    state: Mutex<State>,
    freed: Notify,
    jitter: Mutex<ChaCha8Rng>,
}

impl Gateway {
    pub fn new(policy: ThrottlePolicy) -> Result<Self, PolicyError> {
        policy.validate()?;
        Ok(Self {
            state: Mutex::new(State {
                limit: policy.initial_concurrency,
                in_flight: 0,
                streak: 0,
                peak_in_flight: 0,
                changes: Vec::new(),
            }),
            freed: Notify::new(),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(policy.jitter_seed)),
            policy,
        })
    }

    pub fn policy(&self) -> &ThrottlePolicy {
        &self.policy
    }

    pub fn current_limit(&self) -> usize {
        self.state.lock().unwrap().limit
    }

    /// Highest number of simultaneously admitted requests so far.
    pub fn peak_in_flight(&self) -> usize {
        self.state.lock().unwrap().peak_in_flight
    }

    /// Every limit change so far, in order.
    pub fn limit_changes(&self) -> Vec<LimitChange> {
        self.state.lock().unwrap().changes.clone()
    }

    fn try_acquire(&self) -> bool {
        let mut s = self.state.lock().unwrap();
        if s.in_flight < s.limit {
            s.in_flight += 1;
            s.peak_in_flight = s.peak_in_flight.max(s.in_flight);
            true
        } else {
            false
        }
    }

    async fn acquire(&self) {
        loop {
            let notified = self.freed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.try_acquire() {
                return;
            }
            notified.await;
        }
    }

    fn release(&self, outcome: Option<ErrorKind>) {
        let mut guard = self.state.lock().unwrap();
        let s = &mut *guard;
        s.in_flight -= 1;
        match outcome {
            None => {
                s.streak += 1;
                if s.streak >= self.policy.success_window_for_increase {
                    s.streak = 0;
                    if s.limit < self.policy.max_concurrency {
                        let from = s.limit;
                        s.limit += 1;
                        s.changes.push(LimitChange::Increase { from, to: s.limit });
                    }
                }
            }
            Some(ErrorKind::RateLimited) => {
                s.streak = 0;
                let from = s.limit;
                s.limit = (s.limit / 2).max(self.policy.min_concurrency);
                s.changes.push(LimitChange::Decrease { from, to: s.limit });
            }
            Some(_) => s.streak = 0,
        }
        drop(guard);
        self.freed.notify_waiters();
    }

    fn backoff(&self, retry: u32) -> Duration {
        let cap = self.policy.backoff_cap(retry).as_millis() as u64;
        Duration::from_millis(self.jitter.lock().unwrap().random_range(0..=cap))
    }

    async fn run_one(&self, request: &CompletionRequest, backend: &dyn CompletionBackend) -> CompletionResult {
        let started = Instant::now();
        let max_attempts = self.policy.max_retries + 1;
        let mut attempts = 0;
        let outcome = loop {
            attempts += 1;
            self.acquire().await;
            let reply = tokio::time::timeout(
                self.policy.request_timeout(),
                backend.complete(&request.prompt_text, request.temperature, request.max_output_tokens),
            )
            .await
            .unwrap_or_else(|_| Err(BackendError::from(ErrorKind::Timeout)));
            let kind = reply.as_ref().err().map(|e| e.kind);
            self.release(kind);
            match reply {
                Ok(text) => break Ok(text),
                Err(e) if e.kind.is_retryable() && attempts < max_attempts => {
                    tracing::debug!(tag = %request.request_tag, attempt = attempts, error = %e, "retrying");
                    tokio::time::sleep(self.backoff(attempts)).await;
                }
                Err(e) => break Err(e.kind),
            }
        };
        CompletionResult {
            request_tag: request.request_tag.clone(),
            outcome,
            attempts,
            latency: started.elapsed(),
        }
    }

    /// Sends every request and returns one result per request, in request
    /// order. Individual failures are reported per result; the batch as a
    /// whole never fails.
    pub async fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        backend: &dyn CompletionBackend,
    ) -> Vec<CompletionResult> {
        join_all(requests.iter().map(|r| self.run_one(r, backend))).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_validation() {
        assert!(ThrottlePolicy::default().validate().is_ok());
        let bad = ThrottlePolicy { initial_concurrency: 40, ..ThrottlePolicy::default() };
        assert!(bad.validate().is_err());
        let bad = ThrottlePolicy { min_concurrency: 0, initial_concurrency: 0, ..ThrottlePolicy::default() };
        assert!(bad.validate().is_err());
        let bad = ThrottlePolicy { request_timeout_ms: 0, ..ThrottlePolicy::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn backoff_doubles_up_to_cap() {
        let p = ThrottlePolicy::default();
        assert_eq!(p.backoff_cap(1), Duration::from_secs(1));
        assert_eq!(p.backoff_cap(3), Duration::from_secs(4));
        assert_eq!(p.backoff_cap(40), Duration::from_secs(60));
    }

    #[test]
    fn aimd_limit_updates() {
        let g = Gateway::new(ThrottlePolicy { success_window_for_increase: 2, ..ThrottlePolicy::default() }).unwrap();
        for _ in 0..4 {
            assert!(g.try_acquire());
            g.release(Some(ErrorKind::RateLimited));
        }
        assert_eq!(g.current_limit(), 1);
        for _ in 0..4 {
            assert!(g.try_acquire());
            g.release(None);
        }
        assert_eq!(g.current_limit(), 3);
        assert_eq!(
            g.limit_changes(),
            vec![
                LimitChange::Decrease { from: 8, to: 4 },
                LimitChange::Decrease { from: 4, to: 2 },
                LimitChange::Decrease { from: 2, to: 1 },
                LimitChange::Decrease { from: 1, to: 1 },
                LimitChange::Increase { from: 1, to: 2 },
                LimitChange::Increase { from: 2, to: 3 },
            ]
        );
    }
}
