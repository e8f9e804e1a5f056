//! Synthetic dataset generation bookkeeping.
//!
//! [`GenerationSession`] is a sans-IO driver: it plans batches of LLM
//! requests ([`GenerationSession::next_batch`]), consumes the replies
//! ([`GenerationSession::ingest`]) and finally emits one example per unique
//! input ([`GenerationSession::finish`]). Sending the requests is the
//! caller's job.
//!
//! Diversity comes from three mechanisms:
//!
//! * each prompt embeds a seeded random sample of earlier generated examples
//!   next to the user's demonstrations,
//! * sampling temperature rises linearly from `temperature_low` to
//!   `temperature_high` as unique inputs accumulate,
//! * outputs for the same (normalized) input are reduced by self-consistency:
//!   most frequent output, then shortest, then lexicographically smallest.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::json::first_balanced_object;
use crate::prompt::ParsedPrompt;
use crate::training::Example;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub target_unique_inputs: usize,
    pub examples_per_request: usize,
    /// Prior generated examples embedded in each prompt.
    pub prior_sample_size: usize,
    pub temperature_low: f64,
    pub temperature_high: f64,
    /// Total requests the session may issue.
    pub max_requests_budget: usize,
    /// Requests planned per batch.
    pub requests_per_batch: usize,
    pub max_output_tokens: u32,
    pub rng_seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            target_unique_inputs: 3000,
            examples_per_request: 5,
            prior_sample_size: 3,
            temperature_low: 0.2,
            temperature_high: 1.0,
            max_requests_budget: 1500,
            requests_per_batch: 8,
            max_output_tokens: 1024,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid generation config: {0}")]
pub struct ConfigError(pub String);

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("target_unique_inputs", self.target_unique_inputs),
            ("examples_per_request", self.examples_per_request),
            ("max_requests_budget", self.max_requests_budget),
            ("requests_per_batch", self.requests_per_batch),
            ("max_output_tokens", self.max_output_tokens as usize),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if !(self.temperature_low >= 0.0 && self.temperature_low <= self.temperature_high) {
            return Err(ConfigError(format!(
                "need 0 <= temperature_low ({}) <= temperature_high ({})",
                self.temperature_low, self.temperature_high
            )));
        }
        Ok(())
    }
}

/// Linear annealing: `low + (high - low) * min(1, n / target)`.
pub fn temperature(n_generated: usize, cfg: &GenerationConfig) -> f64 {
    let progress = if cfg.target_unique_inputs == 0 {
        1.0
    } else {
        (n_generated as f64 / cfg.target_unique_inputs as f64).min(1.0)
    };
    cfg.temperature_low + (cfg.temperature_high - cfg.temperature_low) * progress
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedExample {
    pub input: String,
    pub output: String,
    pub source_request_tag: String,
    pub temperature: f64,
}

#[derive(Serialize)]
struct ExampleLine<'a> {
    input: &'a str,
    output: &'a str,
}

fn example_line(input: &str, output: &str) -> String {
    serde_json::to_string(&ExampleLine { input, output }).expect("strings always serialize")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPrompt {
    pub text: String,
    /// Indices into the pool of the prior examples embedded, in prompt order.
    pub prior_indices: Vec<usize>,
    pub embedded_examples: usize,
}

/// Instruction, user demonstrations, `min(s, |pool|)` prior examples drawn
/// uniformly without replacement, then the output-format directive.
pub fn build_generation_prompt<R: Rng + ?Sized>(
    parsed: &ParsedPrompt,
    pool: &[GeneratedExample],
    cfg: &GenerationConfig,
    rng: &mut R,
) -> GenerationPrompt {
    let take = cfg.prior_sample_size.min(pool.len());
    let prior_indices = rand::seq::index::sample(rng, pool.len(), take).into_vec();

    let mut text = String::from(parsed.instruction.trim());
    let embedded = parsed.demonstrations.len() + prior_indices.len();
    if embedded > 0 {
        text.push_str("\n\nExamples:");
        for demo in &parsed.demonstrations {
            text.push('\n');
            text.push_str(&example_line(&demo.input, &demo.output));
        }
        for &i in &prior_indices {
            text.push('\n');
            text.push_str(&example_line(&pool[i].input, &pool[i].output));
        }
    }
    text.push_str(&format!(
        "\n\nWrite {n} new, diverse examples for this task that differ from the ones above. \
         Reply with exactly {n} lines and nothing else. Each line must be one JSON object \
         with string fields \"input\" and \"output\".",
        n = cfg.examples_per_request
    ));
    GenerationPrompt { text, prior_indices, embedded_examples: embedded }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MalformedExample {
    #[error("no JSON object on the line")]
    NoObject,
    #[error("object is not valid JSON")]
    InvalidJson,
    #[error("missing or non-string field `{0}`")]
    BadField(&'static str),
    #[error("input is empty")]
    EmptyInput,
}

/// Decodes the first balanced JSON object on `line` into an input/output pair.
pub fn parse_llm_example(line: &str) -> Result<Example, MalformedExample> {
    let object = first_balanced_object(line).ok_or(MalformedExample::NoObject)?;
    let value: serde_json::Value = serde_json::from_str(object).map_err(|_| MalformedExample::InvalidJson)?;
    let field = |name: &'static str| {
        value
            .get(name)
            .and_then(serde_json::Value::as_str)
            .map(|s| String::from(s.trim()))
            .ok_or(MalformedExample::BadField(name))
    };
    let input = field("input")?;
    let output = field("output")?;
    if input.is_empty() {
        return Err(MalformedExample::EmptyInput);
    }
    Ok(Example { input, output })
}

/// Case-folds, trims and collapses internal whitespace runs.
pub fn normalize_input(input: &str) -> String {
    let lowered = input.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Consensus choice plus whether a frequency tie had to be broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Consensus<'a> {
    pub value: &'a str,
    pub tie_broken: bool,
}

/// Self-consistency vote over raw outputs.
pub fn consensus_detail<S: AsRef<str>>(outputs: &[S]) -> Option<Consensus<'_>> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in outputs {
        *counts.entry(o.as_ref()).or_insert(0) += 1;
    }
    let top = *counts.values().max()?;
    let tied = counts.values().filter(|&&c| c == top).count();
    // BTreeMap iterates in codepoint order, so the first shortest is also the
    // lexicographic minimum among equal lengths.
    let value = counts
        .iter()
        .filter(|(_, &c)| c == top)
        .map(|(s, _)| *s)
        .min_by_key(|s| s.chars().count())?;
    Some(Consensus { value, tie_broken: tied > 1 })
}

/// Most frequent output; ties go to the shortest, then the lexicographically
/// smallest. `None` on empty input.
pub fn consensus<S: AsRef<str>>(outputs: &[S]) -> Option<&str> {
    consensus_detail(outputs).map(|c| c.value)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub requests_sent: usize,
    pub failed_requests: usize,
    /// Lines that decoded into an example.
    pub parsed_examples: usize,
    pub malformed_dropped: usize,
    /// Parsed examples folded into an earlier example with the same input.
    pub duplicate_inputs_merged: usize,
    pub unique_inputs_final: usize,
    /// Unique inputs beyond the target, discarded at the end.
    pub excess_inputs_dropped: usize,
    pub tie_breaks_applied: usize,
    pub budget_exhausted: bool,
    pub target_reached: bool,
}

impl GenerationReport {
    /// `parsed = merged + unique + excess`.
    pub fn is_conserved(&self) -> bool {
        self.parsed_examples
            == self.duplicate_inputs_merged + self.unique_inputs_final + self.excess_inputs_dropped
    }
}

/// A request planned by the session.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRequest {
    pub tag: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Snapshot of session counters, emitted between batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub unique: usize,
    pub merged: usize,
    pub malformed: usize,
    pub requests_sent: usize,
    pub temperature: f64,
}

pub struct GenerationSession {
    cfg: GenerationConfig,
    parsed: ParsedPrompt,
    rng: ChaCha8Rng,
    groups: BTreeMap<String, Vec<GeneratedExample>>,
    pool: Vec<GeneratedExample>,
    batches: usize,
    requests_sent: usize,
    failed_requests: usize,
    parsed_examples: usize,
    malformed: usize,
}

impl GenerationSession {
    pub fn new(parsed: ParsedPrompt, cfg: GenerationConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
            parsed,
            groups: BTreeMap::new(),
            pool: Vec::new(),
            batches: 0,
            requests_sent: 0,
            failed_requests: 0,
            parsed_examples: 0,
            malformed: 0,
        })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.cfg
    }

    pub fn unique_inputs(&self) -> usize {
        self.groups.len()
    }

    pub fn target_reached(&self) -> bool {
        self.groups.len() >= self.cfg.target_unique_inputs
    }

    pub fn budget_left(&self) -> usize {
        self.cfg.max_requests_budget - self.requests_sent
    }

    pub fn is_done(&self) -> bool {
        self.target_reached() || self.budget_left() == 0
    }

    pub fn current_temperature(&self) -> f64 {
        temperature(self.groups.len(), &self.cfg)
    }

    /// Plans the next batch, or `None` once the target or budget is reached.
    pub fn next_batch(&mut self) -> Option<Vec<PlannedRequest>> {
        if self.is_done() {
            return None;
        }
        self.rebuild_pool();
        let size = self.cfg.requests_per_batch.min(self.budget_left());
        let t = self.current_temperature();
        let batch = self.batches;
        self.batches += 1;
        self.requests_sent += size;
        let requests = (0..size)
            .map(|i| PlannedRequest {
                tag: format!("b{batch:05}-r{i:03}"),
                prompt: build_generation_prompt(&self.parsed, &self.pool, &self.cfg, &mut self.rng).text,
                temperature: t,
                max_output_tokens: self.cfg.max_output_tokens,
            })
            .collect();
        Some(requests)
    }

    /// One representative per unique input, in normalized-key order.
    fn rebuild_pool(&mut self) {
        self.pool = self.groups.values().map(|occ| representative(occ).0).collect();
    }

    /// Consumes one reply. Each nonblank line is decoded on its own; lines
    /// that fail are counted as malformed.
    pub fn ingest(&mut self, request: &PlannedRequest, reply: &str) {
        for line in reply.lines().filter(|l| !l.trim().is_empty()) {
            match parse_llm_example(line) {
                Ok(example) => {
                    self.parsed_examples += 1;
                    self.groups.entry(normalize_input(&example.input)).or_default().push(GeneratedExample {
                        input: example.input,
                        output: example.output,
                        source_request_tag: request.tag.clone(),
                        temperature: request.temperature,
                    });
                }
                Err(_) => self.malformed += 1,
            }
        }
    }

    /// Records a request that produced no reply.
    pub fn record_failure(&mut self, _request: &PlannedRequest) {
        self.failed_requests += 1;
    }

    pub fn progress(&self) -> Progress {
        Progress {
            unique: self.groups.len(),
            merged: self.parsed_examples - self.groups.len(),
            malformed: self.malformed,
            requests_sent: self.requests_sent,
            temperature: self.current_temperature(),
        }
    }

    /// Emits one consensus example per unique input, capped at the target.
    pub fn finish(self) -> (Vec<GeneratedExample>, GenerationReport) {
        let total_groups = self.groups.len();
        let keep = total_groups.min(self.cfg.target_unique_inputs);
        let mut tie_breaks = 0;
        let examples: Vec<GeneratedExample> = self
            .groups
            .values()
            .take(keep)
            .map(|occ| {
                let (example, tie) = representative(occ);
                tie_breaks += usize::from(tie);
                example
            })
            .collect();
        let report = GenerationReport {
            requests_sent: self.requests_sent,
            failed_requests: self.failed_requests,
            parsed_examples: self.parsed_examples,
            malformed_dropped: self.malformed,
            duplicate_inputs_merged: self.parsed_examples - total_groups,
            unique_inputs_final: examples.len(),
            excess_inputs_dropped: total_groups - keep,
            tie_breaks_applied: tie_breaks,
            budget_exhausted: total_groups < self.cfg.target_unique_inputs,
            target_reached: total_groups >= self.cfg.target_unique_inputs,
        };
        (examples, report)
    }
}

/// Consensus example for one group of occurrences. Independent of arrival
/// order: the input is the smallest raw spelling, provenance comes from the
/// smallest request tag that produced the winning output.
fn representative(occurrences: &[GeneratedExample]) -> (GeneratedExample, bool) {
    let outputs: Vec<&str> = occurrences.iter().map(|e| e.output.as_str()).collect();
    let winner = consensus_detail(&outputs).expect("groups are never empty");
    let input = occurrences.iter().map(|e| e.input.as_str()).min().expect("nonempty");
    let source = occurrences
        .iter()
        .filter(|e| e.output == winner.value)
        .min_by(|a, b| a.source_request_tag.cmp(&b.source_request_tag))
        .expect("winner was observed");
    (
        GeneratedExample {
            input: input.into(),
            output: winner.value.into(),
            source_request_tag: source.source_request_tag.clone(),
            temperature: source.temperature,
        },
        winner.tie_broken,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Demonstration;
    use alloc::string::ToString;
    use alloc::vec;

    fn parsed(demos: usize) -> ParsedPrompt {
        ParsedPrompt {
            instruction: "Answer the question.".into(),
            demonstrations: (0..demos)
                .map(|i| Demonstration { input: format!("q{i}"), output: format!("a{i}") })
                .collect(),
            original_language: crate::prompt::ScriptClass::Latin,
            was_translated: false,
        }
    }

    fn pool(n: usize) -> Vec<GeneratedExample> {
        (0..n)
            .map(|i| GeneratedExample {
                input: format!("prior input {i}"),
                output: format!("prior output {i}"),
                source_request_tag: "t".into(),
                temperature: 0.2,
            })
            .collect()
    }

    #[test]
    fn schedule_points() {
        let cfg = GenerationConfig::default();
        assert_eq!(temperature(0, &cfg), 0.2);
        assert!((temperature(1500, &cfg) - 0.6).abs() < 1e-12);
        assert_eq!(temperature(3000, &cfg), 1.0);
        assert_eq!(temperature(5000, &cfg), 1.0);
    }

    #[test]
    fn prompt_with_empty_pool_embeds_only_demos() {
        let cfg = GenerationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = build_generation_prompt(&parsed(2), &[], &cfg, &mut rng);
        assert_eq!(p.embedded_examples, 2);
        assert!(p.prior_indices.is_empty());
        assert_eq!(p.text.lines().filter(|l| l.starts_with('{')).count(), 2);
        assert!(p.text.starts_with("Answer the question."));
        assert!(p.text.contains("exactly 5 lines"));
    }

    #[test]
    fn prior_sampling_is_seeded_and_clamped() {
        let cfg = GenerationConfig::default();
        let pool10 = pool(10);
        let a = build_generation_prompt(&parsed(1), &pool10, &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        let b = build_generation_prompt(&parsed(1), &pool10, &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        assert_eq!(a.prior_indices.len(), 3);
        let mut sorted = a.prior_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);

        let small = build_generation_prompt(&parsed(0), &pool(2), &cfg, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(small.prior_indices.len(), 2);
        assert_eq!(small.embedded_examples, 2);
    }

    #[test]
    fn decode_lines() {
        assert_eq!(
            parse_llm_example(r#"{"input":"2+2?","output":"4"}"#),
            Ok(Example { input: "2+2?".into(), output: "4".into() })
        );
        assert_eq!(
            parse_llm_example(r#"Sure! {"input":"a","output":"b"} hope that helps"#),
            Ok(Example { input: "a".into(), output: "b".into() })
        );
        assert_eq!(parse_llm_example(r#"{"input":"a"}"#), Err(MalformedExample::BadField("output")));
        assert_eq!(parse_llm_example(r#"{"input":1,"output":"b"}"#), Err(MalformedExample::BadField("input")));
        assert_eq!(parse_llm_example("nothing here"), Err(MalformedExample::NoObject));
        assert_eq!(parse_llm_example("{input: a}"), Err(MalformedExample::InvalidJson));
        assert_eq!(parse_llm_example(r#"{"input":"  ","output":"b"}"#), Err(MalformedExample::EmptyInput));
    }

    #[test]
    fn consensus_rules() {
        assert_eq!(consensus(&["A", "A", "B"]), Some("A"));
        assert_eq!(consensus(&["ABC", "Z"]), Some("Z"));
        assert_eq!(consensus(&["xy", "ab"]), Some("ab"));
        assert_eq!(consensus::<&str>(&[]), None);
        assert!(!consensus_detail(&["A", "A", "B"]).unwrap().tie_broken);
        assert!(consensus_detail(&["xy", "ab"]).unwrap().tie_broken);
        // Length is counted in codepoints, not bytes.
        assert_eq!(consensus(&["éé", "abc"]), Some("éé"));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_input("  What IS\t2+2 ?\n"), "what is 2+2 ?");
    }

    fn reply(pairs: &[(&str, &str)]) -> String {
        pairs.iter().map(|(i, o)| example_line(i, o)).collect::<Vec<_>>().join("\n")
    }

    #[test]
    fn session_merges_and_votes() {
        let cfg = GenerationConfig {
            target_unique_inputs: 10,
            requests_per_batch: 2,
            max_requests_budget: 2,
            ..GenerationConfig::default()
        };
        let mut s = GenerationSession::new(parsed(1), cfg).unwrap();
        let batch = s.next_batch().unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].temperature, 0.2);
        s.ingest(&batch[0], &reply(&[("What is 1+1?", "2"), ("what is  1+1?", "two"), ("q", "x")]));
        s.ingest(&batch[1], &(reply(&[("WHAT IS 1+1?", "2")]) + "\nnot json\n\n"));
        assert!(s.next_batch().is_none());
        let (examples, report) = s.finish();
        assert_eq!(examples.len(), 2);
        let e = examples.iter().find(|e| e.output == "2").unwrap();
        assert_eq!(e.input, "WHAT IS 1+1?");
        assert_eq!(e.source_request_tag, "b00000-r000");
        assert_eq!(report.parsed_examples, 4);
        assert_eq!(report.duplicate_inputs_merged, 2);
        assert_eq!(report.malformed_dropped, 1);
        assert_eq!(report.tie_breaks_applied, 0);
        assert!(report.budget_exhausted && report.is_conserved());
    }

    #[test]
    fn session_caps_at_target() {
        let cfg = GenerationConfig { target_unique_inputs: 2, requests_per_batch: 1, ..GenerationConfig::default() };
        let mut s = GenerationSession::new(parsed(0), cfg).unwrap();
        let batch = s.next_batch().unwrap();
        s.ingest(&batch[0], &reply(&[("c", "1"), ("a", "1"), ("b", "1")]));
        assert!(s.is_done());
        let (examples, report) = s.finish();
        let inputs: Vec<_> = examples.iter().map(|e| e.input.to_string()).collect();
        assert_eq!(inputs, vec!["a", "b"]);
        assert_eq!(report.excess_inputs_dropped, 1);
        assert!(report.target_reached && !report.budget_exhausted && report.is_conserved());
    }

    #[test]
    fn invalid_config() {
        let bad = GenerationConfig { temperature_low: 1.5, ..GenerationConfig::default() };
        assert!(GenerationSession::new(parsed(0), bad).is_err());
        let bad = GenerationConfig { examples_per_request: 0, ..GenerationConfig::default() };
        assert!(bad.validate().is_err());
    }
}
