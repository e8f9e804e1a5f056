#![allow(dead_code)]

use std::path::Path;

use p2m::mock::{Matcher, Reply, Rule, Transcript};

pub const INSTRUCTION: &str = "Answer the trivia question with a short phrase.";

pub fn prompt_text() -> String {
    format!("{INSTRUCTION}\n\ninput: capital of France?\noutput: Paris\n\ninput: 2 + 2?\noutput: 4")
}

/// One generated line as the LLM would write it.
pub fn line(input: &str, output: &str) -> String {
    serde_json::json!({ "input": input, "output": output }).to_string()
}

/// Rules answering generation requests one reply per call, in call order.
pub fn generation_rules(replies: &[Vec<String>]) -> Vec<Rule> {
    replies
        .iter()
        .map(|lines| Rule::new(Matcher::Contains("new, diverse examples".into()), Reply::Text(lines.join("\n"))).times(1))
        .collect()
}

pub const HYDE_REPLY: &str = "A T5 encoder-decoder model finetuned on open-domain trivia question answering.";

/// Transcript for a full offline run: HyDE reply, then `calls` generation
/// replies of `per_call` lines with some repeats and one malformed line each.
pub fn pipeline_transcript(calls: usize, per_call: usize, delay_ms: u64) -> Transcript {
    let mut rules = vec![Rule::new(Matcher::Prefix("You are browsing".into()), Reply::Text(HYDE_REPLY.into()))];
    for c in 0..calls {
        let mut lines: Vec<String> = (0..per_call)
            .map(|k| {
                let n = c * per_call + k;
                // Every seventh input repeats an earlier one with other casing.
                let input = if n % 7 == 6 { format!("TRIVIA ITEM {}", n - 3) } else { format!("trivia item {n}") };
                line(&input, &format!("answer {}", n % 11))
            })
            .collect();
        lines.push("not an example".into());
        let rule = Rule::new(Matcher::Contains("new, diverse examples".into()), Reply::Text(lines.join("\n"))).times(1);
        rules.push(rule.delay_ms(delay_ms));
    }
    Transcript { rules, default: Some(Reply::Text(String::new())), strict: false }
}

/// Dataset and model cards plus one dataset table.
pub fn write_cards(dir: &Path) {
    std::fs::create_dir_all(dir.join("data")).unwrap();
    let datasets = [
        serde_json::json!({"id": "trivia/qa", "kind": "dataset", "description": "Open-domain trivia question answering pairs with short answers.", "columns": ["question", "answer"]}),
        serde_json::json!({"id": "wmt-mini", "kind": "dataset", "description": "German to English news translation sentences.", "columns": ["de", "en"]}),
    ];
    let models = [
        serde_json::json!({"id": "t5-small", "kind": "model", "description": "T5 encoder-decoder pretrained on C4 for text-to-text tasks such as question answering.", "downloads": 1_000_000, "size_bytes": 242_000_000u64, "architecture": "encoder-decoder"}),
        serde_json::json!({"id": "t5-11b", "kind": "model", "description": "Huge T5 encoder-decoder for question answering.", "downloads": 50_000, "size_bytes": 45_000_000_000u64, "architecture": "encoder-decoder"}),
        serde_json::json!({"id": "gpt2", "kind": "model", "description": "Decoder-only language model trained on web text.", "downloads": 9_000_000, "size_bytes": 548_000_000u64, "architecture": "decoder-only"}),
        serde_json::json!({"id": "bart-base", "kind": "model", "description": "BART encoder-decoder for summarization.", "downloads": 400_000, "size_bytes": 558_000_000u64, "architecture": "encoder-decoder"}),
    ];
    let lines = |cards: &[serde_json::Value]| cards.iter().map(|c| c.to_string() + "\n").collect::<String>();
    std::fs::write(dir.join("datasets.jsonl"), lines(&datasets)).unwrap();
    std::fs::write(dir.join("models.jsonl"), lines(&models)).unwrap();
    let rows: String = (0..12)
        .map(|i| serde_json::json!({"question": format!("trivia question {i}?"), "answer": format!("fact {i}")}).to_string() + "\n")
        .collect();
    std::fs::write(dir.join("data/trivia__qa.jsonl"), rows).unwrap();
}
