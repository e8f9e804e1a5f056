//! Prompt segmentation.
//!
//! A raw prompt is split into an instruction and zero or more input/output
//! demonstrations. Two routes exist: an LLM asked to emit a JSON object
//! (see [`segmentation_prompt`] and [`decode_segmentation`]), and the
//! deterministic rule-based grammar in [`parse_fallback`]:
//!
//! ```text
//! Answer the question.            <- first block: instruction
//!
//! input: 2+2?                     <- demonstration block
//! output: 4
//! ```
//!
//! Blocks are separated by blank lines. A block is a demonstration block when
//! any of its lines starts with `input:` or `output:` (ASCII case-insensitive).
//! Inside such a block every `input:` line opens a new demonstration, an
//! `output:` line sets the output of the open one, and unprefixed lines
//! continue whichever field was set last. Later blocks without those prefixes
//! are appended to the instruction.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::json::first_balanced_object;

/// Default fraction of non-Latin letters above which text is translated.
pub const DEFAULT_TRANSLATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

/// Coarse script class of a piece of text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptClass {
    Latin,
    Cjk,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrompt {
    pub instruction: String,
    pub demonstrations: Vec<Demonstration>,
    pub original_language: ScriptClass,
    pub was_translated: bool,
}

impl ParsedPrompt {
    /// True when some demonstration has an empty output, i.e. the task
    /// generates text from nothing but the instruction.
    pub fn has_output_free_demos(&self) -> bool {
        self.demonstrations.iter().any(|d| d.output.is_empty())
    }

    /// Renders the prompt in the fallback grammar. Re-parsing the result with
    /// [`parse_fallback`] yields the same instruction and demonstrations.
    pub fn to_canonical_text(&self) -> String {
        let mut out = self.instruction.clone();
        for demo in &self.demonstrations {
            out.push_str("\n\ninput: ");
            out.push_str(&demo.input);
            out.push_str("\noutput: ");
            out.push_str(&demo.output);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt is empty or whitespace only")]
    EmptyPrompt,
    #[error("block {block} has `output:` before any `input:`")]
    MalformedDemonstration { block: usize },
    #[error("block {block} has a demonstration with an empty input")]
    EmptyDemonstrationInput { block: usize },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Field {
    Input,
    Output,
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| &line[label.len()..])
}

fn classify(line: &str) -> Option<(Field, &str)> {
    let trimmed = line.trim_start();
    if let Some(rest) = strip_label(trimmed, "input:") {
        Some((Field::Input, rest))
    } else {
        strip_label(trimmed, "output:").map(|rest| (Field::Output, rest))
    }
}

fn blocks(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(core::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn parse_demo_block(lines: &[&str], block: usize) -> Result<Vec<Demonstration>, PromptError> {
    struct Open {
        input: String,
        output: Option<String>,
    }
    fn close(open: Open, block: usize) -> Result<Demonstration, PromptError> {
        let input = open.input.trim().to_owned();
        if input.is_empty() {
            return Err(PromptError::EmptyDemonstrationInput { block });
        }
        Ok(Demonstration {
            input,
            output: open.output.map(|o| o.trim().to_owned()).unwrap_or_default(),
        })
    }

    let mut demos = Vec::new();
    let mut open: Option<Open> = None;
    let mut last = Field::Input;
    for line in lines {
        match classify(line) {
            Some((Field::Input, rest)) => {
                if let Some(done) = open.take() {
                    demos.push(close(done, block)?);
                }
                open = Some(Open { input: rest.to_owned(), output: None });
                last = Field::Input;
            }
            Some((Field::Output, rest)) => {
                let Some(current) = open.as_mut() else {
                    return Err(PromptError::MalformedDemonstration { block });
                };
                current.output = Some(rest.to_owned());
                last = Field::Output;
            }
            None => {
                // Text ahead of the block's first `input:` is dropped.
                let Some(current) = open.as_mut() else {
                    continue;
                };
                let target = match (last, current.output.as_mut()) {
                    (Field::Output, Some(out)) => out,
                    _ => &mut current.input,
                };
                target.push('\n');
                target.push_str(line);
            }
        }
    }
    if let Some(done) = open {
        demos.push(close(done, block)?);
    }
    Ok(demos)
}

/// Deterministic rule-based segmentation. See the module docs for the grammar.
pub fn parse_fallback(text: &str) -> Result<ParsedPrompt, PromptError> {
    let blocks = blocks(text);
    let Some((first, rest)) = blocks.split_first() else {
        return Err(PromptError::EmptyPrompt);
    };
    let mut instruction = first.join("\n").trim().to_owned();
    let mut demonstrations = Vec::new();
    for (i, block) in rest.iter().enumerate() {
        if block.iter().any(|line| classify(line).is_some()) {
            demonstrations.extend(parse_demo_block(block, i + 1)?);
        } else {
            instruction.push_str("\n\n");
            instruction.push_str(block.join("\n").trim());
        }
    }
    Ok(ParsedPrompt {
        original_language: detect_script(&instruction).1,
        instruction,
        demonstrations,
        was_translated: false,
    })
}

/// Meta-prompt asking an LLM to segment `raw` into a JSON object.
pub fn segmentation_prompt(raw: &str) -> String {
    let mut out = String::from(
        "You split task descriptions into an instruction and demonstrations.\n\
         Reply with exactly one JSON object and nothing else, of the form\n\
         {\"instruction\": \"...\", \"demonstrations\": [{\"input\": \"...\", \"output\": \"...\"}]}\n\
         The instruction states the task. Each demonstration is one example \
         input with its expected output. Use an empty list when there are none.\n\n\
         Task description:\n",
    );
    out.push_str(raw);
    out
}

#[derive(Deserialize)]
struct SegmentationReply {
    instruction: String,
    #[serde(default)]
    demonstrations: Vec<Demonstration>,
}

/// Decodes an LLM segmentation reply. Returns `None` when the reply holds no
/// usable object or the object breaks a [`ParsedPrompt`] invariant.
pub fn decode_segmentation(reply: &str) -> Option<ParsedPrompt> {
    let object = first_balanced_object(reply)?;
    let decoded: SegmentationReply = serde_json::from_str(object).ok()?;
    let instruction = decoded.instruction.trim().to_owned();
    if instruction.is_empty() {
        return None;
    }
    let mut demonstrations = Vec::with_capacity(decoded.demonstrations.len());
    for demo in decoded.demonstrations {
        let input = demo.input.trim().to_owned();
        if input.is_empty() {
            return None;
        }
        demonstrations.push(Demonstration { input, output: demo.output.trim().to_owned() });
    }
    Some(ParsedPrompt {
        original_language: detect_script(&instruction).1,
        instruction,
        demonstrations,
        was_translated: false,
    })
}

/// Segments `raw`, preferring the LLM reply when one is given and decodes.
///
/// A missing or undecodable reply falls through to [`parse_fallback`].
pub fn parse_prompt(raw: &str, llm_reply: Option<&str>) -> Result<ParsedPrompt, PromptError> {
    if raw.trim().is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    if let Some(parsed) = llm_reply.and_then(decode_segmentation) {
        return Ok(parsed);
    }
    parse_fallback(raw)
}

fn is_latin(c: char) -> bool {
    matches!(c as u32,
        0x0041..=0x005A | 0x0061..=0x007A
        | 0x00AA | 0x00BA
        | 0x00C0..=0x024F
        | 0x0250..=0x02AF
        | 0x1D00..=0x1D7F
        | 0x1E00..=0x1EFF
        | 0x2C60..=0x2C7F
        | 0xA720..=0xA7FF
        | 0xAB30..=0xAB6F
        | 0xFF21..=0xFF3A | 0xFF41..=0xFF5A)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x1100..=0x11FF
        | 0x2E80..=0x2FDF
        | 0x3005..=0x3007
        | 0x3021..=0x3029
        | 0x3031..=0x3035
        | 0x3038..=0x303C
        | 0x3040..=0x30FF
        | 0x3100..=0x312F
        | 0x3130..=0x318F
        | 0x31A0..=0x31BF
        | 0x31F0..=0x31FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xA960..=0xA97F
        | 0xAC00..=0xD7FF
        | 0xF900..=0xFAFF
        | 0xFF66..=0xFF9F
        | 0xFFA0..=0xFFDC
        | 0x20000..=0x3FFFF)
}

/// Classifies a letter codepoint.
pub fn script_of(c: char) -> ScriptClass {
    if is_latin(c) {
        ScriptClass::Latin
    } else if is_cjk(c) {
        ScriptClass::Cjk
    } else {
        ScriptClass::Other
    }
}

/// Letter counts per script class; non-letters are ignored.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ScriptCounts {
    pub latin: usize,
    pub cjk: usize,
    pub other: usize,
}

impl ScriptCounts {
    pub fn of(text: &str) -> Self {
        let mut counts = Self::default();
        for c in text.chars().filter(|c| c.is_alphabetic()) {
            match script_of(c) {
                ScriptClass::Latin => counts.latin += 1,
                ScriptClass::Cjk => counts.cjk += 1,
                ScriptClass::Other => counts.other += 1,
            }
        }
        counts
    }

    pub fn letters(&self) -> usize {
        self.latin + self.cjk + self.other
    }

    /// Dominant class; ties prefer Latin, then CJK.
    pub fn dominant(&self) -> ScriptClass {
        if self.latin >= self.cjk && self.latin >= self.other {
            ScriptClass::Latin
        } else if self.cjk >= self.other {
            ScriptClass::Cjk
        } else {
            ScriptClass::Other
        }
    }
}

fn detect_script(text: &str) -> (f64, ScriptClass) {
    let counts = ScriptCounts::of(text);
    let ratio = if counts.letters() == 0 {
        0.0
    } else {
        (counts.cjk + counts.other) as f64 / counts.letters() as f64
    };
    (ratio, counts.dominant())
}

/// Whether `text` should be translated to English, and its dominant script.
///
/// True iff the share of non-Latin letters exceeds `threshold`. Digits,
/// punctuation and whitespace do not count.
pub fn needs_translation(text: &str, threshold: f64) -> (bool, ScriptClass) {
    let (ratio, class) = detect_script(text);
    (ratio > threshold, class)
}

/// Pluggable language detector.
pub trait ScriptDetector {
    fn needs_translation(&self, text: &str) -> (bool, ScriptClass);
}

/// Unicode-block ratio detector.
#[derive(Debug, Clone, Copy)]
pub struct BlockRatioDetector {
    pub threshold: f64,
}

impl Default for BlockRatioDetector {
    fn default() -> Self {
        Self { threshold: DEFAULT_TRANSLATION_THRESHOLD }
    }
}

impl ScriptDetector for BlockRatioDetector {
    fn needs_translation(&self, text: &str) -> (bool, ScriptClass) {
        needs_translation(text, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Translation {
    pub text: String,
    /// False when the translator passed the text through unchanged.
    pub translated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("translation failed: {0}")]
pub struct TranslateError(pub String);

pub trait Translator {
    fn translate(&self, text: &str, target_lang: &str) -> Result<Translation, TranslateError>;
}

/// Pass-through translator used when no translation service is configured.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _target_lang: &str) -> Result<Translation, TranslateError> {
        Ok(Translation { text: text.to_owned(), translated: false })
    }
}

/// Outcome of [`translate_instruction`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranslationNote {
    NotNeeded,
    Translated,
    /// Translation was needed but the translator left the text unchanged.
    PassedThrough,
    Failed(String),
}

/// Routes a non-English instruction through `translator`, updating the
/// language tag and the `was_translated` flag.
pub fn translate_instruction(
    parsed: &mut ParsedPrompt,
    detector: &dyn ScriptDetector,
    translator: &dyn Translator,
) -> TranslationNote {
    let (needed, class) = detector.needs_translation(&parsed.instruction);
    parsed.original_language = class;
    if !needed {
        return TranslationNote::NotNeeded;
    }
    match translator.translate(&parsed.instruction, "en") {
        Ok(t) if t.translated => {
            parsed.instruction = t.text;
            parsed.was_translated = true;
            TranslationNote::Translated
        }
        Ok(_) => TranslationNote::PassedThrough,
        Err(e) => TranslationNote::Failed(e.0),
    }
}
