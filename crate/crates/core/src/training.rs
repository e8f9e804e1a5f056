//! Text-to-text dataset assembly and the memorizing mock model.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::generation::consensus;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
}

impl Example {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self { input: input.into(), output: output.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Retrieved,
    Generated,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// `instruction`, a blank line, then one `name: value` line per input field.
pub fn textualize<N, V>(instruction: &str, fields: &[(N, V)]) -> String
where
    N: AsRef<str>,
    V: AsRef<str>,
{
    let mut out = String::from(instruction);
    out.push_str("\n\n");
    for (i, (name, value)) in fields.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(name.as_ref());
        out.push_str(": ");
        out.push_str(value.as_ref());
    }
    out
}

/// Generated examples carry a single field named `input`.
pub fn textualize_generated(instruction: &str, example: &Example) -> Example {
    Example {
        input: textualize(instruction, &[("input", example.input.as_str())]),
        output: example.output.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    /// `(train, val, test)` sizes for `n` examples: val and test are floored,
    /// train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs products like 0.1 * 30 = 2.9999999999999996.
        let floor = |r: f64| libm::floor(n as f64 * r + 1e-9) as usize;
        let val = floor(self.val).min(n);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }

    fn validate(&self) -> Result<(), AssemblyError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || libm::fabs(parts.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(AssemblyError::InvalidRatios);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AssemblyError {
    #[error("both the retrieved and the generated datasets are empty")]
    BothSourcesEmpty,
    #[error("split ratios must lie in [0, 1] and sum to 1")]
    InvalidRatios,
}

/// Shuffled union of both sources, partitioned into train/val/test.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl SplitDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, which: Split) -> &[Example] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Concatenates retrieved then generated examples, shuffles with a seeded
/// permutation and cuts train, val, test in that order.
pub fn assemble_training_set(
    retrieved: &[Example],
    generated: &[Example],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitDataset, AssemblyError> {
    ratios.validate()?;
    if retrieved.is_empty() && generated.is_empty() {
        return Err(AssemblyError::BothSourcesEmpty);
    }
    let mut all: Vec<Example> = retrieved.iter().chain(generated).cloned().collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = ratios.sizes(all.len());
    let test = all.split_off(n_train + n_val);
    let val = all.split_off(n_train);
    Ok(SplitDataset { train: all, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub optimizer: String,
    pub learning_rate: f64,
    pub epochs: u32,
    pub batch_size: u32,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self { optimizer: "AdamW".into(), learning_rate: 5e-5, epochs: 3, batch_size: 16 }
    }
}

impl Hyperparameters {
    pub fn is_valid(&self) -> bool {
        self.learning_rate > 0.0 && self.epochs >= 1 && self.batch_size >= 1
    }
}

/// Lookup-table "model" produced by the mock trainer.
///
/// A seen input returns its training output (the consensus output when the
/// input appeared with several). Anything else returns the most frequent
/// training output, ties broken by lexicographic minimum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorizedModel {
    table: BTreeMap<String, String>,
    fallback: String,
}

impl MemorizedModel {
    pub fn train(examples: &[Example]) -> Self {
        let mut by_input: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in examples {
            by_input.entry(&e.input).or_default().push(&e.output);
        }
        let table = by_input
            .into_iter()
            .map(|(input, outputs)| (input.into(), consensus(&outputs).unwrap_or_default().into()))
            .collect();

        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for e in examples {
            *freq.entry(&e.output).or_insert(0) += 1;
        }
        // max_by_key keeps the last maximum; iterate in reverse so the
        // lexicographically smallest wins.
        let fallback = freq
            .iter()
            .rev()
            .max_by_key(|(_, &count)| count)
            .map(|(output, _)| String::from(*output))
            .unwrap_or_default();
        Self { table, fallback }
    }

    pub fn predict_one(&self, input: &str) -> &str {
        self.table.get(input).unwrap_or(&self.fallback)
    }

    pub fn predict<S: AsRef<str>>(&self, inputs: &[S]) -> Vec<String> {
        inputs.iter().map(|i| self.predict_one(i.as_ref()).into()).collect()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}
