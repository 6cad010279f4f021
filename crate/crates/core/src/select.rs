//! Labeled records and demonstration selection.
//!
//! Datasets and demonstration files share one schema: one JSON object per
//! line with a `text` string and an integer `label`. Demonstration order is
//! data and is never re-sorted.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::render::Demonstration;
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    text: String,
    label: i64,
}

/// An ordered list of labeled examples with a content digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    examples: Vec<Example>,
    digest: String,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        let digest = content_digest(&examples);
        Self { examples, digest }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Hex SHA-256 over the record contents; independent of file path and layout.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub(crate) fn digest_seed(&self) -> u64 {
        u64::from_str_radix(&self.digest[..16], 16).expect("hex digest")
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

fn content_digest(examples: &[Example]) -> String {
    let mut h = Sha256::new();
    for e in examples {
        h.update(e.text.as_bytes());
        h.update([0x1F]);
        h.update(e.label.to_string().as_bytes());
        h.update([0x1E]);
    }
    hex::encode(h.finalize())
}

/// Parses line-delimited `{text, label}` records, checking `label < num_classes`.
/// Blank lines are skipped; errors name the 1-based line.
pub fn parse_records(text: &str, num_classes: usize, path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Record { path: path.to_path_buf(), line: i + 1, reason };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if raw.label < 0 || raw.label as u64 >= num_classes as u64 {
            return Err(err(format!("label {} outside [0, {num_classes})", raw.label)));
        }
        out.push(Example { text: raw.text, label: raw.label as usize });
    }
    Ok(out)
}

pub fn read_records(path: &Path, num_classes: usize) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, num_classes, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSource {
    Random,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemonstrationSet {
    pub demos: Vec<Demonstration>,
    /// The draw seed; `None` for externally supplied sets.
    pub seed: Option<u64>,
    pub source: DemoSource,
    /// Dataset positions of the drawn examples (random draws only).
    pub indices: Vec<usize>,
}

/// Draws `n` examples uniformly without replacement, in draw order.
///
/// The stream seed mixes `seed` with the dataset digest, so the same seed on
/// different data gives unrelated draws while a copy of the same data at a
/// different path gives the same draw.
pub fn select_random(dataset: &Dataset, n: usize, seed: u64) -> Result<DemonstrationSet> {
    if n > dataset.len() {
        return Err(Error::invalid(format!("cannot draw {n} demonstrations from {} examples", dataset.len())));
    }
    let mut rng = SplitMix64::new(derive_seed(seed ^ dataset.digest_seed(), "demonstrations"));
    let indices = rng.sample_indices(dataset.len(), n);
    let demos = indices
        .iter()
        .map(|&i| {
            let e = &dataset.examples()[i];
            Demonstration::new(e.text.clone(), e.label)
        })
        .collect();
    Ok(DemonstrationSet { demos, seed: Some(seed), source: DemoSource::Random, indices })
}

/// Reads an externally selected demonstration set, preserving file order.
pub fn load_demonstrations(path: &Path, num_classes: usize) -> Result<DemonstrationSet> {
    let demos = read_records(path, num_classes)?.into_iter().map(|e| Demonstration::new(e.text, e.label)).collect();
    Ok(DemonstrationSet { demos, seed: None, source: DemoSource::File, indices: Vec::new() })
}
