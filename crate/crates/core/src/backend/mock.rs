use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ScoreRequest, Scorer};
use crate::error::{Error, Result};
use crate::render::Mode;
use crate::rng::{fnv1a64, hash_words, mix64, unit_open};

/// Deterministic scores from the request strings alone:
/// `-(1 + 4u)` with `u = unit(mix64(fnv1a64(prefix ‖ 0x1F ‖ continuation)))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashMockScorer;

impl HashMockScorer {
    pub fn value(prefix: &str, continuation: &str) -> f64 {
        let h = mix64(fnv1a64(&[prefix.as_bytes(), &[0x1F], continuation.as_bytes()]));
        -(1.0 + 4.0 * unit_open(h))
    }
}

impl Scorer for HashMockScorer {
    fn identity(&self) -> String {
        "hash-mock".into()
    }

    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        if request.continuation.is_empty() {
            return Err(BackendError::EmptyContinuation);
        }
        Ok(Self::value(&request.prefix, &request.continuation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedParams {
    /// Logit bonus of the gold class.
    pub signal: f64,
    /// Amplitude of the per-(template, class) bias.
    pub bias: f64,
    /// Amplitude of the per-(template, example, class) noise.
    pub noise: f64,
    /// Seed of the bias and noise hashes; two worlds with different seeds
    /// prefer different templates.
    pub bias_seed: u64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self { signal: 2.0, bias: 2.0, noise: 0.5, bias_seed: 0 }
    }
}

const BIAS_TAG: u64 = 0xB1A5;
const NOISE_TAG: u64 = 0x7015E;
const CONTENT_FREE_EXAMPLE: u64 = u64::MAX;

/// A synthetic world with genuine template sensitivity.
///
/// Per-class logit:
/// `signal·[class = gold(example)] + bias·u(template, class) + noise·u(template, example, class)`
/// where `u` are hash-derived uniforms in (0, 1). Content-free prompts carry
/// no gold signal, so calibration can divide the template bias out. Scores are
/// shifted by `-(signal + bias + noise)` to stay non-positive.
#[derive(Debug, Clone)]
pub struct PlantedScorer {
    params: PlantedParams,
    golds: Arc<Vec<usize>>,
}

impl PlantedScorer {
    /// `golds[example_id]` is the gold class of each example.
    pub fn new(params: PlantedParams, golds: Vec<usize>) -> Self {
        Self { params, golds: Arc::new(golds) }
    }

    pub fn params(&self) -> &PlantedParams {
        &self.params
    }

    pub fn logit(
        &self,
        template_id: u64,
        example_id: Option<u64>,
        class_index: usize,
        mode: Mode,
    ) -> Result<f64, BackendError> {
        let p = &self.params;
        let c = class_index as u64;
        let (gold_bonus, noise_key) = match mode {
            Mode::ContentFree => (0.0, CONTENT_FREE_EXAMPLE),
            Mode::Direct | Mode::Channel => {
                let e = example_id.ok_or(BackendError::MissingMeta("example_id"))?;
                let gold = *self.golds.get(e as usize).ok_or(BackendError::MissingMeta("gold label for example_id"))?;
                (if gold == class_index { p.signal } else { 0.0 }, e)
            }
        };
        let bias = unit_open(hash_words(p.bias_seed, &[BIAS_TAG, template_id, c]));
        let noise = unit_open(hash_words(p.bias_seed, &[NOISE_TAG, template_id, noise_key, c]));
        Ok(gold_bonus + p.bias * bias + p.noise * noise)
    }
}

impl Scorer for PlantedScorer {
    fn identity(&self) -> String {
        let p = &self.params;
        format!("planted:s={}:a={}:e={}:seed={}", p.signal, p.bias, p.noise, p.bias_seed)
    }

    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        let meta = request.meta.ok_or(BackendError::MissingMeta("meta"))?;
        let logit = self.logit(meta.template_id, meta.example_id, meta.class_index, meta.mode)?;
        let p = &self.params;
        Ok(logit - (p.signal + p.bias + p.noise))
    }

    fn reads_meta(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedEntry {
    pub prefix: String,
    pub continuation: String,
    pub logprob: f64,
}

/// Exact `(prefix, continuation) -> logprob` table; any miss is an error.
#[derive(Debug, Clone)]
pub struct ScriptedScorer {
    table: HashMap<(String, String), f64>,
    digest: String,
}

impl ScriptedScorer {
    pub fn new(entries: Vec<ScriptedEntry>) -> Self {
        let mut sorted = entries;
        sorted.sort_by(|a, b| (&a.prefix, &a.continuation).cmp(&(&b.prefix, &b.continuation)));
        let mut hasher = Sha256::new();
        let mut table = HashMap::with_capacity(sorted.len());
        for e in sorted {
            hasher.update(e.prefix.as_bytes());
            hasher.update([0x1F]);
            hasher.update(e.continuation.as_bytes());
            hasher.update([0x1F]);
            hasher.update(e.logprob.to_bits().to_le_bytes());
            table.insert((e.prefix, e.continuation), e.logprob);
        }
        let digest = hex::encode(&hasher.finalize()[..8]);
        Self { table, digest }
    }

    /// Loads a line-delimited JSON file of `{prefix, continuation, logprob}` records.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptedEntry = serde_json::from_str(line).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Scorer for ScriptedScorer {
    fn identity(&self) -> String {
        format!("scripted:{}", self.digest)
    }

    fn score(&self, request: &ScoreRequest) -> Result<f64, BackendError> {
        self.table.get(&(request.prefix.clone(), request.continuation.clone())).copied().ok_or_else(|| {
            BackendError::ScriptMiss { prefix: request.prefix.clone(), continuation: request.continuation.clone() }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::PromptMeta;

    #[test]
    fn hash_mock_golden_values() {
        // Frozen from an independent reimplementation of the hash formula.
        let s = HashMockScorer;
        let v = s.score(&ScoreRequest::new("ab", "c")).unwrap();
        assert_eq!(v, GOLDEN_AB_C);
        let v = s.score(&ScoreRequest::new("text: dull plot It was ", "terrible.")).unwrap();
        assert_eq!(v, GOLDEN_DULL);
    }

    const GOLDEN_AB_C: f64 = -3.9298660014488385;
    const GOLDEN_DULL: f64 = -2.4876216016039527;

    #[test]
    fn hash_mock_range_and_determinism() {
        let s = HashMockScorer;
        for i in 0..500 {
            let r = ScoreRequest::new(format!("prefix {i}"), format!("c{}", i % 7));
            let a = s.score(&r).unwrap();
            assert_eq!(a, s.score(&r).unwrap());
            assert!((-5.0..=-1.0).contains(&a), "{a}");
        }
    }

    #[test]
    fn scripted_lookup_and_miss() {
        let s =
            ScriptedScorer::new(vec![ScriptedEntry { prefix: "ab".into(), continuation: "c".into(), logprob: -1.5 }]);
        assert_eq!(s.score(&ScoreRequest::new("ab", "c")).unwrap(), -1.5);
        assert!(matches!(s.score(&ScoreRequest::new("ab", "d")), Err(BackendError::ScriptMiss { .. })));
    }

    #[test]
    fn scripted_loads_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.jsonl");
        std::fs::write(&path, "{\"prefix\":\"ab\",\"continuation\":\"c\",\"logprob\":-1.5}\n\n").unwrap();
        let s = ScriptedScorer::load(&path).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.score(&ScoreRequest::new("ab", "c")).unwrap(), -1.5);
        std::fs::write(&path, "{\"prefix\":\"ab\"}\n").unwrap();
        assert!(matches!(ScriptedScorer::load(&path), Err(Error::Record { line: 1, .. })));
    }

    fn meta(template_id: u64, example_id: Option<u64>, class_index: usize, mode: Mode) -> PromptMeta {
        PromptMeta { template_id, example_id, class_index, seed: None, mode }
    }

    #[test]
    fn planted_reads_meta() {
        let s = PlantedScorer::new(PlantedParams::default(), vec![1, 0]);
        assert!(s.reads_meta());
        let mut r = ScoreRequest::new("p", "c");
        assert!(matches!(s.score(&r), Err(BackendError::MissingMeta(_))));
        r.meta = Some(meta(3, Some(0), 1, Mode::Direct));
        let gold = s.score(&r).unwrap();
        assert!(gold <= 0.0);
        // the gold bonus is exactly `signal` on top of the same-template bias+noise terms
        let raw = s.logit(3, Some(0), 1, Mode::Direct).unwrap();
        let other_gold = PlantedScorer::new(PlantedParams::default(), vec![0, 0]);
        assert!((raw - other_gold.logit(3, Some(0), 1, Mode::Direct).unwrap() - 2.0).abs() < 1e-12);
        r.meta = Some(meta(3, None, 1, Mode::ContentFree));
        assert!(s.score(&r).is_ok());
    }

    #[test]
    fn planted_bias_depends_on_seed() {
        let a = PlantedScorer::new(PlantedParams::default(), vec![0]);
        let b = PlantedScorer::new(PlantedParams { bias_seed: 1, ..Default::default() }, vec![0]);
        let la = a.logit(5, None, 0, Mode::ContentFree).unwrap();
        let lb = b.logit(5, None, 0, Mode::ContentFree).unwrap();
        assert_ne!(la, lb);
        assert_eq!(la, a.logit(5, None, 0, Mode::ContentFree).unwrap());
    }
}
