use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    HashMockScorer, PlantedParams, PlantedScorer, RemoteConfig, RemoteScorer, Scorer, ScriptedScorer,
};
use crate::ensemble::DEFAULT_ENSEMBLE_SIZE;
use crate::error::{Error, Result};
use crate::grammar::{ComponentSet, Template};
use crate::predict::{Method, DEFAULT_CONTENT_FREE};
use crate::rng::derive_seed;

/// Which scorer a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    HashMock,
    /// Gold classes come from the dataset labels.
    Planted {
        #[serde(flatten)]
        params: PlantedParams,
    },
    Scripted {
        path: PathBuf,
    },
    Remote {
        #[serde(flatten)]
        config: RemoteConfig,
    },
}

impl BackendSpec {
    pub fn build(&self, golds: &[usize]) -> Result<Arc<dyn Scorer>> {
        Ok(match self {
            BackendSpec::HashMock => Arc::new(HashMockScorer),
            BackendSpec::Planted { params } => Arc::new(PlantedScorer::new(*params, golds.to_vec())),
            BackendSpec::Scripted { path } => Arc::new(ScriptedScorer::load(path)?),
            BackendSpec::Remote { config } => Arc::new(RemoteScorer::new(config.clone())?),
        })
    }
}

/// How the templates of each demonstration seed are chosen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemplateSource {
    /// One draw of `templates_per_seed` templates used for every seed.
    #[default]
    Shared,
    /// An independent draw for each demonstration seed.
    PerSeed,
    /// A fixed list, used for every seed.
    Ids { ids: Vec<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub size: usize,
    pub seeds: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { size: DEFAULT_ENSEMBLE_SIZE, seeds: 5 }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Direct]
}

fn default_demo_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_templates_per_seed() -> usize {
    10
}

fn default_cf_tokens() -> Vec<String> {
    vec![DEFAULT_CONTENT_FREE.to_string()]
}

fn default_grammar() -> String {
    "preset:sst2".into()
}

/// A full evaluation, as read from a JSON config file.
///
/// Relative paths are resolved against the config file's directory by
/// [`RunConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub dataset: PathBuf,
    /// `preset:<name>` or a path to a grammar JSON document.
    #[serde(default = "default_grammar")]
    pub grammar: String,
    /// Where demonstrations are drawn from; the dataset itself when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_pool: Option<PathBuf>,
    /// Externally selected demonstration sets. When present they replace the
    /// random draws and `demo_seeds` / `n_shots` are ignored; the seed of each
    /// set in the results is its position in this list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_files: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub n_shots: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub templates: TemplateSource,
    #[serde(default = "default_demo_seeds")]
    pub demo_seeds: Vec<u64>,
    #[serde(default = "default_templates_per_seed")]
    pub templates_per_seed: usize,
    #[serde(default = "default_cf_tokens")]
    pub cf_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_subset_size: Option<usize>,
    #[serde(default)]
    pub run_seed: u64,
    /// Worker threads; all cores when absent. Does not affect results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Score cache file; `<out>/score_cache.txt` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

impl RunConfig {
    /// Minimal config; everything else takes its default.
    pub fn new(backend: BackendSpec, dataset: impl Into<PathBuf>) -> Self {
        Self {
            backend,
            dataset: dataset.into(),
            grammar: default_grammar(),
            demo_pool: None,
            demo_files: None,
            n_shots: 0,
            methods: default_methods(),
            templates: TemplateSource::default(),
            demo_seeds: default_demo_seeds(),
            templates_per_seed: default_templates_per_seed(),
            cf_tokens: default_cf_tokens(),
            ensemble: None,
            eval_subset_size: None,
            run_seed: 0,
            workers: None,
            cache: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        if let Some(p) = self.demo_pool.as_mut() {
            fix(p);
        }
        for p in self.demo_files.iter_mut().flatten() {
            fix(p);
        }
        if let Some(p) = self.cache.as_mut() {
            fix(p);
        }
        if let BackendSpec::Scripted { path } = &mut self.backend {
            fix(path);
        }
        if !self.grammar.starts_with("preset:") {
            let mut g = PathBuf::from(&self.grammar);
            fix(&mut g);
            self.grammar = g.to_string_lossy().into_owned();
        }
    }

    /// Checks the invariants that do not need the dataset.
    pub fn validate(&self, grammar: &ComponentSet) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::invalid("config: `methods` is empty"));
        }
        if self.methods.contains(&Method::Ensemble) {
            return Err(Error::invalid("config: `ensemble` is not a base method; use the `ensemble` section"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::invalid("config: duplicate entry in `methods`"));
        }
        if self.demo_files.is_none() && self.demo_seeds.is_empty() {
            return Err(Error::invalid("config: `demo_seeds` is empty"));
        }
        if matches!(&self.demo_files, Some(f) if f.is_empty()) {
            return Err(Error::invalid("config: `demo_files` is empty"));
        }
        if self.methods.contains(&Method::Calibration) && self.cf_tokens.is_empty() {
            return Err(Error::invalid("config: calibration needs at least one content-free token"));
        }
        if self.eval_subset_size == Some(0) {
            return Err(Error::invalid("config: `eval_subset_size` must be positive"));
        }
        match &self.templates {
            TemplateSource::Ids { ids } => {
                if ids.is_empty() {
                    return Err(Error::invalid("config: template id list is empty"));
                }
                for &id in ids {
                    grammar.template(id)?;
                }
            }
            _ => {
                if self.templates_per_seed == 0 {
                    return Err(Error::invalid("config: `templates_per_seed` must be positive"));
                }
                if self.templates_per_seed as u64 > grammar.template_count() {
                    return Err(Error::SampleSize {
                        requested: self.templates_per_seed,
                        available: grammar.template_count() as usize,
                    });
                }
            }
        }
        if let Some(e) = &self.ensemble {
            if e.size == 0 || e.seeds == 0 {
                return Err(Error::invalid("config: ensemble size and seeds must be positive"));
            }
            if e.size as u64 > grammar.template_count() {
                return Err(Error::SampleSize { requested: e.size, available: grammar.template_count() as usize });
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical config with execution-only fields removed.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = None;
        canonical.cache = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Templates evaluated under demonstration seed `seed`.
    pub fn templates_for(&self, grammar: &ComponentSet, seed: u64) -> Result<Vec<Template>> {
        let mut templates = match &self.templates {
            TemplateSource::Shared => {
                grammar.sample_templates(self.templates_per_seed, derive_seed(self.run_seed, "templates"))?
            }
            TemplateSource::PerSeed => grammar.sample_templates(
                self.templates_per_seed,
                derive_seed(self.run_seed, &format!("templates/seed={seed}")),
            )?,
            TemplateSource::Ids { ids } => ids.iter().map(|&id| grammar.template(id)).collect::<Result<_>>()?,
        };
        templates.sort_by_key(|t| t.id);
        templates.dedup_by_key(|t| t.id);
        Ok(templates)
    }

    /// Templates of ensemble number `index`.
    pub fn ensemble_templates(&self, grammar: &ComponentSet, index: usize) -> Result<Vec<Template>> {
        let size = self.ensemble.map(|e| e.size).unwrap_or(DEFAULT_ENSEMBLE_SIZE);
        let mut t = grammar.sample_templates(size, derive_seed(self.run_seed, &format!("ensemble/{index}")))?;
        t.sort_by_key(|t| t.id);
        Ok(t)
    }
}
