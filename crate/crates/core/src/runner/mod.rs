//! Full evaluations: seeds × templates × examples × methods, persisted as
//! line-delimited records.

mod analysis;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use analysis::{
    component_analysis, export_csv, rank_curve_for, template_scores, transfer, transfer_matrix, wins_between,
    TransferMatrix, TransferPair, WinsReport,
};
pub use config::{BackendSpec, EnsembleConfig, RunConfig, TemplateSource};

use crate::backend::{CachedScorer, ScoreCache, Scorer};
use crate::ensemble::{ensemble_predict, EnsembleInput};
use crate::error::{Error, Result};
use crate::grammar::{ComponentSet, Template};
use crate::metrics::{accuracy, aggregate};
use crate::predict::{classify, predict, validate_probs, LabelDistribution, Method};
use crate::render::{Demonstration, PromptContext};
use crate::rng::{derive_seed, SplitMix64};
use crate::select::{load_demonstrations, read_records, select_random, Dataset};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "stats.json";
pub const CACHE_FILE: &str = "score_cache.txt";

/// Reads a `{text, label}` dataset, checking labels against `num_classes`.
pub fn load_dataset(path: &Path, num_classes: usize) -> Result<Dataset> {
    Ok(Dataset::new(read_records(path, num_classes)?))
}

/// One persisted prediction (or failure) for one evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub backend: String,
    pub dataset_digest: String,
    pub method: Method,
    /// Method each ensemble member ran; ensemble records only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_method: Option<Method>,
    pub demo_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_ids: Option<Vec<u64>>,
    pub example_id: u64,
    pub gold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Backend requests the prediction needed (cache hits included).
    pub score_calls: usize,
    pub boundary_adjusted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    pub fn is_correct(&self) -> Option<bool> {
        self.predicted.map(|p| p == self.gold)
    }

    /// `direct`, `channel`, `calibration`, or `ensemble:<base>`.
    pub fn method_label(&self) -> String {
        match self.base_method {
            Some(b) => format!("{}:{}", self.method, b),
            None => self.method.to_string(),
        }
    }

    fn check(&self) -> Result<()> {
        match (&self.probs, self.predicted, &self.error) {
            (Some(p), Some(pred), None) => {
                validate_probs(p)?;
                let dist = LabelDistribution::new(p.clone(), self.method)?;
                if classify(&dist) != pred {
                    return Err(Error::invalid(format!("predicted {pred} is not the argmax of probs")));
                }
                Ok(())
            }
            (None, None, Some(_)) => Ok(()),
            _ => Err(Error::invalid("record must carry either probs and predicted, or an error")),
        }
    }
}

/// Parses a results file, validating every record.
pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Record { path: path.to_path_buf(), line: i + 1, reason };
        let rec: RunRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        rec.check().map_err(|e| err(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_digest: String,
    pub config: RunConfig,
    pub dataset_digest: String,
    pub dataset_size: usize,
    pub backend: String,
    pub task: String,
    pub num_classes: usize,
    /// Examples evaluated, ascending.
    pub example_ids: Vec<u64>,
    pub eval_subset_size: Option<usize>,
    /// Template ids evaluated under each demonstration seed.
    pub templates: BTreeMap<u64, Vec<u64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ensembles: Vec<Vec<u64>>,
    pub expected_records: usize,
    pub records: usize,
    pub errors: usize,
    pub version: String,
}

/// Non-deterministic bookkeeping kept apart from the result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub elapsed_ms: u128,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub manifest: Manifest,
    pub stats: RunStats,
}

struct Seeded {
    seed: u64,
    demos: Vec<Demonstration>,
    templates: Vec<Template>,
}

struct Prepared {
    grammar: ComponentSet,
    dataset: Dataset,
    example_ids: Vec<u64>,
    seeds: Vec<Seeded>,
    ensembles: Vec<Vec<Template>>,
    methods: Vec<Method>,
}

fn prepare(config: &RunConfig) -> Result<Prepared> {
    let grammar = ComponentSet::load(&config.grammar)?;
    config.validate(&grammar)?;
    let dataset = load_dataset(&config.dataset, grammar.num_classes())?;
    if dataset.is_empty() {
        return Err(Error::invalid(format!("dataset {} is empty", config.dataset.display())));
    }

    let mut example_ids: Vec<u64> = match config.eval_subset_size {
        Some(n) if n < dataset.len() => {
            let mut rng = SplitMix64::new(derive_seed(config.run_seed ^ dataset.digest_seed(), "eval-subset"));
            rng.sample_indices(dataset.len(), n).into_iter().map(|i| i as u64).collect()
        }
        _ => (0..dataset.len() as u64).collect(),
    };
    example_ids.sort_unstable();

    let mut seeds = Vec::new();
    if let Some(files) = &config.demo_files {
        for (i, path) in files.iter().enumerate() {
            let set = load_demonstrations(path, grammar.num_classes())?;
            let templates = config.templates_for(&grammar, i as u64)?;
            seeds.push(Seeded { seed: i as u64, demos: set.demos, templates });
        }
    } else {
        let pool = match &config.demo_pool {
            Some(p) => load_dataset(p, grammar.num_classes())?,
            None => dataset.clone(),
        };
        let mut list = config.demo_seeds.clone();
        list.sort_unstable();
        if list.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("config: duplicate entry in `demo_seeds`"));
        }
        for seed in list {
            let set = select_random(&pool, config.n_shots, seed)?;
            let templates = config.templates_for(&grammar, seed)?;
            seeds.push(Seeded { seed, demos: set.demos, templates });
        }
    }

    let ensembles = match config.ensemble {
        Some(e) => (0..e.seeds).map(|i| config.ensemble_templates(&grammar, i)).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let mut methods = config.methods.clone();
    methods.sort();
    Ok(Prepared { grammar, dataset, example_ids, seeds, ensembles, methods })
}

/// Number of records a completed run writes.
fn expected_records(p: &Prepared) -> usize {
    let base: usize = p.seeds.iter().map(|s| s.templates.len()).sum::<usize>() * p.methods.len() * p.example_ids.len();
    let ens = p.ensembles.len() * p.seeds.len() * p.methods.len() * p.example_ids.len();
    base + ens
}

#[derive(Clone, Copy)]
enum Cell {
    Single { method: Method, seed: usize, template: usize, example: u64 },
    Ensemble { method: Method, seed: usize, ensemble: usize, example: u64 },
}

/// Runs the evaluation described by `config` and writes
/// `results.jsonl`, `manifest.json` and `stats.json` into `out_dir`.
///
/// Records come out in canonical order (method, demo seed, template id,
/// example id), followed by ensemble records ordered by (base method, demo
/// seed, ensemble seed, example id), whatever the worker count. Scores are
/// cached on disk, so an interrupted run resumes without repeating backend
/// calls.
pub fn run_evaluation(config: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    let started = Instant::now();
    let prepared = prepare(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cache_path = config.cache.clone().unwrap_or_else(|| out_dir.join(CACHE_FILE));
    let cache = Arc::new(ScoreCache::open(&cache_path)?);
    let scorer = CachedScorer::new(config.backend.build(&prepared.dataset.labels())?, cache);

    let workers = config.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let run_id = config.digest()[..16].to_string();
    let identity = scorer.identity();
    let cells = cells(&prepared);
    let records: Vec<RunRecord> = pool.install(|| {
        cells.par_iter().map(|cell| evaluate(cell, &prepared, config, &scorer, &run_id, &identity)).collect()
    });

    let manifest = Manifest {
        run_id: run_id.clone(),
        config_digest: config.digest(),
        config: {
            let mut c = config.clone();
            c.workers = None;
            c.cache = None;
            c
        },
        dataset_digest: prepared.dataset.digest().to_string(),
        dataset_size: prepared.dataset.len(),
        backend: identity,
        task: prepared.grammar.task_name().to_string(),
        num_classes: prepared.grammar.num_classes(),
        example_ids: prepared.example_ids.clone(),
        eval_subset_size: config.eval_subset_size,
        templates: prepared.seeds.iter().map(|s| (s.seed, s.templates.iter().map(|t| t.id).collect())).collect(),
        ensembles: prepared.ensembles.iter().map(|e| e.iter().map(|t| t.id).collect()).collect(),
        expected_records: expected_records(&prepared),
        records: records.len(),
        errors: records.iter().filter(|r| r.is_error()).count(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let stats = RunStats {
        elapsed_ms: started.elapsed().as_millis(),
        backend_calls: scorer.backend_calls(),
        cache_hits: scorer.hits(),
        workers,
    };

    write_lines(&out_dir.join(RESULTS_FILE), &records)?;
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&out_dir.join(STATS_FILE), &stats)?;
    Ok(RunOutput { records, manifest, stats })
}

fn cells(p: &Prepared) -> Vec<Cell> {
    let mut out = Vec::with_capacity(expected_records(p));
    for &method in &p.methods {
        for (s, seeded) in p.seeds.iter().enumerate() {
            for t in 0..seeded.templates.len() {
                for &example in &p.example_ids {
                    out.push(Cell::Single { method, seed: s, template: t, example });
                }
            }
        }
    }
    for &method in &p.methods {
        for s in 0..p.seeds.len() {
            for e in 0..p.ensembles.len() {
                for &example in &p.example_ids {
                    out.push(Cell::Ensemble { method, seed: s, ensemble: e, example });
                }
            }
        }
    }
    out
}

fn evaluate<S: Scorer + ?Sized>(
    cell: &Cell,
    p: &Prepared,
    config: &RunConfig,
    scorer: &S,
    run_id: &str,
    backend: &str,
) -> RunRecord {
    let (method, seed, example) = match *cell {
        Cell::Single { method, seed, example, .. } | Cell::Ensemble { method, seed, example, .. } => {
            (method, seed, example)
        }
    };
    let seeded = &p.seeds[seed];
    let ex = &p.dataset.examples()[example as usize];
    let mut rec = RunRecord {
        run_id: run_id.to_string(),
        backend: backend.to_string(),
        dataset_digest: p.dataset.digest().to_string(),
        method,
        base_method: None,
        demo_seed: seeded.seed,
        template_id: None,
        ensemble_seed: None,
        template_ids: None,
        example_id: example,
        gold: ex.label,
        predicted: None,
        probs: None,
        score_calls: 0,
        boundary_adjusted: false,
        error: None,
    };
    let outcome = match *cell {
        Cell::Single { template, .. } => {
            let t = &seeded.templates[template];
            rec.template_id = Some(t.id);
            let ctx = PromptContext::new(&p.grammar, t, &seeded.demos).with_example(example).with_seed(seeded.seed);
            predict(method, scorer, &ctx, &ex.text, &config.cf_tokens)
                .map(|pr| (pr.dist, pr.score_calls, pr.boundary_adjusted))
        }
        Cell::Ensemble { ensemble, .. } => {
            rec.method = Method::Ensemble;
            rec.base_method = Some(method);
            rec.ensemble_seed = Some(ensemble as u64);
            let templates = &p.ensembles[ensemble];
            rec.template_ids = Some(templates.iter().map(|t| t.id).collect());
            let input = EnsembleInput {
                grammar: &p.grammar,
                demos: &seeded.demos,
                test_text: &ex.text,
                example_id: Some(example),
                seed: Some(seeded.seed),
            };
            ensemble_predict(scorer, templates, &input, method, &config.cf_tokens)
                .map(|e| (e.dist.clone(), e.score_calls(), e.boundary_adjusted()))
        }
    };
    match outcome {
        Ok((dist, calls, adjusted)) => {
            rec.predicted = Some(classify(&dist));
            rec.probs = Some(dist.into_probs());
            rec.score_calls = calls;
            rec.boundary_adjusted = adjusted;
        }
        Err(e) => rec.error = Some(error_chain(&e)),
    }
    rec
}

fn error_chain(e: &(dyn std::error::Error + 'static)) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(inner) = cur {
        let part = inner.to_string();
        if !s.contains(&part) {
            s.push_str(": ");
            s.push_str(&part);
        }
        cur = inner.source();
    }
    s
}

/// Writes through a temporary file so readers never see a partial result.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    write_atomic(path, &buf)
}

/// A dimension records can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Backend,
    Method,
    DemoSeed,
    TemplateId,
    EnsembleSeed,
}

impl GroupBy {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::Backend => "backend",
            GroupBy::Method => "method",
            GroupBy::DemoSeed => "demo_seed",
            GroupBy::TemplateId => "template_id",
            GroupBy::EnsembleSeed => "ensemble_seed",
        }
    }

    fn value(self, r: &RunRecord) -> String {
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        match self {
            GroupBy::Backend => r.backend.clone(),
            GroupBy::Method => r.method_label(),
            GroupBy::DemoSeed => r.demo_seed.to_string(),
            GroupBy::TemplateId => opt(r.template_id),
            GroupBy::EnsembleSeed => opt(r.ensemble_seed),
        }
    }
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "backend" => GroupBy::Backend,
            "method" => GroupBy::Method,
            "demo_seed" | "seed" => GroupBy::DemoSeed,
            "template_id" | "template" => GroupBy::TemplateId,
            "ensemble_seed" => GroupBy::EnsembleSeed,
            other => return Err(Error::invalid(format!("unknown group-by dimension `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: Vec<(String, String)>,
    pub mean: f64,
    pub std: f64,
    /// Number of (template, seed) cells aggregated.
    pub n: usize,
    /// Error records left out of the accuracies.
    pub errors: usize,
}

/// Accuracy of each (backend, method, demo seed, template or ensemble) cell.
/// Error records are left out; cells with no successful record are dropped.
pub fn cell_accuracies(records: &[RunRecord]) -> Result<Vec<(RunRecord, f64)>> {
    type CellKey = (String, String, u64, Option<u64>, Option<u64>);
    let mut cells: BTreeMap<CellKey, (RunRecord, Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for r in records {
        let key = (r.backend.clone(), r.method_label(), r.demo_seed, r.template_id, r.ensemble_seed);
        let entry = cells.entry(key).or_insert_with(|| (r.clone(), Vec::new(), Vec::new()));
        if let Some(p) = r.predicted {
            entry.1.push(p);
            entry.2.push(r.gold);
        }
    }
    cells.into_values().filter(|(_, p, _)| !p.is_empty()).map(|(r, p, g)| Ok((r, accuracy(&p, &g)?))).collect()
}

/// Per-cell accuracy, then mean and sample std across the cells of each group.
pub fn summarize(records: &[RunRecord], group_by: &[GroupBy]) -> Result<Vec<SummaryRow>> {
    let first = records.first().ok_or_else(|| Error::invalid("summarize: no records"))?;
    if let Some(r) = records.iter().find(|r| r.dataset_digest != first.dataset_digest) {
        return Err(Error::invalid(format!(
            "summarize: records from different datasets ({} vs {})",
            &first.dataset_digest[..12.min(first.dataset_digest.len())],
            &r.dataset_digest[..12.min(r.dataset_digest.len())]
        )));
    }
    let key_of = |r: &RunRecord| -> Vec<(String, String)> {
        group_by.iter().map(|g| (g.as_str().to_string(), g.value(r))).collect()
    };
    let mut errors: BTreeMap<Vec<(String, String)>, usize> = BTreeMap::new();
    for r in records {
        let e = errors.entry(key_of(r)).or_default();
        if r.is_error() {
            *e += 1;
        }
    }
    let mut groups: BTreeMap<Vec<(String, String)>, Vec<f64>> = BTreeMap::new();
    for (r, acc) in cell_accuracies(records)? {
        groups.entry(key_of(&r)).or_default().push(acc);
    }
    errors
        .into_iter()
        .map(|(key, errors)| {
            let accs = groups.remove(&key).unwrap_or_default();
            if accs.is_empty() {
                let label: Vec<String> = key.iter().map(|(k, v)| format!("{k}={v}")).collect();
                return Err(Error::invalid(format!(
                    "summarize: group [{}] has no successful records",
                    label.join(", ")
                )));
            }
            let agg = aggregate(&accs)?;
            Ok(SummaryRow { key, mean: agg.mean, std: agg.std, n: agg.n, errors })
        })
        .collect()
}
