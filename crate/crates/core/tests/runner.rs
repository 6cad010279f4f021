use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use templar::backend::PlantedParams;
use templar::predict::Method;
use templar::runner::{
    load_dataset, read_results, run_evaluation, summarize, BackendSpec, GroupBy, RunConfig, TemplateSource,
    MANIFEST_FILE, RESULTS_FILE,
};
use templar::Error;

fn write_dataset(dir: &Path, name: &str, n: usize, classes: usize) -> PathBuf {
    let path = dir.join(name);
    let body: String = (0..n)
        .map(|i| format!("{{\"text\":\"sample {i} of the set\",\"label\":{}}}\n", (i * 7 + 3) % classes))
        .collect();
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn load_dataset_examples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    fs::write(&a, "{\"text\":\"good\",\"label\":1}\n{\"text\":\"bad\",\"label\":0}\n").unwrap();
    let d = load_dataset(&a, 2).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.examples()[1].text, "bad");

    let b = dir.path().join("nested");
    fs::create_dir(&b).unwrap();
    let b = b.join("copy.jsonl");
    fs::copy(&a, &b).unwrap();
    assert_eq!(load_dataset(&b, 2).unwrap().digest(), d.digest());

    fs::write(&a, "{\"text\":\"good\",\"label\":1}\n{\"text\":\"bad\",\"label\":-1}\n").unwrap();
    match load_dataset(&a, 2) {
        Err(Error::Record { line: 2, reason, .. }) => assert!(reason.contains("-1")),
        other => panic!("unexpected {other:?}"),
    }
    fs::write(&a, "{\"text\":\"good\"}\n").unwrap();
    assert!(matches!(load_dataset(&a, 2), Err(Error::Record { line: 1, .. })));
}

fn mock_config(data: &Path) -> RunConfig {
    let mut c = RunConfig::new(BackendSpec::HashMock, data);
    c.methods = vec![Method::Direct, Method::Channel, Method::Calibration];
    c.n_shots = 2;
    c.demo_seeds = vec![0, 1];
    c.templates_per_seed = 4;
    c
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "data.jsonl", 12, 2);
    let mut c = mock_config(&data);
    c.workers = Some(1);
    run_evaluation(&c, &dir.path().join("one")).unwrap();
    c.workers = Some(4);
    run_evaluation(&c, &dir.path().join("four")).unwrap();
    for f in [RESULTS_FILE, MANIFEST_FILE] {
        assert_eq!(
            fs::read(dir.path().join("one").join(f)).unwrap(),
            fs::read(dir.path().join("four").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn interrupted_run_resumes_from_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "data.jsonl", 10, 2);
    let out = dir.path().join("out");
    let c = mock_config(&data);
    let first = run_evaluation(&c, &out).unwrap();
    assert!(first.stats.backend_calls > 0);
    let results = fs::read(out.join(RESULTS_FILE)).unwrap();

    // a crash before the result files were written leaves only the cache
    fs::remove_file(out.join(RESULTS_FILE)).unwrap();
    fs::remove_file(out.join(MANIFEST_FILE)).unwrap();
    let second = run_evaluation(&c, &out).unwrap();
    assert_eq!(second.stats.backend_calls, 0);
    assert_eq!(fs::read(out.join(RESULTS_FILE)).unwrap(), results);

    // a wider template draw extends the old one, so only the new template is scored
    let mut more = c.clone();
    more.methods = vec![Method::Direct];
    more.templates_per_seed = 5;
    let third = run_evaluation(&more, &out).unwrap();
    assert!(third.stats.backend_calls > 0);
    assert!(third.stats.cache_hits > 0);
}

#[test]
fn shared_cache_file_across_output_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "data.jsonl", 6, 2);
    let mut c = mock_config(&data);
    c.cache = Some(dir.path().join("scores.txt"));
    run_evaluation(&c, &dir.path().join("a")).unwrap();
    let b = run_evaluation(&c, &dir.path().join("b")).unwrap();
    assert_eq!(b.stats.backend_calls, 0);
    assert_eq!(
        fs::read(dir.path().join("a").join(RESULTS_FILE)).unwrap(),
        fs::read(dir.path().join("b").join(RESULTS_FILE)).unwrap()
    );
}

/// Independent aggregation: accuracy per (seed, template) by counting, then
/// mean and n-1 standard deviation via the two-pass formula.
fn oracle(records: &[templar::runner::RunRecord]) -> (f64, f64, usize) {
    let mut cells: BTreeMap<(u64, u64), (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = cells.entry((r.demo_seed, r.template_id.unwrap())).or_default();
        e.1 += 1;
        if r.predicted == Some(r.gold) {
            e.0 += 1;
        }
    }
    let accs: Vec<f64> = cells.values().map(|(h, n)| *h as f64 / *n as f64).collect();
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt(), accs.len())
}

#[test]
fn planted_summary_matches_an_independent_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "data.jsonl", 40, 2);
    let mut c = RunConfig::new(
        BackendSpec::Planted { params: PlantedParams { signal: 2.0, bias: 5.0, noise: 1.0, bias_seed: 11 } },
        &data,
    );
    c.templates = TemplateSource::PerSeed;
    c.n_shots = 2;
    let out = run_evaluation(&c, &dir.path().join("out")).unwrap();
    assert_eq!(out.records.len(), 3 * 10 * 40);
    let records = read_results(&dir.path().join("out").join(RESULTS_FILE)).unwrap();
    let rows = summarize(&records, &[GroupBy::Method]).unwrap();
    assert_eq!(rows.len(), 1);
    let (mean, std, n) = oracle(&records);
    assert_eq!(rows[0].n, n);
    assert_eq!(n, 30);
    assert!((rows[0].mean - mean).abs() < 1e-12);
    assert!((rows[0].std - std).abs() < 1e-12);
    assert!(std > 0.0);
}

#[test]
fn external_demonstration_files_and_subsets() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "data.jsonl", 30, 4);
    let d1 = dir.path().join("d1.jsonl");
    let d2 = dir.path().join("d2.jsonl");
    fs::write(&d1, "{\"text\":\"z\",\"label\":3}\n{\"text\":\"y\",\"label\":0}\n").unwrap();
    fs::write(&d2, "{\"text\":\"w\",\"label\":1}\n").unwrap();
    let config = r#"{"backend":{"kind":"hash_mock"},"dataset":"data.jsonl","grammar":"preset:agnews",
        "demo_files":["d1.jsonl","d2.jsonl"],"templates":{"kind":"ids","ids":[0,5,167]},
        "eval_subset_size":7,"run_seed":3}"#;
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, config).unwrap();
    let c = RunConfig::load(&cfg_path).unwrap();
    let out = run_evaluation(&c, &dir.path().join("out")).unwrap();
    assert_eq!(out.records.len(), 2 * 3 * 7);
    assert_eq!(out.manifest.example_ids.len(), 7);
    assert_eq!(out.manifest.eval_subset_size, Some(7));
    let seeds: std::collections::BTreeSet<u64> = out.records.iter().map(|r| r.demo_seed).collect();
    assert_eq!(seeds.into_iter().collect::<Vec<_>>(), vec![0, 1]);

    let mut other_seed = c.clone();
    other_seed.run_seed = 4;
    let other = run_evaluation(&other_seed, &dir.path().join("out2")).unwrap();
    assert_ne!(other.manifest.example_ids, out.manifest.example_ids);
}

#[test]
fn invalid_configs_fail_before_any_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path(), "data.jsonl", 3, 2);
    let mut c = mock_config(&data);
    c.n_shots = 4;
    assert!(run_evaluation(&c, &dir.path().join("o")).is_err());
    let mut c = mock_config(&data);
    c.demo_seeds = vec![1, 1];
    assert!(run_evaluation(&c, &dir.path().join("o")).is_err());
    let mut c = mock_config(&data);
    c.grammar = "preset:trec".into();
    let wide = write_dataset(dir.path(), "wide.jsonl", 3, 9);
    c.dataset = wide;
    assert!(matches!(run_evaluation(&c, &dir.path().join("o")), Err(Error::Record { .. })));
}
