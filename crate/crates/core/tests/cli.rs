use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn templar(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_templar")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn templates_lists_every_preset_template() {
    let dir = tempfile::tempdir().unwrap();
    for (preset, n) in [("sst2", 216), ("dbpedia", 168), ("agnews", 168), ("trec", 168)] {
        let out = stdout(&templar(&["templates", "--grammar", &format!("preset:{preset}")], dir.path()));
        assert_eq!(out.lines().count(), n, "{preset}");
    }
    let out = stdout(&templar(&["templates", "--sample", "5", "--seed", "7"], dir.path()));
    let ids: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["84", "4", "194", "127", "99"]);
}

#[test]
fn render_shows_escaped_separators() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("demos.jsonl"), "{\"text\":\"great acting\",\"label\":1}\n").unwrap();
    let out = stdout(&templar(
        &["render", "--template", "215", "--text", "dull plot", "--demos", "demos.jsonl", "--class", "0"],
        dir.path(),
    ));
    assert!(out.contains(r#"prefix:       "great acting\nA great piece.\n\ndull plot\nA ""#), "{out}");
    assert!(out.contains(r#"continuation: "terrible piece.""#), "{out}");
}

#[test]
fn run_summarize_analyze_export() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let data: String = (0..16).map(|i| format!("{{\"text\":\"item {i}\",\"label\":{}}}\n", i % 2)).collect();
    fs::write(p.join("data.jsonl"), data).unwrap();
    fs::write(
        p.join("a.json"),
        r#"{"backend":{"kind":"planted","bias":4.0,"bias_seed":1},"dataset":"data.jsonl","n_shots":2,
            "methods":["direct","calibration"],"templates_per_seed":6,"demo_seeds":[0,1]}"#,
    )
    .unwrap();
    fs::write(
        p.join("b.json"),
        r#"{"backend":{"kind":"planted","bias":4.0,"bias_seed":2},"dataset":"data.jsonl","n_shots":2,
            "methods":["direct","calibration"],"templates_per_seed":6,"demo_seeds":[0,1]}"#,
    )
    .unwrap();
    let run = templar(&["run", "--config", "a.json", "--out", "ra", "--workers", "2"], p);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("384 records (0 errors)"));
    stdout(&templar(&["run", "--config", "b.json", "--out", "rb"], p));

    let summary = stdout(&templar(&["summarize", "ra/results.jsonl", "--group-by", "method"], p));
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().all(|l| l.contains("(n=12)")), "{summary}");

    let json = stdout(&templar(&["summarize", "ra/results.jsonl", "--json"], p));
    let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);

    let transfer =
        stdout(&templar(&["analyze-transfer", "ra/results.jsonl", "rb/results.jsonl", "--k", "3", "--json"], p));
    let m: serde_json::Value = serde_json::from_str(&transfer).unwrap();
    assert_eq!(m["iou"][0][0], 1.0);
    assert_eq!(m["spearman"][1][1], 1.0);

    let comps = stdout(&templar(&["analyze-components", "ra/results.jsonl", "--method", "calibration"], p));
    assert!(comps.starts_with("input_verbalizer\n"), "{comps}");

    let curve = stdout(&templar(&["rank-curve", "ra/results.jsonl"], p));
    assert_eq!(curve.lines().count(), 6);
    assert!(curve.starts_with("1\t1.000000"));

    let wins = stdout(&templar(&["wins", "--zero", "ra/results.jsonl", "--few", "rb/results.jsonl"], p));
    assert!(wins.trim_end().ends_with("/2 wins"), "{wins}");

    stdout(&templar(&["export", "ra/results.jsonl", "--out", "ra.csv"], p));
    let csv = fs::read_to_string(p.join("ra.csv")).unwrap();
    assert_eq!(csv.lines().count(), 385);
    assert!(csv.starts_with("run_id,backend,method,"));

    let ens = templar(&["ensemble", "--config", "a.json", "--out", "re", "--size", "3", "--seeds", "2"], p);
    assert!(ens.status.success());
    let summary = stdout(&templar(&["summarize", "re/results.jsonl", "--group-by", "method"], p));
    assert!(summary.contains("method=ensemble:direct"), "{summary}");
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = templar(&["templates", "--grammar", "preset:nope"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
    let o = templar(&["run", "--config", "missing.json", "--out", "x"], dir.path());
    assert!(!o.status.success());
    fs::write(dir.path().join("c.json"), r#"{"backend":{"kind":"hash_mock"},"dataset":"d.jsonl"}"#).unwrap();
    let o = templar(&["run", "--config", "c.json", "--out", "x", "--endpoint", "http://127.0.0.1:1"], dir.path());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not remote"));
}
