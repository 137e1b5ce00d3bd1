use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clbgmm::protocol::load_run;

fn clbgmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clbgmm"))
        .args(args)
        .env_remove("CLBGMM_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesize a small dataset, optionally trim the manifest to some
/// modalities and seeds, and run it. Returns the results directory.
fn synth_and_run(root: &Path, modalities: Option<&[&str]>, seeds: &[u64], label: &str) -> PathBuf {
    let data = root.join("data");
    if !data.join("manifest.json").exists() {
        let o = clbgmm(&["synth", "--out", s(&data), "--seed", "4", "--per-class-train", "20", "--per-class-test", "10"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    if let Some(names) = modalities {
        let kept: Vec<serde_json::Value> = manifest["modalities"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|m| names.contains(&m["name"].as_str().unwrap()))
            .cloned()
            .collect();
        manifest["modalities"] = kept.into();
    }
    manifest["seeds"] = seeds.to_vec().into();
    manifest["name"] = label.into();
    let path = data.join(format!("manifest_{label}.json"));
    fs::write(&path, manifest.to_string()).unwrap();
    let out = root.join(format!("results_{label}"));
    let o = clbgmm(&["run", "--manifest", s(&path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn synth_writes_three_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = clbgmm(&["synth", "--out", s(out), "--seed", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["au.csv", "deep.csv", "manifest.json"]);
    for name in names {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn synth_rejects_impossible_compounds() {
    let dir = tempfile::tempdir().unwrap();
    let o = clbgmm(&["synth", "--out", s(dir.path()), "--compound", "100", "--basic", "3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("too many compound classes"));
}

#[test]
fn synth_cfee_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let o = clbgmm(&["synth", "--out", s(dir.path()), "--basic", "7", "--compound", "15"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let classes: usize = manifest["tasks"].as_array().unwrap().iter().map(|t| t["classes"].as_array().unwrap().len()).sum();
    assert_eq!(classes, 22);
}

#[test]
fn synth_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = clbgmm(&["synth", "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_with_missing_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(
        &manifest,
        r#"{"tasks": [{"name": "t", "classes": ["a"]}], "modalities": [{"name": "x", "path": "nope.csv", "dim": 2}]}"#,
    )
    .unwrap();
    let o = clbgmm(&["run", "--manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn run_with_malformed_manifest_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    fs::write(&manifest, "{\n  \"tasks\": [,\n}").unwrap();
    let o = clbgmm(&["run", "--manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_clbgmm"))
        .args(["report", "--results", "x.json", "--out", "y"])
        .env("CLBGMM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CLBGMM_THREADS"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(clbgmm(&[]).status.code(), Some(2));
    assert_eq!(clbgmm(&["run"]).status.code(), Some(2));
}

#[test]
fn run_metrics_oracle_report_compose() {
    let dir = tempfile::tempdir().unwrap();
    let merged = synth_and_run(dir.path(), None, &[1, 2], "merged");
    let deep = synth_and_run(dir.path(), Some(&["deep"]), &[1], "deep");
    let au = synth_and_run(dir.path(), Some(&["au"]), &[1], "au");

    let mut files: Vec<_> = fs::read_dir(&merged).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["aggregate.json", "run_seed_1.json", "run_seed_2.json"]);
    let run = load_run(&merged.join("run_seed_1.json")).unwrap();
    let t = run.task_names().len();
    assert_eq!(run.accuracy_matrix.rows().iter().map(Vec::len).sum::<usize>(), t * (t + 1) / 2);

    // metrics: csv contract and stored-vs-recomputed purity.
    let results = merged.join("run_seed_1.json");
    let o = clbgmm(&["metrics", "--results", s(&results)]);
    assert!(o.status.success());
    let csv = stdout(&o);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,AA,AIA,FM,IM");
    assert_eq!(lines.len(), t + 1);
    assert!(lines[1].ends_with(",,0"), "FM is absent at k = 1: {}", lines[1]);
    let o = clbgmm(&["metrics", "--results", s(&results), "--format", "json"]);
    let recomputed: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let stored: serde_json::Value = serde_json::from_str(&fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(recomputed, stored["metrics"]);

    // oracle: self-union equals the individual accuracy; deep/au union dominates both.
    let o = clbgmm(&["oracle", "--results-a", s(&results), "--results-b", s(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for line in stdout(&o).lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2], cells[4]);
        assert_eq!(cells[3], cells[4]);
    }
    let (deep_run, au_run) = (deep.join("run_seed_1.json"), au.join("run_seed_1.json"));
    let o = clbgmm(&["oracle", "--results-a", s(&deep_run), "--results-b", s(&au_run)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let all: Vec<f64> = out.lines().last().unwrap().split(',').skip(2).map(|c| c.parse().unwrap()).collect();
    assert!(all[2] >= all[0].max(all[1]));

    // report: three feature configurations give a pairwise difference table.
    let report = dir.path().join("report");
    let o = clbgmm(&["report", "--results", s(&deep_run), s(&au_run), s(&results), "--out", s(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for metric in ["AA", "AIA", "FM", "IM"] {
        let text = fs::read_to_string(report.join(format!("series_{metric}.csv"))).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,deep,au,merged");
        assert_eq!(text.lines().count(), t + 1);
    }
    assert!(report.join("accuracy_over_time_merged.csv").exists());
    let table = fs::read_to_string(report.join("per_class_correct.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert_eq!(header, "class,n_test,deep,au,merged,deep_minus_au,deep_minus_merged,au_minus_merged");
    for line in table.lines().skip(1) {
        let c: Vec<i64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert_eq!(c[3], c[0] - c[1]);
    }
    let evo = fs::read_to_string(report.join("relative_evolution.csv")).unwrap();
    assert!(evo.lines().any(|l| l.starts_with("merged,au,all,")));
}

#[test]
fn oracle_rejects_different_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_and_run(dir.path(), None, &[1], "a").join("run_seed_1.json");
    let other = tempfile::tempdir().unwrap();
    let o = clbgmm(&["synth", "--out", s(&other.path().join("data")), "--seed", "4", "--per-class-train", "20", "--per-class-test", "5"]);
    assert!(o.status.success());
    let b = synth_and_run(other.path(), None, &[1], "b").join("run_seed_1.json");
    let o = clbgmm(&["oracle", "--results-a", s(&a), "--results-b", s(&b)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("same test samples"));
}

#[test]
fn report_needs_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = clbgmm(&["report", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let bogus = dir.path().join("bogus.json");
    fs::write(&bogus, "{\"label\": 3}").unwrap();
    let o = clbgmm(&["report", "--results", s(&bogus), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("malformed results"));
}

#[test]
fn single_results_report_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let res = synth_and_run(dir.path(), None, &[3], "one");
    let again = dir.path().join("again");
    let o = clbgmm(&["run", "--manifest", s(&dir.path().join("data/manifest_one.json")), "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(fs::read(res.join("run_seed_3.json")).unwrap(), fs::read(again.join("run_seed_3.json")).unwrap());

    let report = dir.path().join("report");
    let o = clbgmm(&["report", "--results", s(&res.join("run_seed_3.json")), "--out", s(&report)]);
    assert!(o.status.success());
    let mut files: Vec<_> = fs::read_dir(&report).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(
        files,
        [
            "accuracy_over_time_one.csv",
            "per_class_correct.csv",
            "relative_evolution.csv",
            "series_AA.csv",
            "series_AIA.csv",
            "series_FM.csv",
            "series_IM.csv"
        ]
    );
}
