use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn edsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data/scenarios")
        .join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry
            .strip_prefix(dir)
            .unwrap()
            .to_string_lossy()
            .into_owned();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn run_with_defaults_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = edsim(&["run", "--days", "1", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["arrivals"].as_u64().unwrap() > 0);
    for f in [
        "ledger.jsonl",
        "timeseries.csv",
        "patients.csv",
        "bottlenecks.json",
        "archive/pairs.json",
        "archive/checkpoint_0.bin",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn same_run_twice_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = edsim(&[
            "run",
            "--days",
            "1",
            "--seed",
            "42",
            "--batch",
            "180",
            "--intervention",
            "fast_track",
            "--out",
            s(out),
        ]);
        assert_eq!(code(&r), 0);
    }
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn missing_or_invalid_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.yaml");
    let r = edsim(&["run", "--scenario", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);

    let bad = dir.path().join("bad.yaml");
    fs::write(&bad, "name: bad\nsize: medium\nfloor_plan: medium\narrivals: {lambda_avg: 4}\nrooms: {exam_room: 99}\nstaffing: {}\n").unwrap();
    let r = edsim(&["validate-config", "--scenario", s(&bad)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("invalid configuration"));

    let r = edsim(&["validate-config", "--scenario", s(&shipped("medium.yaml"))]);
    assert_eq!(code(&r), 0);
}

#[test]
fn unknown_flags_are_rejected() {
    let r = edsim(&["run", "--out", "x", "--frobnicate"]);
    assert_ne!(code(&r), 0);
    assert!(!r.stderr.is_empty());
}

#[test]
fn commands_in_a_run_produce_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cmds = dir.path().join("cmds.jsonl");
    fs::write(
        &cmds,
        "{\"t\": 100, \"action\": \"add_staff\", \"params\": {\"role\": \"doctor\", \"specialization\": \"general\"}}\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let r = edsim(&[
        "run",
        "--days",
        "1",
        "--batch",
        "60",
        "--commands",
        s(&cmds),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("archive/pairs.json")).unwrap()).unwrap();
    let with_commands: Vec<_> = index["batches"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|b| !b["commands"].as_array().unwrap().is_empty())
        .collect();
    assert_eq!(with_commands.len(), 1);
    assert_eq!(with_commands[0]["batch"], 1);
    assert!(out.join("archive/intervened_1.evlog").exists());
}

#[test]
fn replay_paths_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        code(&edsim(&[
            "run",
            "--days",
            "1",
            "--batch",
            "240",
            "--out",
            s(&out)
        ])),
        0
    );
    let archive = out.join("archive");

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let r = edsim(&[
        "replay",
        "--archive",
        s(&archive),
        "--batch",
        "2",
        "--inject",
        s(&empty),
    ]);
    assert_eq!(code(&r), 0);
    assert_eq!(
        fs::read(archive.join("baseline_2.evlog")).unwrap(),
        fs::read(archive.join("intervened_2.evlog")).unwrap()
    );

    let inject = dir.path().join("inject.jsonl");
    fs::write(
        &inject,
        "{\"t\": 500, \"action\": \"add_staff\", \"params\": {\"role\": \"nurse\"}}\n",
    )
    .unwrap();
    let pair_dir = dir.path().join("pair");
    let r = edsim(&[
        "replay",
        "--archive",
        s(&archive),
        "--batch",
        "2",
        "--inject",
        s(&inject),
        "--out",
        s(&pair_dir),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let pair: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pair_dir.join("pair.json")).unwrap()).unwrap();
    assert_eq!(pair["commands"].as_array().unwrap().len(), 1);
    assert_eq!(pair["first_injection"], 500);
    assert_ne!(
        fs::read(pair_dir.join("baseline.evlog")).unwrap(),
        fs::read(pair_dir.join("intervened.evlog")).unwrap()
    );

    let r = edsim(&[
        "replay",
        "--archive",
        s(&archive),
        "--batch",
        "99",
        "--inject",
        s(&empty),
    ]);
    assert_eq!(code(&r), 1);

    let r = edsim(&[
        "replay",
        "--archive",
        s(&archive),
        "--batch",
        "0",
        "--inject",
        s(&empty),
        "--scenario",
        s(&shipped("large.yaml")),
    ]);
    assert_eq!(code(&r), 3);
}

#[test]
fn study_is_independent_of_jobs_and_exports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (one, many) = (dir.path().join("one"), dir.path().join("many"));
    for (out, jobs) in [(&one, "1"), (&many, "8")] {
        let r = edsim(&[
            "study",
            "--preset",
            "desk",
            "--reps",
            "5",
            "--days",
            "1",
            "--jobs",
            jobs,
            "--out",
            s(out),
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(
        fs::read(one.join("stat_results.csv")).unwrap(),
        fs::read(many.join("stat_results.csv")).unwrap()
    );
    let runs = fs::read_to_string(one.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 5 * 2 * 3);

    let exported = dir.path().join("exported");
    assert_eq!(
        code(&edsim(&[
            "export",
            "--study",
            s(&one),
            "--out",
            s(&exported)
        ])),
        0
    );
    for f in [
        "stat_results.csv",
        "summary_table.csv",
        "lwbs_heatmap.csv",
        "wait_breakdown.csv",
        "runs.csv",
    ] {
        assert_eq!(
            fs::read(one.join(f)).unwrap(),
            fs::read(exported.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn matrix_files_validate_and_bad_presets_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = dir.path().join("matrix.yaml");
    fs::write(
        &matrix,
        "sizes: [medium]\ninterventions: [split_flow]\nreplications: 2\nhorizon_days: 1\n",
    )
    .unwrap();
    let r = edsim(&["validate-config", "--matrix", s(&matrix)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));

    let r = edsim(&["study", "--preset", "nope", "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
    fs::write(
        &matrix,
        "sizes: [medium]\ninterventions: [split_flow]\nreplications: 0\n",
    )
    .unwrap();
    let r = edsim(&["study", "--matrix", s(&matrix), "--out", s(dir.path())]);
    assert_eq!(code(&r), 2);
}
