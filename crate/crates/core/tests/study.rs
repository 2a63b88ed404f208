use edsim::config::EdSize;
use edsim::experiments::{run_study, write_exports, Arm, ScenarioMatrix, StudyOptions};
use edsim::interventions::InterventionKind;

fn small() -> ScenarioMatrix {
    ScenarioMatrix {
        sizes: vec![EdSize::Medium],
        interventions: vec![InterventionKind::FastTrack, InterventionKind::NurseRatio],
        replications: 3,
        horizon_days: 1,
        ..ScenarioMatrix::desk()
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let m = small();
    let one = run_study(
        &m,
        &StudyOptions {
            jobs: 1,
            ..Default::default()
        },
        &|_| {},
    )
    .unwrap();
    let four = run_study(
        &m,
        &StudyOptions {
            jobs: 4,
            ..Default::default()
        },
        &|_| {},
    )
    .unwrap();
    assert_eq!(one.runs.len(), 12);
    for (a, b) in one.runs.iter().zip(&four.runs) {
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.arrival_digest, b.arrival_digest);
    }
    assert_eq!(
        serde_json::to_string(&one.stats).unwrap(),
        serde_json::to_string(&four.stats).unwrap()
    );
}

#[test]
fn arms_of_a_replication_see_the_same_patients() {
    let results = run_study(&small(), &StudyOptions::default(), &|_| {}).unwrap();
    for cell in results.matrix.cells() {
        let base = results.arm(&cell, Arm::Baseline);
        let int = results.arm(&cell, Arm::Intervention);
        for (b, i) in base.iter().zip(&int) {
            assert_eq!(b.rep, i.rep);
            assert_eq!(b.arrival_digest, i.arrival_digest);
        }
    }
}

#[test]
fn exports_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let results = run_study(&small(), &StudyOptions::default(), &|_| {}).unwrap();
    write_exports(&results, dir.path()).unwrap();
    for name in [
        "stat_results.csv",
        "summary_table.csv",
        "lwbs_heatmap.csv",
        "wait_breakdown.csv",
        "runs.csv",
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.lines().count() > 1, "{name} has no rows");
    }
    let stats = std::fs::read_to_string(dir.path().join("stat_results.csv")).unwrap();
    assert_eq!(stats.lines().count(), 1 + 2 * 4);
}

#[test]
fn saved_study_reloads_with_identical_exports() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let results = run_study(&small(), &StudyOptions::default(), &|_| {}).unwrap();
    edsim::experiments::save_study(&results, first.path()).unwrap();
    let loaded = edsim::experiments::load_study(first.path()).unwrap();
    assert_eq!(loaded.runs, results.runs);
    write_exports(&loaded, second.path()).unwrap();
    for name in [
        "stat_results.csv",
        "summary_table.csv",
        "lwbs_heatmap.csv",
        "wait_breakdown.csv",
        "runs.csv",
    ] {
        let a = std::fs::read(first.path().join(name)).unwrap();
        let b = std::fs::read(second.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
