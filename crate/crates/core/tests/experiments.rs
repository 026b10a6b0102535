use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicBool;

use punch_core::experiments::{run_experiment, ExperimentConfig, RunOptions, Summary};
use punch_core::node::Mode;

fn small() -> ExperimentConfig {
    let doc = r#"{
        "topology": { "kind": "star", "duration": 5 },
        "sweep": { "parameter": "data_rate_kbps", "values": [16, 64], "repetitions": 2 }
    }"#;
    ExperimentConfig::from_json_str(doc, &[]).unwrap()
}

fn opts() -> RunOptions {
    RunOptions {
        jobs: Some(2),
        write_series: true,
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "cells"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            out.push((
                p.strip_prefix(dir).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            ));
        }
    }
    out
}

#[test]
fn sweep_writes_artifacts_tagged_with_seed_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let report = run_experiment(&cfg, dir.path(), &AtomicBool::new(false), &opts()).unwrap();
    assert_eq!(report.results.len(), 2 * 2 * 3);
    assert!(report.summary.complete);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("seeds.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = manifest["seeds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, cfg.sweep.seeds());

    let mut csvs = vec![dir.path().join("cells.csv")];
    csvs.extend(
        fs::read_dir(dir.path().join("cells"))
            .unwrap()
            .map(|e| e.unwrap().path()),
    );
    assert_eq!(csvs.len(), 1 + 12);
    for path in csvs {
        let mut r = csv::Reader::from_path(&path).unwrap();
        let h = r.headers().unwrap().clone();
        assert_eq!((&h[0], &h[1]), ("seed", "mode"), "{}", path.display());
        for row in r.records() {
            let row = row.unwrap();
            assert!(seeds.contains(&row[0].parse().unwrap()));
            assert!(Mode::ALL.iter().any(|m| m.label() == &row[1]));
        }
    }

    let summary = Summary::load(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary, report.summary);
    let base = summary.point(Some(16.0), Mode::Baseline).unwrap();
    assert_eq!(base.metric("throughput_gain").unwrap().mean, 1.0);
    assert_eq!(base.metric("coding_gain").unwrap().mean, 1.0);
    for p in &summary.points {
        assert_eq!(p.runs, 2);
        for m in ["avg_queue", "loss_rate", "throughput_gain", "coding_gain"] {
            assert!(p.metric(m).is_some(), "{m} missing at {:?}", p.x);
        }
    }
}

#[test]
fn rerun_from_echoed_config_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&small(), a.path(), &AtomicBool::new(false), &opts()).unwrap();
    let echoed = ExperimentConfig::load(&a.path().join("config.json"), &[]).unwrap();
    assert_eq!(echoed, small());
    let single = RunOptions {
        jobs: Some(1),
        ..opts()
    };
    run_experiment(&echoed, b.path(), &AtomicBool::new(false), &single).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x, y, "{} differs", x.0);
    }
}

#[test]
fn interrupted_run_still_writes_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small(), dir.path(), &AtomicBool::new(true), &opts()).unwrap();
    assert!(report.results.is_empty());
    let s = Summary::load(&dir.path().join("summary.json")).unwrap();
    assert!(!s.complete);
    assert_eq!(s.cells_done, 0);
    assert_eq!(s.cells_total, 12);
}
