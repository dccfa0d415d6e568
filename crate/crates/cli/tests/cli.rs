use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use saliency3d::read_container;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_saliency3d"));
    cmd.args(args).env_remove("SALIENCY3D_JOBS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file below `dir` with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn usage_errors_exit_two() {
    let o = run(&["frobnicate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["evaluate", "--bogus"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["evaluate", "--saliency", "a", "--gt", "b", "--out", "c", "--mode", "sideways"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_one() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["attribute", "--manifest", "/nonexistent/m.json", "--layers", "conv", "--out", path(out.path())], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = run(&["overlay", "--saliency", "x", "--frames", "y", "--alpha", "1.5", "--out", path(out.path())], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(run(&["train-demo", "--jobs", "0", "--out", path(out.path())], &[]).status.code(), Some(1));
}

#[test]
fn attribute_fixture_matches_golden() {
    let before = snapshot(&fixtures());
    let out = tempfile::tempdir().unwrap();
    let manifest = fixtures().join("attribute/manifest.json");
    let o = run(&["attribute", "--manifest", path(&manifest), "--layers", "conv,layer1", "--out", path(out.path())], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got = read_container(out.path().join("fixture_0000.atc")).unwrap();
    let want = read_container(fixtures().join("golden/saliency/fixture_0000.atc")).unwrap();
    assert_eq!(got.dims(), want.dims());
    let err = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
    assert!(err <= 1e-6, "{err}");
    assert_eq!(
        std::fs::read(out.path().join("fixture_0000.json")).unwrap(),
        std::fs::read(fixtures().join("golden/saliency/fixture_0000.json")).unwrap()
    );
    let files: Vec<_> = snapshot(out.path()).into_keys().collect();
    assert_eq!(files, [PathBuf::from("fixture_0000.atc"), PathBuf::from("fixture_0000.json")]);
    assert_eq!(snapshot(&fixtures()), before);
}

#[test]
fn attribute_rejects_unknown_layer() {
    let out = tempfile::tempdir().unwrap();
    let manifest = fixtures().join("attribute/manifest.json");
    let o = run(&["attribute", "--manifest", path(&manifest), "--layers", "conv,fc", "--out", path(out.path())], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_fixture_matches_golden_in_both_modes() {
    let sal = fixtures().join("evaluate/saliency");
    let gt = fixtures().join("evaluate/boxes.jsonl");
    for (mode, name) in [("best-iou", "report_best_iou"), ("all-contours", "report_all_contours")] {
        let out = tempfile::tempdir().unwrap();
        let report = out.path().join("report.json");
        let args = ["evaluate", "--saliency", path(&sal), "--gt", path(&gt), "--mode", mode, "--both-pointing", "--csv"];
        let o = run(&[&args[..], &["--out", path(&report)]].concat(), &[]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(fixtures().join(format!("golden/{name}.json"))).unwrap());
        assert_eq!(
            std::fs::read(out.path().join("report.csv")).unwrap(),
            std::fs::read(fixtures().join(format!("golden/{name}.csv"))).unwrap()
        );
    }
}

#[test]
fn outputs_do_not_depend_on_job_count() {
    let sal = fixtures().join("evaluate/saliency");
    let gt = fixtures().join("evaluate/boxes.jsonl");
    let mut reports = Vec::new();
    for (flag, env) in [(Some("1"), None), (None, Some("4")), (Some("3"), Some("1"))] {
        let out = tempfile::tempdir().unwrap();
        let report = out.path().join("r.json");
        let mut args = vec!["evaluate", "--saliency", path(&sal), "--gt", path(&gt), "--out", path(&report)];
        if let Some(j) = flag {
            args.extend(["--jobs", j]);
        }
        let env: Vec<(&str, &str)> = env.map(|v| ("SALIENCY3D_JOBS", v)).into_iter().collect();
        assert_eq!(run(&args, &env).status.code(), Some(0));
        reports.push(std::fs::read(&report).unwrap());
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn overlay_fixture_matches_golden() {
    let out = tempfile::tempdir().unwrap();
    let sal = fixtures().join("golden/saliency");
    let frames = fixtures().join("overlay/frames");
    let o = run(&["overlay", "--saliency", path(&sal), "--frames", path(&frames), "--out", path(out.path())], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got = snapshot(out.path());
    assert_eq!(got.len(), 4);
    for (name, bytes) in got {
        assert_eq!(bytes, std::fs::read(fixtures().join("golden/overlay").join(name)).unwrap());
    }
}

#[test]
fn gradcheck_reference_model() {
    let o = run(&["gradcheck"], &[]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    let report: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(report["max_rel_error"].as_f64().unwrap() <= 1e-4);
    assert!(report["param_coords"].as_u64().unwrap() + report["tap_coords"].as_u64().unwrap() >= 200);
}

#[test]
fn train_demo_pipeline_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, jobs) in [(&a, "1"), (&b, "2")] {
        let args = ["train-demo", "--seed", "3", "--epochs", "1", "--per-class", "4", "--dumps", "2", "--gated", "on"];
        let o = run(&[&args[..], &["--jobs", jobs, "--out", path(dir.path())]].concat(), &[]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let snap = snapshot(a.path());
    assert_eq!(snap, snapshot(b.path()));
    for f in ["summary.json", "accuracy.jsonl", "model/topology.json", "dataset/boxes.jsonl", "frames/clip_0001.atc"] {
        assert!(snap.contains_key(Path::new(f)), "missing {f}");
    }
    assert!(snap.contains_key(Path::new("dumps/clip_0000/manifest.json")));

    let work = tempfile::tempdir().unwrap();
    let sal = work.path().join("sal");
    for id in ["clip_0000", "clip_0001"] {
        let m = a.path().join(format!("dumps/{id}/manifest.json"));
        let o = run(&["attribute", "--manifest", path(&m), "--layers", "conv,layer1,layer2", "--out", path(&sal)], &[]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let report = work.path().join("report.json");
    let gt = a.path().join("dataset/boxes.jsonl");
    let o = run(&["evaluate", "--saliency", path(&sal), "--gt", path(&gt), "--out", path(&report)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["frames"], 32);
    let frames = a.path().join("frames");
    let ov = work.path().join("ov");
    let o = run(&["overlay", "--saliency", path(&sal), "--frames", path(&frames), "--out", path(&ov)], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(snapshot(&ov).len(), 32);
    assert!(ov.join("clip_0001_f15_overlay.ppm").exists());
}
