use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn oodkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodkit"))
        .args(args)
        .output()
        .expect("spawn oodkit")
}

fn ok(args: &[&str]) -> String {
    let out = oodkit(args);
    assert!(
        out.status.success(),
        "oodkit {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// One synthetic bundle shared by every test in this file.
fn bundle() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(&["synth", "--seed", "3", "--out", s(dir.path())]);
        dir
    })
    .path()
}

/// Raw OODM scores file: dtype f64, kind scores, one column.
fn score_file_bytes(values: &[f64]) -> Vec<u8> {
    let mut b = b"OODM".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend([1, 2, 0, 0, 0]);
    b.extend((values.len() as u64).to_le_bytes());
    b.extend(1u64.to_le_bytes());
    for v in values {
        b.extend(v.to_le_bytes());
    }
    b
}

fn report_auroc(report_json: &Path, method: &str, k: Option<usize>) -> f64 {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report_json).unwrap()).unwrap();
    v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["method"] == method && r["k"] == serde_json::json!(k))
        .expect("row present")["auroc"]
        .as_f64()
        .unwrap()
}

#[test]
fn fit_score_eval_matches_benchmark() {
    let b = bundle();
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let cfg = b.join("run.json");
    ok(&["benchmark", "--config", s(&cfg), "--out", s(&w.join("report"))]);
    for f in ["report.csv", "report.md", "report.json", "timings.json"] {
        assert!(w.join("report").join(f).is_file(), "{f}");
    }

    for (method, k) in [("knn_distance", Some(10)), ("msp", None), ("rmd", None)] {
        let model = w.join(method);
        let mut fit = vec!["fit", "--config", s(&cfg), "--method", method, "--out", s(&model)];
        let k_arg = k.map(|k| k.to_string());
        if let Some(k) = &k_arg {
            fit.extend(["--k", k]);
        }
        ok(&fit);
        for split in ["in", "ood"] {
            let out = w.join(format!("{method}_{split}.oodm"));
            ok(&[
                "score",
                "--model",
                s(&model),
                "--test",
                s(&b.join(format!("test_{split}_embeddings.oodm"))),
                "--test-probs",
                s(&b.join(format!("test_{split}_probs.oodm"))),
                "--out",
                s(&out),
            ]);
        }
        let printed = ok(&[
            "eval",
            "--in-scores",
            s(&w.join(format!("{method}_in.oodm"))),
            "--ood-scores",
            s(&w.join(format!("{method}_ood.oodm"))),
            "--precise",
        ]);
        let got: f64 = printed.trim().parse().unwrap();
        assert_eq!(got, report_auroc(&w.join("report/report.json"), method, k), "{method}");
    }
}

#[test]
fn score_files_have_documented_layout() {
    let b = bundle();
    let work = tempfile::tempdir().unwrap();
    let model = work.path().join("model");
    let out = work.path().join("scores.oodm");
    ok(&["fit", "--config", s(&b.join("run.json")), "--method", "entropy", "--out", s(&model)]);
    ok(&[
        "score",
        "--model",
        s(&model),
        "--test",
        s(&b.join("test_in_embeddings.oodm")),
        "--test-probs",
        s(&b.join("test_in_probs.oodm")),
        "--out",
        s(&out),
    ]);
    let bytes = std::fs::read(&out).unwrap();
    let n = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    assert_eq!(&bytes[..4], b"OODM");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(&bytes[8..13], &[1, 2, 0, 0, 0]);
    assert_eq!(u64::from_le_bytes(bytes[21..29].try_into().unwrap()), 1);
    assert_eq!(bytes.len(), 29 + 8 * n);
    assert_eq!(n, 1000);

    let csv = std::fs::read_to_string(work.path().join("scores.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("row,score"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), n);
    let first = f64::from_le_bytes(bytes[29..37].try_into().unwrap());
    assert!((values[0] - first).abs() <= 1e-12 * first.abs().max(1.0));
}

#[test]
fn eval_reads_hand_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.oodm");
    let b = dir.path().join("b.oodm");
    std::fs::write(&a, score_file_bytes(&[0.1, 0.2])).unwrap();
    std::fs::write(&b, score_file_bytes(&[0.3, 0.15])).unwrap();
    // three of the four (in, ood) pairs are ordered correctly
    assert_eq!(ok(&["eval", "--in-scores", s(&a), "--ood-scores", s(&b)]).trim(), "0.7500");
    assert_eq!(ok(&["eval", "--in-scores", s(&b), "--ood-scores", s(&a)]).trim(), "0.2500");
}

#[test]
fn exit_codes() {
    let b = bundle();
    let dir = tempfile::tempdir().unwrap();
    let cfg = b.join("run.json");
    let model = dir.path().join("m");

    let bad = oodkit(&["fit", "--config", s(&cfg), "--method", "odin", "--out", s(&model)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));

    let big_k = oodkit(&["fit", "--config", s(&cfg), "--method", "knn_distance", "--k", "5001", "--out", s(&model)]);
    assert_eq!(big_k.status.code(), Some(3));

    let junk = dir.path().join("junk.oodm");
    std::fs::write(&junk, b"NOPE\x01\x00\x00\x00").unwrap();
    let magic = oodkit(&["eval", "--in-scores", s(&junk), "--ood-scores", s(&junk)]);
    assert_eq!(magic.status.code(), Some(3));

    let missing = oodkit(&["benchmark", "--config", s(&dir.path().join("absent.json"))]);
    assert_ne!(missing.status.code(), Some(0));
}
