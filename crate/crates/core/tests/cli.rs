use std::path::Path;
use std::process::{Command, Output};

use parableu_core::cli::{subsample, RunManifest, MANIFEST_FILE};
use parableu_core::data::{scored_corpus, Lexicon};
use proptest::prelude::*;

fn parableu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parableu"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = parableu(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = parableu(args);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_MODEL: [&str; 10] = [
    "--hidden",
    "16",
    "--heads",
    "2",
    "--layers",
    "1",
    "--max-len",
    "24",
    "--batch-size",
    "4",
];

#[test]
fn exit_codes_follow_error_categories() {
    let (c, err) = code(&["metrics", "--bogus"]);
    assert_eq!(c, 2);
    assert!(err.starts_with("error[usage]"), "{err}");
    assert_eq!(code(&["metrics", "--input", "/nonexistent/x.tsv"]).0, 4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "pretrain.steps=ten\n").unwrap();
    let corpus = dir.path().join("c.tsv");
    std::fs::write(&corpus, "a b\tc d\n").unwrap();
    let (c, err) = code(&[
        "--config",
        s(&cfg),
        "--out-dir",
        s(dir.path()),
        "pretrain",
        "--corpus",
        s(&corpus),
    ]);
    assert_eq!(c, 3, "{err}");
    assert!(err.starts_with("error[config]"), "{err}");
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "g\tr\tc\tabc\n").unwrap();
    assert_eq!(code(&["evaluate", "--data", s(&bad)]).0, 5);
    assert_eq!(
        code(&[
            "sweep",
            "--kind",
            "finetune-fraction",
            "--grid",
            "1",
            "--data",
            s(&bad)
        ])
        .0,
        2
    );
    assert_eq!(code(&["--help"]).0, 0);
}

#[test]
fn metrics_prints_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.tsv");
    std::fs::write(
        &input,
        "the cat sat\tthe cat sat\nthe cat sat\ta dog ran\nhello world\thello there world\n",
    )
    .unwrap();
    let out = ok(&["metrics", "--input", s(&input)]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "line,bleu,ter,rouge_l,meteor_lite,chrf_pp");
    assert_eq!(lines.len(), 4);
    let first: Vec<f64> = lines[1]
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first[1], 0.0);
    assert!((first[2] - 1.0).abs() < 1e-9);

    let out_dir = dir.path().join("m");
    ok(&["--out-dir", s(&out_dir), "metrics", "--input", s(&input)]);
    let per_pair = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(per_pair.lines().count(), 4);
    let corpus = std::fs::read_to_string(out_dir.join("corpus.csv")).unwrap();
    assert_eq!(corpus.lines().next(), Some("metric,value"));
    assert!(out_dir.join(MANIFEST_FILE).exists());
}

#[test]
fn evaluate_reports_every_classical_metric() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("scored.tsv");
    ok(&[
        "--seed",
        "2",
        "--out-dir",
        s(dir.path()),
        "synth",
        "--kind",
        "scored",
        "--count",
        "300",
    ]);
    std::fs::rename(dir.path().join("scored.tsv"), &data).unwrap();
    let table = ok(&["evaluate", "--data", s(&data)]);
    for m in ["bleu", "ter", "rouge_l", "meteor_lite", "chrf_pp"] {
        assert!(table.contains(m), "{m} missing from\n{table}");
    }
    assert_eq!(
        code(&["evaluate", "--data", s(&data), "--metric", "model"]).0,
        3
    );
}

fn pretrain(dir: &Path, corpus: &Path) {
    let mut args = vec![
        "--seed",
        "5",
        "--out-dir",
        s(dir),
        "pretrain",
        "--corpus",
        s(corpus),
        "--steps",
        "10",
    ];
    args.extend(SMALL_MODEL);
    ok(&args);
}

#[test]
fn pretrain_and_finetune_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "1", "--out-dir", s(d), "synth", "--count", "120"]);
    ok(&[
        "--seed",
        "1",
        "--out-dir",
        s(d),
        "synth",
        "--kind",
        "scored",
        "--count",
        "120",
    ]);
    let (corpus, scored) = (d.join("corpus.tsv"), d.join("scored.tsv"));

    let (a, b) = (d.join("a"), d.join("b"));
    pretrain(&a, &corpus);
    pretrain(&b, &corpus);
    let log = std::fs::read_to_string(a.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 11);
    for f in ["final.ckpt", "loss_log.csv", "vocab.txt"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = RunManifest::load(&a.join(MANIFEST_FILE)).unwrap();
    assert_eq!(
        (manifest.subcommand.as_str(), manifest.seed),
        ("pretrain", 5)
    );
    assert_eq!(manifest.config["pretrain.steps"], "10");
    assert!(manifest.finished_at >= manifest.started_at);

    let finetune = |out: &Path| {
        ok(&[
            "--seed",
            "3",
            "--out-dir",
            s(out),
            "finetune",
            "--checkpoint",
            s(&a.join("final.ckpt")),
            "--vocab",
            s(&a.join("vocab.txt")),
            "--data",
            s(&scored),
            "--steps",
            "12",
            "--eval-every",
            "4",
            "--batch-size",
            "8",
        ])
    };
    let (fa, fb) = (d.join("fa"), d.join("fb"));
    finetune(&fa);
    finetune(&fb);
    for f in ["finetuned.ckpt", "val_curve.csv"] {
        assert_eq!(
            std::fs::read(fa.join(f)).unwrap(),
            std::fs::read(fb.join(f)).unwrap(),
            "{f}"
        );
    }

    let out = ok(&[
        "generate",
        "--checkpoint",
        s(&fa.join("finetuned.ckpt")),
        "--vocab",
        s(&a.join("vocab.txt")),
        "--demo-ref",
        "the man bought a car",
        "--demo-cand",
        "the man did not buy a car",
        "--ref",
        "the girl saw a dog",
        "--ref",
        "a boy read a book",
        "--beam",
        "2",
        "--max-len",
        "8",
    ]);
    let rows: Vec<serde_json::Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["entailment_probability"].as_f64().is_some());

    let report = ok(&[
        "evaluate",
        "--data",
        s(&scored),
        "--metric",
        "bleu,model",
        "--checkpoint",
        s(&fa.join("finetuned.ckpt")),
        "--vocab",
        s(&a.join("vocab.txt")),
    ]);
    assert!(report.contains("| parableu "), "{report}");
}

#[test]
fn config_file_settings_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--out-dir", s(d), "synth", "--count", "40"]);
    let cfg = d.join("run.cfg");
    std::fs::write(
        &cfg,
        "# short run\nseed=9\npretrain.steps=3\nmodel.hidden=16\nmodel.heads=2\nmodel.layers=1\n",
    )
    .unwrap();
    let out = d.join("p");
    ok(&[
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
        "pretrain",
        "--corpus",
        s(&d.join("corpus.tsv")),
        "--steps",
        "4",
    ]);
    let m = RunManifest::load(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.seed, 9);
    assert_eq!(m.config["pretrain.steps"], "4");
    assert_eq!(m.config["model.hidden"], "16");
    std::fs::write(&cfg, "colour=red\n").unwrap();
    assert_ne!(
        code(&["--config", s(&cfg), "metrics", "--input", s(&cfg)]).0,
        0
    );
}

#[test]
fn subsample_edge_cases() {
    let data = scored_corpus(&Lexicon::builtin(), 50, 1).unwrap();
    assert_eq!(subsample(&data, 1.0, 3).unwrap(), data);
    assert_eq!(subsample(&data, 0.001, 3).unwrap().len(), 1);
    for bad in [0.0, 1.5, f64::NAN] {
        assert!(subsample(&data, bad, 3).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subsamples_are_ordered_sized_and_seeded(n in 1usize..120, fraction in 0.01f64..1.0, seed in 0u64..1000) {
        let data = scored_corpus(&Lexicon::builtin(), n, 2).unwrap();
        let sub = subsample(&data, fraction, seed).unwrap();
        let want = ((fraction * n as f64).round() as usize).max(1);
        prop_assert_eq!(sub.len(), want);
        let mut it = data.iter();
        for p in &sub {
            prop_assert!(it.any(|q| q == p));
        }
        prop_assert_eq!(sub, subsample(&data, fraction, seed).unwrap());
    }
}
