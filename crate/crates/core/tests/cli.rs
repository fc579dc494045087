use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pulsegate::artifact::RunManifest;
use pulsegate::beats::load_beats;
use pulsegate::signal::{read_peaks, CorpusManifest};

fn pulsegate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsegate"))
        .args(args)
        .env_remove("PULSEGATE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pulsegate(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn exit_codes() {
    assert_eq!(pulsegate(&["--help"]).status.code(), Some(0));
    assert_eq!(pulsegate(&["--version"]).status.code(), Some(0));
    assert_eq!(pulsegate(&["synth"]).status.code(), Some(2));
    assert_eq!(pulsegate(&["no-such-command"]).status.code(), Some(2));
    let missing = pulsegate(&[
        "segment",
        "--corpus",
        "/nonexistent/corpus",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let base = ["--subjects", "3", "--beats", "20"];
    for (out, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        let mut args = vec!["--seed", seed, "synth"];
        args.extend(base);
        args.extend(["--out", s(out)]);
        ok(&args);
    }
    let manifest = CorpusManifest::load(a.join("manifest.json")).unwrap();
    assert_eq!(manifest.records.len(), 3);
    let mut differs = false;
    for e in &manifest.records {
        let x = std::fs::read(a.join(&e.path)).unwrap();
        assert_eq!(x, std::fs::read(b.join(&e.path)).unwrap(), "{:?}", e.path);
        differs |= x != std::fs::read(c.join(&e.path)).unwrap();
    }
    assert!(differs);
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn seed_comes_from_the_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&[
        "--seed",
        "12",
        "synth",
        "--subjects",
        "2",
        "--beats",
        "10",
        "--out",
        s(&a),
    ]);
    let out = Command::new(env!("CARGO_BIN_EXE_pulsegate"))
        .args(["synth", "--subjects", "2", "--beats", "10", "--out", s(&b)])
        .env("PULSEGATE_SEED", "12")
        .output()
        .unwrap();
    assert!(out.status.success());
    let ra: RunManifest =
        serde_json::from_slice(&std::fs::read(a.join("run.json")).unwrap()).unwrap();
    let rb: RunManifest =
        serde_json::from_slice(&std::fs::read(b.join("run.json")).unwrap()).unwrap();
    assert_eq!(ra.seed, 12);
    assert_eq!(ra.config_hash, rb.config_hash);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[synth]\nsubjects = 3\nbeets = 20\n");
    let out = pulsegate(&[
        "--config",
        s(&cfg),
        "synth",
        "--out",
        s(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beets"), "{err}");
    assert!(err.contains(":3"), "{err}");
}

#[test]
fn detected_peaks_become_beats_or_skips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(
        d,
        "seed = 2\n[synth]\nsubjects = 3\nbeats = 60\n[detector]\nepochs = 6\nthreshold = 0.3\n",
    );
    let cfg = s(&cfg);
    let (corpus, model, peaks, beats) = (
        d.join("corpus"),
        d.join("det.pgm"),
        d.join("peaks"),
        d.join("beats.f32"),
    );
    ok(&["--config", cfg, "synth", "--out", s(&corpus)]);
    ok(&[
        "--config",
        cfg,
        "train-detector",
        "--corpus",
        s(&corpus),
        "--out",
        s(&model),
    ]);
    ok(&[
        "--config",
        cfg,
        "detect",
        "--model",
        s(&model),
        "--corpus",
        s(&corpus),
        "--out",
        s(&peaks),
    ]);
    ok(&[
        "--config",
        cfg,
        "segment",
        "--corpus",
        s(&corpus),
        "--peaks",
        s(&peaks),
        "--out",
        s(&beats),
    ]);

    let manifest = CorpusManifest::load(corpus.join("manifest.json")).unwrap();
    let mut detected = 0;
    for e in &manifest.records {
        let stem = Path::new(&e.path).file_stem().unwrap().to_str().unwrap();
        detected += read_peaks(peaks.join(format!("{stem}.peaks")))
            .unwrap()
            .len();
    }
    assert!(detected > 0);
    let run: RunManifest =
        serde_json::from_slice(&std::fs::read(d.join("beats.f32.run.json")).unwrap()).unwrap();
    let n_beats = load_beats(&beats).unwrap().len();
    assert_eq!(run.summary["peaks"], detected);
    assert_eq!(run.summary["beats"], n_beats);
    assert_eq!(
        n_beats + run.summary["skipped"].as_u64().unwrap() as usize,
        detected
    );
    let detect_run: RunManifest =
        serde_json::from_slice(&std::fs::read(peaks.join("run.json")).unwrap()).unwrap();
    assert_eq!(detect_run.config_hash, run.config_hash);
    assert!(peaks.join("metrics.json").exists());
}

#[test]
fn ten_fold_evaluation_writes_ten_rows_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(
        d,
        "seed = 3\n[synth]\nsubjects = 3\nbeats = 40\n[identify]\nepochs = 1\nscheme = \"10fold\"\nfusion_k = 2\n",
    );
    let cfg = s(&cfg);
    let (corpus, beats, eval) = (d.join("corpus"), d.join("beats.f32"), d.join("eval"));
    ok(&["--config", cfg, "synth", "--out", s(&corpus)]);
    ok(&[
        "--config",
        cfg,
        "segment",
        "--corpus",
        s(&corpus),
        "--out",
        s(&beats),
    ]);
    ok(&[
        "--config",
        cfg,
        "evaluate",
        "--beats",
        s(&beats),
        "--out",
        s(&eval),
    ]);
    let csv = std::fs::read_to_string(eval.join("runs.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 10 + 1, "{csv}");
    assert!(rows.last().unwrap().starts_with("mean±std"), "{csv}");
    assert!(rows.last().unwrap().contains('±'));
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval.join("metrics.json")).unwrap()).unwrap();
    let acc = metrics["scalars"]["accuracy_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(eval.join("confusion.csv").exists());
}

#[test]
fn report_refuses_mixed_config_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (a, b) = (d.join("a"), d.join("b"));
    ok(&[
        "--seed",
        "1",
        "synth",
        "--subjects",
        "2",
        "--beats",
        "10",
        "--out",
        s(&a),
    ]);
    ok(&[
        "--seed",
        "2",
        "synth",
        "--subjects",
        "2",
        "--beats",
        "10",
        "--out",
        s(&b),
    ]);
    let (ma, mb) = (a.join("manifest.json"), b.join("manifest.json"));
    let out = pulsegate(&["report", s(&ma), s(&mb), "--out", s(&d.join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--force"), "{err}");
    ok(&[
        "report",
        s(&ma),
        s(&mb),
        "--force",
        "--out",
        s(&d.join("r")),
    ]);
    ok(&["report", s(&ma), s(&ma), "--out", s(&d.join("same"))]);
    assert!(d.join("r/summary.csv").exists());
}

#[test]
fn siamese_training_on_embedder_subjects_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config(
        d,
        "seed = 4\n[synth]\nsubjects = 3\nbeats = 30\n[identify]\nepochs = 1\n[verify]\nepochs = 1\n",
    );
    let cfg = s(&cfg);
    let (corpus, beats, model) = (d.join("corpus"), d.join("beats.f32"), d.join("id.pgm"));
    ok(&["--config", cfg, "synth", "--out", s(&corpus)]);
    ok(&[
        "--config",
        cfg,
        "segment",
        "--corpus",
        s(&corpus),
        "--out",
        s(&beats),
    ]);
    ok(&[
        "--config",
        cfg,
        "train-id",
        "--beats",
        s(&beats),
        "--out",
        s(&model),
    ]);
    let out = pulsegate(&[
        "--config",
        cfg,
        "train-siamese",
        "--embedder",
        s(&model),
        "--beats",
        s(&beats),
        "--out",
        s(&d.join("head.pgm")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert!(!d.join("head.pgm").exists());
}
