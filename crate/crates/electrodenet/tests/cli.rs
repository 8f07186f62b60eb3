//! End-to-end checks of the command-line surface: exit codes, file
//! formats, determinism, and the experiment runner's journal.

#[allow(dead_code)]
mod common;

use electrodenet::wav::{write_wav, WavFormat};
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_electrodenet"))
}

fn write_corpus(dir: &Path, count: usize) -> Vec<PathBuf> {
    (0..count)
        .map(|i| {
            let path = dir.join(format!("u{i}.wav"));
            let signal = common::speech_like(3000 + i as u64, 8000);
            write_wav(&path, &signal, WavFormat::Float32).unwrap();
            path
        })
        .collect()
}

fn write_manifest(dir: &Path, paths: &[PathBuf], train: usize) -> PathBuf {
    let manifest = dir.join("manifest.txt");
    let mut text = String::new();
    for (i, p) in paths.iter().enumerate() {
        let split = if i < train { "train" } else { "test" };
        text.push_str(&format!("{}\tT{i}\t{split}\n", p.display()));
    }
    std::fs::write(&manifest, text).unwrap();
    manifest
}

#[test]
fn zero_epochs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_corpus(dir.path(), 1);
    let manifest = write_manifest(dir.path(), &paths, 1);
    let out = bin()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .args(["--arch", "dnn", "--epochs", "0", "--out"])
        .arg(dir.path().join("m.enet"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn wrong_sample_rate_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wrong.wav");
    // Hand-build an 8 kHz header.
    let mut bytes = electrodenet::wav::encode_wav(&vec![0.1; 4000], WavFormat::Pcm16);
    bytes[24..28].copy_from_slice(&8000u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let out = bin()
        .args(["encode", "--strategy", "ace", "--input"])
        .arg(&path)
        .arg("--output")
        .arg(dir.path().join("o.elgr"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("expected 16000 Hz"), "{stderr}");
}

#[test]
fn encode_vocode_hits_rms_target_and_csv_recounts() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_corpus(dir.path(), 1);
    let elgr_path = dir.path().join("s.elgr");
    let status = bin()
        .args(["encode", "--strategy", "ace", "--n", "8", "--input"])
        .arg(&paths[0])
        .arg("--output")
        .arg(&elgr_path)
        .status()
        .unwrap();
    assert!(status.success());
    let wav_path = dir.path().join("s.wav");
    let status = bin()
        .args(["vocode", "--format", "float32", "--input"])
        .arg(&elgr_path)
        .arg("--output")
        .arg(&wav_path)
        .status()
        .unwrap();
    assert!(status.success());
    let resynth = electrodenet::wav::read_wav(&wav_path).unwrap();
    let rms = (resynth.iter().map(|v| v * v).sum::<f64>() / resynth.len() as f64).sqrt();
    assert!((rms / 0.05 - 1.0).abs() < 0.01, "rms {rms}");

    // CSV emission rows equal the nonzero stimulus count.
    let csv_path = dir.path().join("s.csv");
    let status = bin()
        .args(["encode", "--strategy", "ace", "--n", "8", "--emit", "csv", "--input"])
        .arg(&paths[0])
        .arg("--output")
        .arg(&csv_path)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let bytes = std::fs::read(&elgr_path).unwrap();
    let elgr = electrodenet::ace::read_elgr(&mut bytes.as_slice()).unwrap();
    let nonzero: usize = elgr.frames.iter().map(|f| f.selected_count()).sum();
    assert_eq!(csv.lines().count() - 1, nonzero);
}

#[test]
fn training_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_corpus(dir.path(), 2);
    let manifest = write_manifest(dir.path(), &paths, 2);
    let run = |out: &Path| {
        let status = bin()
            .args(["--seed", "7", "train", "--manifest"])
            .arg(&manifest)
            .args(["--arch", "dnn-cs", "--n-topk", "8", "--epochs", "2", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run(&dir.path().join("a.enet"));
    let b = run(&dir.path().join("b.enet"));
    assert_eq!(a, b);
}

#[test]
fn run_experiment_grid_counts_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_corpus(dir.path(), 5);
    // 2 train, 3 test sentences.
    let manifest = write_manifest(dir.path(), &paths, 2);
    let model = dir.path().join("dnn.enet");
    let status = bin()
        .args(["--seed", "3", "train", "--manifest"])
        .arg(&manifest)
        .args(["--arch", "dnn", "--epochs", "2", "--out"])
        .arg(&model)
        .status()
        .unwrap();
    assert!(status.success());

    let out_dir = dir.path().join("exp");
    let plan = serde_json::json!({
        "manifest": manifest.to_str().unwrap(),
        "strategies": [
            {"name": "ace", "n": 8},
            {"name": "enet", "label": "dnn", "model": model.to_str().unwrap(), "n": 8},
        ],
        "conditions": [
            {"noise_label": "white", "snr_db": 0.0},
            {"noise_label": "white", "snr_db": 10.0},
        ],
        "predictors": ["stoi", "ncm"],
        "noises": {"white": {"kind": "White", "seed": 11}},
        "out_dir": out_dir.to_str().unwrap(),
        "seed": 5,
    });
    let plan_path = dir.path().join("plan.json");
    std::fs::write(&plan_path, serde_json::to_string_pretty(&plan).unwrap()).unwrap();
    let run = || {
        bin()
            .args(["run-experiment", "--plan"])
            .arg(&plan_path)
            .output()
            .unwrap()
    };
    let out = run();
    assert!(out.status.success(), "{out:?}");

    // 3 sentences x 2 conditions x 2 strategies x 2 predictors.
    let scores = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count() - 1, 24);
    // One pooled row per (pair, predictor); per-SNR: 2 SNRs x 2 predictors.
    let pooled = std::fs::read_to_string(out_dir.join("correlation.csv")).unwrap();
    assert_eq!(pooled.lines().count() - 1, 2);
    let by_snr = std::fs::read_to_string(out_dir.join("correlation_by_snr.csv")).unwrap();
    assert_eq!(by_snr.lines().count() - 1, 4);
    assert!(out_dir.join("mean_by_snr.csv").exists());

    // Resume: a second run reuses every journaled cell and reproduces
    // identical outputs.
    let journal_before = std::fs::read_to_string(out_dir.join("journal.jsonl")).unwrap();
    let out = run();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("0 cells computed"), "{stdout}");
    assert_eq!(
        std::fs::read_to_string(out_dir.join("journal.jsonl")).unwrap(),
        journal_before
    );
    let scores2 = std::fs::read_to_string(out_dir.join("scores.csv")).unwrap();
    if scores2 != scores {
        for (a, b) in scores.lines().zip(scores2.lines()) {
            if a != b {
                eprintln!("run1: {a}\nrun2: {b}");
            }
        }
    }
    assert_eq!(scores2, scores);
}
