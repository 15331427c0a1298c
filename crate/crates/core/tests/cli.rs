use std::path::Path;
use std::process::{Command, Output};

use scriptorium::checkpoint;
use scriptorium::synth::GrayImage;

const TINY: &str = r#"
seed = 11
[data]
vocab_size = 8
train_forms = 4
valid_forms = 1
test_forms = 2
[schedule.detector]
epochs = 1
batch_size = 4
[schedule.word]
epochs = 1
[schedule.char]
epochs = 1
[schedule.seq2seq]
epochs = 1
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scriptorium"))
        .current_dir(dir)
        .env_remove("SCRIPTORIUM_DATA_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = run(dir.path(), &["--config", "tiny.toml", "generate", "--data", "d"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn generate_is_deterministic_and_adds_augmented_split() {
    let a = setup();
    let b = setup();
    for sub in ["forms/train", "forms/train_da", "forms/test", "crops/train", "crops/test_noisy"] {
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("d").join(sub).join("manifest.jsonl")).unwrap();
        assert_eq!(read(&a), read(&b), "{sub}");
    }
    let lines = |sub: &str| {
        std::fs::read_to_string(a.path().join("d").join(sub).join("manifest.jsonl"))
            .unwrap()
            .lines()
            .count()
    };
    assert!(lines("forms/train_da") > lines("forms/train"));
    assert!(lines("crops/train_da") > lines("crops/train"));
}

#[test]
fn train_writes_loadable_identical_checkpoints_and_eval_emits_json() {
    let dir = setup();
    let p = dir.path();
    for out in ["a.ckpt", "b.ckpt"] {
        let o = run(p, &["--config", "tiny.toml", "train", "--task", "seq2seq", "--data", "d", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("event=epoch task=seq2seq epoch=0 loss="));
    }
    let a = std::fs::read(p.join("a.ckpt")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.ckpt")).unwrap());
    let model = checkpoint::load(&p.join("a.ckpt")).unwrap();
    assert_eq!(checkpoint::to_bytes(&model).unwrap(), a);
    assert!(std::fs::read_to_string(p.join("a.log")).unwrap().contains("event=checkpoint"));

    let o = run(p, &["--config", "tiny.toml", "train", "--task", "seq2seq", "--data", "d", "--out", "c.ckpt", "--resume", "a.ckpt"]);
    assert_eq!(code(&o), 0);
    assert_ne!(std::fs::read(p.join("c.ckpt")).unwrap(), a);

    let o = run(p, &["eval", "--task", "seq2seq", "--checkpoint", "a.ckpt", "--data", "d"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["wa"].is_number() && v["cer"].is_number() && v["wer"].is_null());
}

#[test]
fn predict_writes_overlay_only_when_asked() {
    let dir = setup();
    let p = dir.path();
    for (task, out) in [("detector", "det.ckpt"), ("word", "word.ckpt")] {
        let o = run(p, &["--config", "tiny.toml", "train", "--task", task, "--data", "d", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    GrayImage::filled(512, 256, 255).save_pgm(&p.join("blank.pgm")).unwrap();
    let args = ["predict", "--detector", "det.ckpt", "--recognizer", "word.ckpt", "blank.pgm"];
    let o = run(p, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(line["words"].as_array().unwrap().len(), 0);
    assert_eq!(line["text"], "");
    assert!(!p.join("ov").exists());
    let mut with_overlay = args.to_vec();
    with_overlay.extend(["--overlay", "ov"]);
    let o2 = run(p, &with_overlay);
    assert_eq!(o2.stdout, o.stdout);
    assert!(p.join("ov/blank.overlay.pgm").exists());

    let o = run(p, &["eval", "--task", "pipeline", "--checkpoint", "word.ckpt", "--detector", "det.ckpt", "--data", "d"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["wer"].is_number() && v["pipeline_cer"].is_number());
}

#[test]
fn exit_codes() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("typo.toml"), "[data]\ntrain_form = 3\n").unwrap();
    assert_eq!(code(&run(p, &["--config", "typo.toml", "generate", "--data", "x"])), 2);
    assert_eq!(code(&run(p, &["--config", "missing.toml", "generate"])), 2);
    assert_eq!(code(&run(p, &["train"])), 2);

    assert_eq!(code(&run(p, &["train", "--task", "word", "--data", "nowhere", "--out", "w.ckpt"])), 3);
    assert_eq!(
        code(&run(p, &["predict", "--detector", "none.ckpt", "--recognizer", "none.ckpt", "x.pgm"])),
        3
    );

    let nan = format!("{TINY}fault_inject_nan_step = 0\n");
    std::fs::write(p.join("nan.toml"), nan).unwrap();
    assert_eq!(code(&run(p, &["--config", "nan.toml", "train", "--task", "seq2seq", "--data", "d", "--out", "n.ckpt"])), 4);

    let o = run(p, &["--config", "tiny.toml", "train", "--task", "char", "--data", "d", "--out", "c.ckpt"]);
    assert_eq!(code(&o), 0);
    let mut bytes = std::fs::read(p.join("c.ckpt")).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(p.join("old.ckpt"), bytes).unwrap();
    assert_eq!(code(&run(p, &["eval", "--task", "char", "--checkpoint", "old.ckpt", "--data", "d"])), 5);
}

#[test]
fn data_dir_comes_from_the_environment() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_scriptorium"))
        .current_dir(dir.path())
        .env("SCRIPTORIUM_DATA_DIR", "envdata")
        .args(["--config", "tiny.toml", "--seed", "3", "generate"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("envdata/vocab.txt").exists());
    let cfg = std::fs::read_to_string(dir.path().join("envdata/config.toml")).unwrap();
    assert!(cfg.contains("seed = 3"));
}
