use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--dataset",
    "synthetic",
    "--synthetic-per-class",
    "12",
    "--synthetic-side",
    "16",
];

fn oaae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oaae"))
        .args(args)
        .env_remove("OAAE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("c.json");
    fs::write(&cfg, r#"{"batch_size": 16, "seed": 3}"#).unwrap();
    let out = dir.join(name);
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend(SMALL);
    args.extend(extra);
    oaae(&args)
}

#[test]
fn train_writes_checkpoint_and_one_loss_row() {
    let dir = TempDir::new().unwrap();
    let o = train(dir.path(), "m.oaae", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("m.oaae").exists());
    let log = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "epoch,l_latent,l_image,l_recon,l_enc,l_dec,l_ole,l_cls"
    );
}

#[test]
fn missing_config_names_the_path() {
    let o = oaae(&[
        "train",
        "--config",
        "/nonexistent/cfg.json",
        "--epochs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("/nonexistent/cfg.json"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"learning_rate": -1}"#).unwrap();
    assert_eq!(
        oaae(&["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
    fs::write(&cfg, r#"{"epochz": 3}"#).unwrap();
    assert_eq!(
        oaae(&["train", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    assert!(train(dir.path(), "a.oaae", &[]).status.success());
    assert!(train(dir.path(), "b.oaae", &[]).status.success());
    assert!(train(dir.path(), "c.oaae", &["--seed", "4"])
        .status
        .success());
    let read = |n: &str| fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.oaae"), read("b.oaae"));
    assert_ne!(read("a.oaae"), read("c.oaae"));
}

#[test]
fn score_rows_kinds_and_corrupt_checkpoint() {
    let dir = TempDir::new().unwrap();
    assert!(train(dir.path(), "m.oaae", &["--novelty-class", "3"])
        .status
        .success());
    let ckpt = dir.path().join("m.oaae");
    let score = |kind: &str, out: &str, ckpt: &Path| {
        let out = dir.path().join(out);
        let mut args = vec![
            "score",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--split",
            "train",
        ];
        args.extend(SMALL);
        args.extend([
            "--novelty-class",
            "3",
            "--kind",
            kind,
            "--out",
            out.to_str().unwrap(),
        ]);
        (oaae(&args), out)
    };
    let (o, angle) = score("angle", "angle.csv", &ckpt);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = fs::read_to_string(&angle)
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 4 * 12);
    assert!(rows.iter().all(|r| r.ends_with(",angle")));
    let (_, mse) = score("mse", "mse.csv", &ckpt);
    assert!(fs::read_to_string(&mse)
        .unwrap()
        .lines()
        .skip(1)
        .all(|r| r.ends_with(",mse")));

    let bad = dir.path().join("bad.oaae");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    fs::write(&bad, bytes).unwrap();
    let (o, _) = score("angle", "bad.csv", &bad);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad.oaae"), "{}", stderr(&o));
}

#[test]
fn eval_single_cell_and_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    let mut args = vec![
        "eval",
        "--epochs",
        "1",
        "--batch-size",
        "16",
        "--synthetic-classes",
        "2",
    ];
    args.extend(SMALL);
    args.extend(["--novelty-class", "1", "--out", out.to_str().unwrap()]);
    let o = oaae(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let cells: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("mean"))
        .collect();
    assert_eq!(cells.len(), 1);
    let auroc: f64 = cells[0].split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&auroc));

    let r = oaae(&[
        "report",
        "--input",
        out.to_str().unwrap(),
        "--dataset",
        "synthetic",
    ]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("Mean"));
}

#[test]
fn eval_all_classes_gives_a_cell_per_class_and_a_mean() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    let o = oaae(&[
        "eval",
        "--epochs",
        "1",
        "--batch-size",
        "32",
        "--dataset",
        "synthetic",
        "--synthetic-classes",
        "10",
        "--synthetic-per-class",
        "4",
        "--all-classes",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[10].starts_with("mean"));
}

#[test]
fn single_class_test_set_marks_the_cell() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.csv");
    let mut args = vec![
        "eval",
        "--epochs",
        "1",
        "--batch-size",
        "16",
        "--synthetic-classes",
        "2",
    ];
    args.extend(SMALL);
    args.extend([
        "--novelty-class",
        "1",
        "--test-classes",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let o = oaae(&args);
    assert_eq!(o.status.code(), Some(4));
    assert!(
        stderr(&o).to_lowercase().contains("auroc"),
        "{}",
        stderr(&o)
    );
    assert!(fs::read_to_string(&out)
        .unwrap()
        .contains("AUROC undefined"));
}

#[test]
fn check_passes_and_is_reproducible() {
    let a = oaae(&["check", "--seed", "7"]);
    let b = oaae(&["check", "--seed", "7"]);
    assert!(a.status.success(), "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("ole_grad_fd"));
}

#[test]
fn real_datasets_need_a_directory() {
    let o = oaae(&["train", "--dataset", "mnist", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let o = oaae(&[
        "train",
        "--dataset",
        "mnist",
        "--epochs",
        "1",
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("train-images-idx3-ubyte"),
        "{}",
        stderr(&o)
    );
}
