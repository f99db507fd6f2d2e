use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dgl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgl"))
        .args(args)
        .output()
        .expect("spawn dgl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

const SMALL: &str = "\
seed = 4
[data]
kind = gridimg
n = 240
classes = 2
noise = 1.0
[model]
arch = cifar6
width = 2
[train]
trainer = sync
epochs = 2
batch_size = 16
";

#[test]
fn gradcheck_passes_and_exits_zero() {
    let o = dgl(&["-q", "gradcheck", "--cases", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("all passed"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = dgl(&["train", "--config", "/nonexistent/run.conf"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).starts_with("error:"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(&path, SMALL.replace("epochs = 2", "epochs = two")).unwrap();
    let o = dgl(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.epochs"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_help() {
    assert_eq!(code(&dgl(&["frobnicate"])), 2);
    assert_eq!(code(&dgl(&["--help"])), 0);
}

#[test]
fn repeated_train_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.conf");
    fs::write(&cfg, SMALL).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = dgl(&["-q", "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("step,epoch,stage,metric,value\n"));
    assert!(text.lines().any(|l| l.contains(",6,test_acc,")));

    let other = dgl(&["-q", "--seed", "5", "train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&other), 0);
    assert_ne!(other.stdout, text.as_bytes());
}

#[test]
fn flops_table_for_shipped_config() {
    let o = dgl(&["flops", "--config", repo_config("cifar6_flops.conf").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("stage,primary_macs,aux_macs,aux_ratio,head\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 7);
    assert!(text.contains("first-stage ratio"));
}

#[test]
fn every_shipped_config_parses() {
    for entry in fs::read_dir(repo_config("")).unwrap() {
        let path = entry.unwrap().path();
        let o = dgl(&["flops", "--config", path.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}: {}", path.display(), stderr(&o));
    }
}
