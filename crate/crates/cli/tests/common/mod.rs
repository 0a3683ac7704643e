#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn pop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pop")).args(args).env_remove("POP_OUTPUT_ROOT").output().expect("spawn pop")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn ok(out: &Output) {
    assert_eq!(code(out), 0, "pop failed: {}", stderr(out));
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Schema line, header, and rows of a harness CSV.
pub fn csv(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let schema = lines.next().expect("schema line").to_string();
    let header = lines.next().expect("header").split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (schema, header, rows)
}

/// `pop train` with the seconds-scale smoke config.
pub fn smoke_train(out: &Path, extra: &[&str]) -> Output {
    let conf = configs().join("smoke.conf");
    let mut args = vec!["train", "--config", s(&conf), "--out", s(out)];
    args.extend_from_slice(extra);
    pop(&args)
}
