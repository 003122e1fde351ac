#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relrot::toy::write_toy;
use relrot_core::data::ToyShiftSpec;

/// Small toy shift on disk; returns the source and target manifests.
pub fn toy_on_disk(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let spec = ToyShiftSpec {
        samples_per_domain: n,
        image_size: 40,
        seed,
        ..ToyShiftSpec::default()
    };
    write_toy(&spec, dir).unwrap()
}

pub const TINY_CONFIG: &str = r#"
method = "relative-rotation"
lambda-entropy = 0.0
lr = 0.001
epochs = 2
batch-size = 8
main-hidden = 16
pretext-width = 6
grl-hidden = 8

[backbone]
kind = "small-conv"
feature-channels = 8
small-widths = [4, 4, 8]
"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

pub fn relrot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relrot")).args(args).output().unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
