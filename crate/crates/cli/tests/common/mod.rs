#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hloc_core::dataset::Condition;
use hloc_core::synthetic::{write_corpus, CorpusSpec};

pub fn hloc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hloc"))
}

pub fn run(args: &[&str]) -> Output {
    hloc().args(args).output().expect("spawn hloc")
}

/// 9 rooms × 10 frames of cloudy training imagery, and a query corpus in all
/// three conditions with frames halfway between the training ones.
pub fn write_corpora(root: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let corpus = root.join("corpus");
    let test = root.join("test");
    write_corpus(
        &CorpusSpec {
            seed,
            ..Default::default()
        },
        &corpus,
    )
    .unwrap();
    write_corpus(
        &CorpusSpec {
            seed: seed + 1,
            offset: 0.5,
            conditions: Condition::ALL.to_vec(),
            ..Default::default()
        },
        &test,
    )
    .unwrap();
    (corpus, test)
}

/// Writes a pipeline config next to the corpora and returns its path. Keys
/// in `extra` override the defaults.
pub fn write_config(root: &Path, extra: &str) -> PathBuf {
    let defaults = [
        ("corpus", "\"corpus\""),
        ("test_corpus", "\"test\""),
        ("test_conditions", "\"subdirs\""),
        ("work_dir", "\"run\""),
        ("spacing", "0.2"),
        ("method", "\"blockmean\""),
        ("grid_w", "16"),
        ("grid_h", "4"),
        ("seed", "7"),
    ];
    let overridden = |key: &str| {
        extra
            .lines()
            .any(|l| l.split('=').next().map(str::trim) == Some(key))
    };
    let mut text: String = defaults
        .iter()
        .filter(|(k, _)| !overridden(k))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    text.push_str(extra);
    let path = root.join("pipeline.toml");
    std::fs::write(&path, text).unwrap();
    path
}
