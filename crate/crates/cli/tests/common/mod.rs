//! Fixture files and a thin wrapper around the pipeline binary.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use offense_core::corpus::LabeledExample;
use offense_core::synthetic::{trigger_corpus, TriggerCorpusConfig};
use offense_core::Label;

pub const BIN: &str = env!("CARGO_BIN_EXE_offense-pipeline");

pub fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("OFFENSE_PIPELINE_SEED")
        .output()
        .expect("pipeline binary runs")
}

pub fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub struct Fixture {
    pub dir: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub gold: PathBuf,
    pub weak: PathBuf,
}

fn olid_row(e: &LabeledExample) -> String {
    let (b, c) = if e.label == Label::Off { ("TIN", "IND") } else { ("NULL", "NULL") };
    format!("{}\t{}\t{}\t{b}\t{c}\n", e.id, e.text, e.label)
}

/// OLID-style train/test files from the trigger-word corpus plus a small
/// weakly labeled corpus (with duplicates) for preprocessing.
pub fn fixture(dir: &Path, train_size: usize, test_size: usize) -> Fixture {
    let all = trigger_corpus(&TriggerCorpusConfig {
        size: train_size + test_size,
        ..Default::default()
    })
    .examples;
    let (train, test) = all.split_at(train_size);
    let f = Fixture {
        dir: dir.to_path_buf(),
        train: dir.join("olid-training.tsv"),
        test: dir.join("testset-levela.tsv"),
        gold: dir.join("labels-levela.csv"),
        weak: dir.join("weak.tsv"),
    };
    let mut text = String::from("id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c\n");
    train.iter().for_each(|e| text.push_str(&olid_row(e)));
    fs::write(&f.train, text).unwrap();
    let mut text = String::from("id\ttweet\n");
    let mut gold = String::new();
    for e in test {
        text.push_str(&format!("{}\t{}\n", e.id, e.text));
        gold.push_str(&format!("{},{}\n", e.id, e.label));
    }
    fs::write(&f.test, text).unwrap();
    fs::write(&f.gold, gold).unwrap();
    let mut weak = String::from("id\ttext\taverage\tstd\n");
    for (i, e) in all.iter().chain(all.iter().take(50)).enumerate() {
        let mean = if e.label == Label::Off { 0.8 } else { 0.2 };
        weak.push_str(&format!("w{i}\t{}\t{mean}\t0.1\n", e.text));
    }
    fs::write(&f.weak, weak).unwrap();
    f
}

/// Files of `dir` that count as primary outputs (everything except the log
/// and the config dump, whose `output_dir` differs between runs).
pub fn primary_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_str().unwrap();
            name != "run.log" && name != "resolved_config.toml"
        })
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

/// The resolved config of `dir` with its `output_dir` line removed.
pub fn config_without_output(dir: &Path) -> String {
    fs::read_to_string(dir.join("resolved_config.toml"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("output_dir"))
        .collect::<Vec<_>>()
        .join("\n")
}
