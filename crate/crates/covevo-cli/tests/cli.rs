//! Black-box tests of the covevo binary.

use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

fn covevo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covevo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_blob_tsv(dir: &Path) {
    let data = covevo::data::two_blobs(160, 5);
    let mut text = String::from("x0\tx1\ttarget\n");
    for (row, &label) in data.features.rows().into_iter().zip(&data.labels) {
        writeln!(text, "{}\t{}\t{}", row[0], row[1], label).unwrap();
    }
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("blob.tsv"), text).unwrap();
}

fn write_config(tmp: &Path) -> std::path::PathBuf {
    let text = "[experiment]\n\
        datasets = [\"blob\"]\n\
        data_dir = \"data\"\n\
        q_grid = [0.0, 0.5]\n\
        strategies = [\"supervised\", \"nc\"]\n\
        repetitions = 1\n\
        output_dir = \"results\"\n\
        global_seed = 3\n\n\
        [ga]\npopulation_size = 4\ngenerations = 2\n\n\
        [train]\nlearning_rate = 0.05\n";
    let path = tmp.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_lists_all_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covevo(&["--help"], tmp.path());
    assert!(out.status.success());
    let text = stdout(&out);
    for verb in ["run", "summarize", "fetch"] {
        assert!(text.contains(verb), "--help must mention {verb}");
    }
}

#[test]
fn run_with_missing_config_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = covevo(&["run", "no_such_file.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn run_then_summarize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    write_blob_tsv(&tmp.path().join("data"));
    let config = write_config(tmp.path());

    let out = covevo(&["run", config.to_str().unwrap()], tmp.path());
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("results in"));
    assert!(text.contains("SUPERVISED"));
    assert!(text.contains("NC"));

    let results = tmp.path().join("results");
    assert!(results.join("records.csv").is_file());
    assert!(results.join("summary.csv").is_file());
    assert!(results.join("plots").join("accuracy_vs_q.svg").is_file());

    let out = covevo(&["summarize", results.to_str().unwrap()], tmp.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("wrote"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    write_blob_tsv(&tmp.path().join("data"));
    let config = write_config(tmp.path());

    let out = covevo(
        &["run", config.to_str().unwrap(), "--seed", "99"],
        tmp.path(),
    );
    assert!(out.status.success());
    let resolved =
        std::fs::read_to_string(tmp.path().join("results").join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("global_seed = 99"), "{resolved}");
}

#[test]
fn fetch_serves_from_cache_without_network() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    std::fs::create_dir_all(&cache).unwrap();
    let vendored = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/breast_w.tsv.gz");
    std::fs::copy(&vendored, cache.join("breast_w.tsv.gz")).unwrap();

    let out = covevo(
        &["fetch", "breast_w", "--cache", cache.to_str().unwrap()],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).trim_end().ends_with("breast_w.tsv.gz"));
}
