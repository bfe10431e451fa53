use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn saca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saca"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn saca")
}

fn saca_stdin(dir: &Path, args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_saca"))
        .current_dir(dir)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn saca");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TOY: [&str; 5] = ["--corpus", "normalized", "--data", "syn", "--preset"];

fn toy(args: &[&str]) -> Vec<String> {
    TOY.iter()
        .chain(["toy"].iter())
        .chain(args)
        .map(|s| s.to_string())
        .collect()
}

fn run(dir: &Path, args: &[String]) -> Value {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&saca(dir, &refs))
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = saca(tmp.path(), &["synth", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = saca(tmp.path(), &["evaluate", "--task", "summarize", "--corpus", "synthetic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_override_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = saca(tmp.path(), &["synth", "--set", "sede=3"]);
    assert_eq!(out.status.code(), Some(2));
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(line["kind"], "usage");
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&saca(tmp.path(), &["synth", "--seed", "9", "--out", out]));
    }
    let files: Vec<_> = fs::read_dir(tmp.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(!files.is_empty());
    for name in files {
        assert_eq!(
            fs::read(tmp.path().join("a").join(&name)).unwrap(),
            fs::read(tmp.path().join("b").join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn runtime_error_is_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = saca(tmp.path(), &["build-lexicon", "--corpus", "normalized", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    let line: Value = serde_json::from_str(&stderr).unwrap();
    assert_eq!(line["status"], "error");
    assert!(line["kind"].is_string() && line["message"].is_string());
}

#[test]
fn sentiment_sentences_for_seven_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = "anger,disgust,fear,joy,neutral,sadness,surprise";
    ok(&saca(tmp.path(), &["synth", "--labels", labels, "--dialogues-per-label", "8", "--out", "syn7"]));
    let summary = ok(&saca(
        tmp.path(),
        &["build-lexicon", "--corpus", "normalized", "--data", "syn7", "--kind", "sentiment_sentences", "--out", "lex"],
    ));
    assert_eq!(summary["labels"].as_array().unwrap().len(), 7);
    let lexicon = read_json(tmp.path().join("lex/lexicon.json"));
    let text = lexicon.to_string();
    assert!(text.contains("I am happy.") && text.contains("That is delightful!"), "{text}");
    assert!(!text.contains("non_neutral"));
    assert!(tmp.path().join("lex/resolved_config.json").exists());
}

#[test]
fn prepare_data_writes_both_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&saca(tmp.path(), &["synth", "--dialogues-per-label", "8", "--out", "syn"]));
    run(tmp.path(), &toy(&["prepare-data", "--out", "prep"]));
    for task in ["classify", "reply_predict"] {
        for split in ["train", "dev", "test"] {
            let path = tmp.path().join(format!("prep/encoded/{task}/{split}.jsonl"));
            let text = fs::read_to_string(&path).unwrap();
            assert!(text.lines().count() > 0, "{}", path.display());
        }
    }
    let stats = read_json(tmp.path().join("prep/stats.json"));
    assert_eq!(stats["splits"]["train"]["dialogues"], 32);
}

/// Trains every component once on the toy preset, then exercises evaluate,
/// generate, chat and correlate against the saved directories.
#[test]
fn toy_pipeline_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&saca(dir, &["synth", "--seed", "4", "--out", "syn"]));

    let cls = run(dir, &toy(&["train-classifier", "--out", "cls"]));
    assert!(cls["best_macro_f1"].as_f64().unwrap() >= 0.9, "{cls}");
    assert!(dir.join("cls/train_log.csv").exists());
    run(dir, &toy(&["train-generator", "--lexicon-kind", "sentiment_sentences", "--out", "gen"]));
    run(dir, &toy(&["train-generator", "--lexicon-kind", "none", "--out", "base"]));

    let ev = run(dir, &toy(&["evaluate", "--task", "classify", "--model", "cls/model", "--out", "ev"]));
    let report = read_json(dir.join("ev/report.json"));
    for field in ["m_f1", "M_f1", "m_nmc_f1", "M_nmc_f1"] {
        let v = report[field].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{field}={v}");
    }
    assert_eq!(ev["report"], report);

    let models = ["--generator", "gen/model", "--baseline-generator", "base/model", "--judge", "cls/model"];
    let mut args = toy(&["evaluate", "--task", "generation", "--mode", "oracle", "--out", "gen_ev"]);
    args.extend(models.iter().map(|s| s.to_string()));
    run(dir, &args);
    let oracle = read_json(dir.join("gen_ev/report.json"));
    assert!(oracle["ppl"].as_f64().unwrap() >= 1.0);
    let lines = fs::read_to_string(dir.join("gen_ev/generations.jsonl")).unwrap();
    assert_eq!(lines.lines().count() as u64, oracle["n_examples"].as_u64().unwrap());

    let reply = run(dir, &toy(&["generate", "--generator", "gen/model", "--label", "joy", "--history", "hello there ."]));
    assert_eq!(reply["label"], "joy");
    assert!(reply["reply"].is_string());

    let mut args = toy(&["chat", "--mode", "baseline"]);
    args.extend(models.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = saca_stdin(dir, &refs, "hello\n/mode oracle\n/label joy\nhow are you ?\n/label grumpy\n/quit\nnot read\n");
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let agent_lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("agent:")).collect();
    assert_eq!(agent_lines.len(), 2, "{stdout}");
    assert!(!agent_lines[0].contains('['), "{stdout}");
    assert!(agent_lines[1].ends_with("[joy]"), "{stdout}");
    assert!(stdout.contains("unknown label `grumpy`"), "{stdout}");

    // chat also exits cleanly on end of input
    let out = saca_stdin(dir, &refs, "hello\n");
    assert_eq!(out.status.code(), Some(0));

    let mut args = toy(&["evaluate", "--task", "generation", "--mode", "baseline", "--out", "base_ev"]);
    args.extend(models.iter().map(|s| s.to_string()));
    run(dir, &args);
    fs::write(
        dir.join("human.csv"),
        "model,question,positive_count,total\n\
         baseline,adequacy,6,10\nbaseline,sentiment,3,10\n\
         oracle,adequacy,5,10\noracle,sentiment,8,10\n",
    )
    .unwrap();
    run(
        dir,
        &[
            "correlate",
            "--report",
            "baseline=base_ev/report.json",
            "--report",
            "oracle=gen_ev/report.json",
            "--human",
            "human.csv",
            "--out",
            "corr",
        ]
        .map(String::from),
    );
    let csv = fs::read_to_string(dir.join("corr/correlation.csv")).unwrap();
    assert!(csv.starts_with("automatic_metric,human_metric,r,note"), "{csv}");
}

#[test]
fn drop_non_neutral_and_dataset_alias() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&saca(tmp.path(), &["synth", "--labels", "joy,non_neutral,sadness", "--dialogues-per-label", "8", "--out", "syn"]));
    let keep = ok(&saca(tmp.path(), &["build-lexicon", "--dataset", "normalized", "--data", "syn", "--kind", "tag", "--out", "a"]));
    assert_eq!(keep["labels"].as_array().unwrap().len(), 3);
    let drop = ok(&saca(
        tmp.path(),
        &["build-lexicon", "--dataset", "normalized", "--data", "syn", "--kind", "tag", "--drop-non-neutral", "--out", "b"],
    ));
    assert_eq!(drop["labels"], serde_json::json!(["joy", "sadness"]));
}
