#[path = "../../core/tests/support/mock_service.rs"]
mod mock_service;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contrarank::augment::OracleGenerator;
use contrarank::gradcheck::Kernels;
use contrarank::objectives::{hinge, LossValue, ScoreSlot};
use contrarank::scorer::{Model, ModelParams, Vocab};
use contrarank::synthetic::TOPIC_PREFIX;
use contrarank::Text;
use contrarank_cli::commands::gradcheck_with;
use contrarank_cli::{GradcheckArgs, EXIT_FAILURE};
use serde_json::Value;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_str()
        .unwrap()
        .to_owned()
}

fn run(args: &[&str]) -> Output {
    run_env(args, None)
}

fn run_env(args: &[&str], url: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_contrarank"));
    cmd.args(args).env_remove("CONTRARANK_GENERATOR_URL");
    if let Some(url) = url {
        cmd.env("CONTRARANK_GENERATOR_URL", url);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_file_is_a_usage_error_naming_the_path() {
    let out = run(&["stats", "/no/such/dataset.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/no/such/dataset.tsv"), "{}", stderr(&out));
}

#[test]
fn malformed_dataset_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tsv");
    fs::write(&path, "Q1\tq\ta\t1\nQ1\tq\tb\n").unwrap();
    let out = run(&["stats", path_str(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn graded_threshold_moves_positive_rate() {
    let data = fixture("antique_sample.tsv");
    let at = |t: &str| -> f64 {
        let out = run(&["stats", &data, "--graded", "--threshold", t, "--format", "json"]);
        assert!(out.status.success());
        let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
        v["pct_positive"].as_f64().unwrap()
    };
    assert!(at("2") > at("3"));
    assert!(at("3") > at("4"));
    // Binary parsing rejects grades above 1.
    assert_eq!(run(&["stats", &data]).status.code(), Some(2));
}

#[test]
fn stub_augmentation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("wikiqa_sample.tsv");
    let a = dir.path().join("a.cache");
    let b = dir.path().join("b.cache");
    assert!(run(&["augment", &data, "-o", path_str(&a)]).status.success());
    assert!(run(&["augment", &data, "-o", path_str(&b), "--jobs", "3"]).status.success());
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert!(bytes.starts_with(b"%BIGCACHE v1\n"));
}

#[test]
fn oracle_questions_share_the_source_topic() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("o.cache");
    let data = fixture("synthetic/train.tsv");
    let out = run(&["augment", &data, "--generator", "oracle", "-o", path_str(&cache)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let text = fs::read_to_string(&data).unwrap();
    let mut negatives: std::collections::HashMap<&str, Vec<&str>> = Default::default();
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f[3] == "0" {
            negatives.entry(f[0]).or_default().push(f[2]);
        }
    }
    let oracle = OracleGenerator::default();
    let mut checked = 0;
    for line in fs::read_to_string(&cache).unwrap().lines().skip(1) {
        let rec: Value = serde_json::from_str(line).unwrap();
        let qid = rec["question_id"].as_str().unwrap();
        for pair in rec["synth_questions"].as_array().unwrap() {
            let j = pair[0].as_u64().unwrap() as usize;
            let source = Text::new(negatives[qid][j]);
            let generated = Text::new(pair[1].as_str().unwrap());
            let topic = oracle.topic_of(&source).unwrap();
            assert!(topic.starts_with(TOPIC_PREFIX));
            assert!(generated.tokens().iter().any(|t| t == topic), "{qid} {j}");
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn dead_remote_endpoint_fails_and_lists_groups() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("r.cache");
    let url = mock_service::dead_url();
    let out = run_env(
        &["augment", &fixture("trecqa_sample.tsv"), "--generator", "remote", "-o", path_str(&cache)],
        Some(&url),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("failed: T1") && err.contains("failed: T12"), "{err}");
    let partial = fs::read_to_string(&cache).unwrap();
    assert_eq!(partial.lines().filter(|l| l.contains("\"failed\"")).count(), 12);
}

#[test]
fn remote_generator_against_scripted_service() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("r.cache");
    let service = mock_service::MockService::faithful();
    let data = fixture("wikiqa_sample.tsv");
    let out = run(&[
        "augment", &data, "--generator", "remote", "--url", &service.url, "--jobs", "4", "-o",
        path_str(&cache),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let requests = service.requests();
    // One answer per question plus one question per negative.
    assert_eq!(requests.len(), 12 + 40);
    assert!(requests.iter().all(|r| r["max_tokens"] == 30 || r["max_tokens"] == 50));

    let model = dir.path().join("m.bin");
    let out = run(&["train", &data, "--mode", "contrastive", "--cache", path_str(&cache), "-o", path_str(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn remote_without_url_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("r.cache");
    let out = run(&["augment", &fixture("wikiqa_sample.tsv"), "--generator", "remote", "-o", path_str(&cache)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("CONTRARANK_GENERATOR_URL"));
}

#[test]
fn corpus_export_has_two_tab_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qg.tsv");
    let data = fixture("wikiqa_sample.tsv");
    let out = run(&["corpus", &data, "--kind", "question", "-o", path_str(&path)]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    for line in &lines {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 2);
        assert!(cols[0].ends_with(" [SEP]"));
    }
    assert_eq!(
        lines[0],
        "A glacier cave is a cave formed within the ice of a glacier. [SEP]\thow are glacier caves formed?"
    );
    let ag = dir.path().join("ag.tsv");
    assert!(run(&["corpus", &data, "--kind", "answer", "-o", path_str(&ag)]).status.success());
    assert!(fs::read_to_string(&ag).unwrap().starts_with("how are glacier caves formed? [SEP]\tA glacier cave"));
}

#[test]
fn contrastive_without_cache_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let data = fixture("wikiqa_sample.tsv");
    let out = run(&["train", &data, "--mode", "contrastive", "-o", path_str(&model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cache"), "{}", stderr(&out));
    assert!(!model.exists());
    // With both generators off the cache is not needed.
    let out = run(&["train", &data, "--mode", "contrastive", "--no-qg", "--no-ag", "-o", path_str(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn train_writes_history_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let data = fixture("trecqa_sample.tsv");
    let dev = fixture("wikiqa_sample.tsv");
    let out = run(&["train", &data, "--mode", "pairwise", "--epochs", "3", "--dev", &dev, "-o", path_str(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let history = fs::read_to_string(dir.path().join("m.bin.history.jsonl")).unwrap();
    let epochs: Vec<Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(epochs.len(), 3);
    assert_eq!(epochs[2]["epoch"], 3);
    assert!(epochs[0]["dev"]["mrr"].is_number());

    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["mode"], "pairwise");
    assert_eq!(manifest["config"]["epochs"], 3);
    assert!(manifest["inputs"]["dev"]["sha256"].is_string());
    let digest = manifest["outputs"]["checkpoint"]["sha256"].as_str().unwrap();
    assert_eq!(digest, contrarank_cli::manifest::sha256_file(&model).unwrap());
    assert!(!fs::read_to_string(dir.path().join("m.bin.manifest.json")).unwrap().contains("time"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("train.toml");
    fs::write(&config, "mode = \"pairwise\"\nepochs = 2\nlearning_rate = 0.1\nseed = 5\n").unwrap();
    let model = dir.path().join("m.bin");
    let data = fixture("trecqa_sample.tsv");
    let out = run(&["train", &data, "--config", path_str(&config), "--epochs", "4", "-o", path_str(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("m.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["epochs"], 4);
    assert_eq!(manifest["config"]["learning_rate"], 0.1);
    assert_eq!(manifest["seed"], 5);

    fs::write(&config, "epochz = 2\n").unwrap();
    let out = run(&["train", &data, "--config", path_str(&config), "-o", path_str(&model)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_as_positive_needs_a_compatible_mode() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let out = run(&[
        "train", &fixture("trecqa_sample.tsv"), "--mode", "pairwise", "--synth-as-positive", "-o",
        path_str(&model),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn train_quick(dir: &Path, data: &str) -> PathBuf {
    let model = dir.join("m.bin");
    let out = run(&["train", data, "--mode", "pairwise", "--epochs", "1", "-o", path_str(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    model
}

#[test]
fn eval_formats_and_cutoffs() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("wikiqa_sample.tsv");
    let model = train_quick(dir.path(), &data);

    let out = run(&["eval", path_str(&model), &data, "--k", "1,3,10", "--format", "json"]);
    assert!(out.status.success());
    let agg: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let keys: Vec<&String> = agg.as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        ["map", "mrr", "p@1", "p@3", "p@10", "ndcg@1", "ndcg@3", "ndcg@10", "n_queries_scored", "n_queries_skipped"]
    );
    assert_eq!(agg["n_queries_scored"], 9);
    assert_eq!(agg["n_queries_skipped"], 3);

    let out = run(&["eval", path_str(&model), &data, "--k", "2", "--format", "json-lines"]);
    let lines: Vec<Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 13);
    assert_eq!(lines[0]["scope"], "query");
    assert!(lines[0].get("ndcg@2").is_some() && lines[0].get("ndcg@10").is_none());
    assert_eq!(lines[12]["scope"], "aggregate");

    let out = run(&["eval", path_str(&model), &data]);
    let table = stdout(&out);
    assert!(table.contains("nDCG@10") && table.contains("MRR"));

    let out = run(&["eval", path_str(&model), &data, "--k", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn checkpoint_version_mismatch_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("wikiqa_sample.tsv");
    let model = train_quick(dir.path(), &data);
    let mut bytes = fs::read(&model).unwrap();
    bytes[4] = b'9';
    fs::write(&model, bytes).unwrap();
    let out = run(&["eval", path_str(&model), &data]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));
}

#[test]
fn eval_without_relevant_answers_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("none.tsv");
    fs::write(&data, "Q1\tq one\ta\t0\nQ1\tq one\tb\t0\n").unwrap();
    let model = train_quick(dir.path(), &fixture("wikiqa_sample.tsv"));
    let out = run(&["eval", path_str(&model), path_str(&data)]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["eval", path_str(&model), path_str(&data), "--zero-unjudged"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

/// Scores an answer by the share of its tokens that are "yes".
fn marker_model() -> Model {
    let vocab = Vocab::from_tokens(vec!["<unk>".into(), "yes".into()]).unwrap();
    let params = ModelParams {
        embed_dim: 1,
        hidden_dim: 1,
        vocab_size: 2,
        embeddings: vec![0.0, 1.0],
        w1: vec![0.0, 1.0, 0.0, 0.0],
        b1: vec![0.0],
        w2: vec![1.0],
        b2: 0.0,
    };
    Model::new(vocab, params).unwrap()
}

#[test]
fn perfect_checkpoint_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("marked.tsv");
    let mut rows = String::new();
    for q in 0..6 {
        for a in 0..5 {
            let relevant = a == (q % 5) || (q == 3 && a == 0);
            let answer = if relevant { format!("yes answer {a}") } else { format!("answer {a}") };
            rows.push_str(&format!("Q{q}\tquestion {q}\t{answer}\t{}\n", relevant as u8));
        }
    }
    fs::write(&data, rows).unwrap();
    let model = dir.path().join("perfect.bin");
    marker_model().save(&model).unwrap();
    let out = run(&["eval", path_str(&model), path_str(&data), "--k", "1", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let agg: Value = serde_json::from_str(&stdout(&out)).unwrap();
    for key in ["map", "mrr", "p@1", "ndcg@1"] {
        assert_eq!(agg[key], 1.0, "{key}");
    }
}

#[test]
fn gradcheck_zero_trials_is_rejected() {
    let out = run(&["gradcheck", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("trials"));
}

#[test]
fn gradcheck_passes_by_default() {
    let out = run(&["gradcheck", "--trials", "3", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("PASS"));
}

fn flipped_hinge(pos: f64, neg: f64, margin: f64) -> LossValue {
    let mut out = hinge(pos, neg, margin);
    for slot in [ScoreSlot::Positive(0), ScoreSlot::Negative(0)] {
        if let Some(g) = out.dloss_dscore.get_mut(&slot) {
            *g = -*g;
        }
    }
    out
}

#[test]
fn gradcheck_names_a_sign_flipped_hinge() {
    let kernels = Kernels {
        hinge: flipped_hinge,
        ..Kernels::default()
    };
    let mut sink = Vec::new();
    let err = gradcheck_with(&GradcheckArgs { trials: 5, seed: 0 }, &kernels, &mut sink).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_FAILURE);
    let msg = err.to_string();
    assert!(msg.contains("failed in hinge;"), "{msg}");
    assert!(msg.contains("worst: hinge"), "{msg}");
}

#[test]
fn synth_reproduces_the_shipped_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "-o", path_str(dir.path())]);
    assert!(out.status.success());
    for split in ["train.tsv", "test.tsv"] {
        assert_eq!(
            fs::read(dir.path().join(split)).unwrap(),
            fs::read(fixture(&format!("synthetic/{split}"))).unwrap()
        );
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
