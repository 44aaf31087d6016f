use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use topret::embedding::{format_embeddings, parse_embeddings};
use topret::synth::{generate, SynthConfig};

const TRAIN: &str = "domain\tutterance\tsemparse
timer\tadd ten minutes to the oven timer\t[in:add_time_timer add [sl:date_time ten minutes ] to the [sl:timer_name oven ] [sl:method_timer timer ] ]
timer\tplease add 20 minutes on the lasagna timer\t[in:add_time_timer [sl:date_time 20 minutes ] [sl:timer_name lasagna ] ]
music\tno more country\t[in:remove_from_playlist_music [sl:music_genre country ] ]
music\tno more music\t[in:stop_music [sl:music_type music ] ]
music\tdelete mariah carey songs\t[in:remove_from_playlist_music delete [sl:music_artist_name mariah carey] [sl:music_type songs ] ]
";

const TEST: &str = "timer\tadd 5 minutes on the pasta timer\t[in:add_time_timer [sl:date_time 5 minutes ] [sl:timer_name pasta ] ]
music\tno more jazz\t[in:remove_from_playlist_music [sl:music_genre jazz ] ]
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topret")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.tsv"), TRAIN).unwrap();
    fs::write(dir.path().join("test.tsv"), TEST).unwrap();
    dir
}

fn read(dir: &Path, f: &str) -> String {
    fs::read_to_string(dir.join(f)).unwrap()
}

#[test]
fn ingest_summary() {
    let dir = workspace();
    let out = ok(dir.path(), &["ingest", "train.tsv"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["records"], 5);
    assert_eq!(v["domains"]["music"], 3);
    assert_eq!(v["domains"]["timer"], 2);
    assert_eq!(v["depth_histogram"]["1"], 5);
    assert_eq!(v["skipped"], 0);
    assert_eq!(v["config"]["command"], "ingest");
}

#[test]
fn ingest_bad_rows() {
    let dir = workspace();
    fs::write(dir.path().join("bad.tsv"), format!("{TEST}music\tbroken\t[in:x [sl:y\nshort\trow\n")).unwrap();
    let out = run(dir.path(), &["ingest", "bad.tsv"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let v: Value = serde_json::from_str(&ok(dir.path(), &["ingest", "bad.tsv", "--skip-bad"])).unwrap();
    assert_eq!(v["records"], 2);
    assert_eq!(v["skipped"], 2);
    let lines: Vec<u64> = v["parse_errors"].as_array().unwrap().iter().map(|e| e["line"].as_u64().unwrap()).collect();
    assert_eq!(lines, [3, 4]);
}

#[test]
fn missing_input_names_path() {
    let dir = workspace();
    let out = run(dir.path(), &["ingest", "nowhere.tsv"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("nowhere.tsv"));
    let out = run(dir.path(), &["build-index", "train.tsv", "--out", "no/such/dir/ix.vidx"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no/such/dir"));
    assert!(!dir.path().join("no").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    assert_eq!(code(&run(dir.path(), &["predict", "test.tsv"])), 2);
    assert_eq!(code(&run(dir.path(), &["augment", "test.tsv", "--mode", "sideways"])), 2);
    assert_eq!(code(&run(dir.path(), &["query", "--index", "ix.vidx"])), 2);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 2);
}

#[test]
fn header_detection_and_override() {
    let dir = workspace();
    let with: Value = serde_json::from_str(&ok(dir.path(), &["ingest", "train.tsv"])).unwrap();
    assert_eq!(with["records"], 5);
    let without: Value = serde_json::from_str(&ok(dir.path(), &["ingest", "test.tsv"])).unwrap();
    assert_eq!(without["records"], 2);
    let forced: Value = serde_json::from_str(&ok(dir.path(), &["ingest", "test.tsv", "--has-header"])).unwrap();
    assert_eq!(forced["records"], 1);
    // a header row is not a frame, so forcing it to be data fails
    assert_eq!(code(&run(dir.path(), &["ingest", "train.tsv", "--no-header"])), 3);
}

#[test]
fn index_query_predict_eval() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["build-index", "train.tsv", "--out", "ix.vidx"]);
    assert!(read(d, "ix.vidx").starts_with("VIDX1 dim=256 count=5 metric=l2\n"));

    let by_text = ok(d, &["query", "--index", "ix.vidx", "--utterance", "no more jazz", "--k", "2"]);
    let first: Vec<&str> = by_text.lines().next().unwrap().split('\t').collect();
    assert_eq!(first[0], "1");
    assert!(first[4].starts_with("no more"));

    let by_id = ok(d, &["query", "--index", "ix.vidx", "--id", "train:1", "--k", "3", "--exclude", "id"]);
    assert_eq!(by_id.lines().count(), 3);
    assert!(!by_id.contains("\ttrain:1\t"));
    let with_self = ok(d, &["query", "--index", "ix.vidx", "--id", "train:1", "--k", "1"]);
    assert!(with_self.starts_with("1\ttrain:1\t0.000000\t"));

    ok(d, &["predict", "test.tsv", "--train", "train.tsv", "--index", "ix.vidx", "--out", "preds.tsv"]);
    let preds = read(d, "preds.tsv");
    assert_eq!(preds.lines().count(), 2);
    assert!(preds.starts_with("test:0\t[in:add_time_timer [sl:date_time 5 minutes ] [sl:timer_name pasta ] ]\n"));

    ok(d, &["eval", "test.tsv", "--preds", "preds.tsv", "--train", "train.tsv", "--slices", "complexity,frequency", "--out", "report.json", "--csv", "slices.csv"]);
    let report: Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["per_domain"]["timer"]["frame_accuracy"], 100.0);
    assert_eq!(report["config"]["command"], "eval");
    assert_eq!(report["config"]["slices"][1], "frequency_quintile");
    assert_eq!(report["slices"].as_array().unwrap().len(), 2);
    assert!(read(d, "report.json").contains("\"micro_avg\": "));
    assert!(read(d, "slices.csv").starts_with("slice,bucket,n,accuracy\ncomplexity,simple,2,"));
}

#[test]
fn eval_lists_missing_predictions() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("preds.tsv"), "test:0\t[in:add_time_timer [sl:timer_name pasta ] [sl:date_time 5 minutes ] ]\n").unwrap();
    ok(d, &["eval", "test.tsv", "--preds", "preds.tsv", "--out", "report.json"]);
    let report: Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["missing"], serde_json::json!(["test:1"]));
    assert_eq!(report["micro_avg"], 50.0);
    assert!(report["slices"].as_array().unwrap().is_empty());

    fs::write(d.join("preds.tsv"), "test:9\t[in:x ]\n").unwrap();
    let out = run(d, &["eval", "test.tsv", "--preds", "preds.tsv", "--out", "report.json"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("test:9"));
}

#[test]
fn augment_modes() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["build-index", "train.tsv", "--out", "ix.vidx"]);
    ok(d, &["augment", "train.tsv", "--train", "train.tsv", "--index", "ix.vidx", "--out", "aug.tsv"]);
    let aug = read(d, "aug.tsv");
    let row1: Vec<&str> = aug.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row1[0], "train:1");
    assert_eq!(
        row1[1],
        "[in:add_time_timer add [sl:date_time ten minutes ] to the [sl:timer_name oven ] [sl:method_timer timer ] ] | please add 20 minutes on the lasagna timer"
    );
    assert_eq!(row1[3], "train:0");

    ok(d, &["augment", "test.tsv", "--split", "test", "--train", "train.tsv", "--index", "ix.vidx", "--out", "aug2.tsv", "--mode", "utterance-nn", "--k", "2", "--separator", "||"]);
    for line in read(d, "aug2.tsv").lines() {
        let input = line.split('\t').nth(1).unwrap();
        assert_eq!(input.matches(" || ").count(), 2);
    }
    let out = run(d, &["augment", "test.tsv", "--train", "train.tsv", "--index", "ix.vidx", "--out", "x.tsv", "--policy", "random-top-m", "--m", "1", "--k", "2"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn empty_index_is_an_error() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("empty.vidx"), "VIDX1 dim=256 count=0 metric=l2\n").unwrap();
    let out = run(d, &["predict", "test.tsv", "--train", "train.tsv", "--index", "empty.vidx", "--out", "p.tsv"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("empty"));
    assert!(!d.join("p.tsv").exists());
}

#[test]
fn file_embeddings() {
    let dir = workspace();
    let d = dir.path();
    let mut rows = String::new();
    for (i, v) in ["1 0 0 0", "0.9 0.1 0 0", "0 0 1 0", "0 0 0.9 0.1", "0 1 0 0"].iter().enumerate() {
        rows.push_str(&format!("train:{i}\t{v}\n"));
    }
    rows.push_str("test:0\t0.95 0.05 0 0\ntest:1\t0 0 1 0.02\n");
    fs::write(d.join("emb.txt"), &rows).unwrap();
    // the file parses as a table we can round-trip
    let table = parse_embeddings(&rows, &Default::default()).unwrap();
    assert_eq!(parse_embeddings(&format_embeddings(&table), &Default::default()).unwrap(), table);

    let emb = ["--embedder", "file", "--embeddings", "emb.txt"];
    let build = |extra: &[&str]| {
        let mut args = vec!["build-index", "train.tsv", "--out", "ix.vidx"];
        args.extend(emb);
        args.extend(extra);
        run(d, &args)
    };
    assert!(build(&[]).status.success());
    assert!(read(d, "ix.vidx").starts_with("VIDX1 dim=4 count=5"));
    let mismatch = build(&["--dim", "8"]);
    assert_eq!(code(&mismatch), 3);
    assert!(stderr(&mismatch).contains("--dim 8"));

    let mut args = vec!["predict", "test.tsv", "--train", "train.tsv", "--index", "ix.vidx", "--out", "preds.tsv"];
    args.extend(emb);
    ok(d, &args);
    // neighbors come from the file vectors, not the text
    let preds = read(d, "preds.tsv");
    assert!(preds.contains("test:0\t[in:add_time_timer "));
    assert!(preds.contains("test:1\t[in:remove_from_playlist_music "));

    // hashed queries against a 4-dimensional index
    let out = run(d, &["predict", "test.tsv", "--train", "train.tsv", "--index", "ix.vidx", "--out", "p2.tsv"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("dimension"));
}

#[test]
fn subsets_nest() {
    let dir = workspace();
    let d = dir.path();
    let (train, _) = generate(&SynthConfig { train_size: 50, test_size: 0, ..SynthConfig::default() }).unwrap();
    fs::write(d.join("big.tsv"), train.to_tsv()).unwrap();
    let summary: Value = serde_json::from_str(&ok(d, &["subset", "big.tsv", "--fractions", "10,30,100", "--out-dir", "subs"])).unwrap();
    let sizes: Vec<u64> = summary["subsets"].as_array().unwrap().iter().map(|s| s["records"].as_u64().unwrap()).collect();
    assert_eq!(sizes, [5, 15, 50]);
    let small = read(d, "subs/subset_10.tsv");
    let mid = read(d, "subs/subset_30.tsv");
    assert!(small.lines().all(|l| mid.lines().any(|m| m == l)));
    assert_eq!(read(d, "subs/subset_100.tsv"), train.to_tsv());
    assert_eq!(code(&run(d, &["subset", "big.tsv", "--fractions", "50,10", "--out-dir", "subs"])), 3);
}

#[test]
fn self_retrieval_is_exact() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["build-index", "train.tsv", "--out", "ix.vidx"]);
    ok(d, &["predict", "train.tsv", "--split", "test", "--train", "train.tsv", "--index", "ix.vidx", "--out", "preds.tsv", "--exclude", "none"]);
    ok(d, &["eval", "train.tsv", "--preds", "preds.tsv", "--out", "report.json"]);
    let report: Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["micro_avg"], 100.0);
    assert_eq!(report["macro_avg"], 100.0);
}

#[test]
fn gold_predictions_score_100() {
    let dir = workspace();
    let d = dir.path();
    let gold: String = TEST.lines().enumerate().map(|(i, l)| format!("test:{i}\t{}\n", l.split('\t').nth(2).unwrap())).collect();
    fs::write(d.join("gold.tsv"), gold).unwrap();
    ok(d, &["eval", "test.tsv", "--preds", "gold.tsv", "--out", "report.json"]);
    let text = read(d, "report.json");
    assert!(text.contains("\"micro_avg\": 100.00,\n"));
    assert!(text.contains("\"macro_avg\": 100.00,\n"));
}

#[test]
fn eval_reproduces_baseline_macro_average() {
    let dir = workspace();
    let d = dir.path();
    // per-domain accuracies of the baseline without neighbors
    let domains = [("alarm", 8667), ("event", 8383), ("music", 7980), ("timer", 8121), ("messaging", 9350), ("navigation", 8296)];
    let mut test = String::new();
    let mut preds = String::new();
    let mut row = 0;
    for (domain, hits) in domains {
        for i in 0..10_000 {
            test.push_str(&format!("{domain}\tsome words\t[in:get_{domain} [sl:thing some ] ]\n"));
            let frame = if i < hits { format!("[in:get_{domain} [sl:thing some ] ]") } else { "[in:other ]".to_string() };
            preds.push_str(&format!("test:{row}\t{frame}\n"));
            row += 1;
        }
    }
    fs::write(d.join("big_test.tsv"), test).unwrap();
    fs::write(d.join("big_preds.tsv"), preds).unwrap();
    ok(d, &["eval", "big_test.tsv", "--preds", "big_preds.tsv", "--out", "report.json"]);
    let text = read(d, "report.json");
    assert!(text.contains("\"macro_avg\": 84.66,\n"), "{text}");
    let report: Value = serde_json::from_str(&text).unwrap();
    assert!((report["macro_avg"].as_f64().unwrap() - 84.66).abs() <= 0.005);
    assert_eq!(report["per_domain"]["alarm"]["frame_accuracy"], 86.67);
}
