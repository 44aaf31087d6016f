//! End-to-end acceptance checks, one line of PASS/FAIL output per criterion.
//!
//! Run with `cargo test -p topret-cli --test acceptance -- --nocapture`.

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use topret::augment::{
    index_corpus, render_augmented, select_neighbors, AugmentConfig, AugmentMode, Exclusion, NeighborPolicy,
    PolicyKind,
};
use topret::embedding::{Embedder, EmbeddingVector, HashedEmbedder};
use topret::evaluation::{aggregate, evaluate, frame_match, slice_complexity, slice_frequency};
use topret::hashing::SplitMix64;
use topret::knnparser::predict_corpus;
use topret::synth::{generate, SynthConfig};
use topret::topformat::{
    canonicalize, parse_top, serialize, IntentChild, IntentNode, ParseTree, SlotNode, SlotValue,
};
use topret::vindex::{build_index, IndexEntry};
use topret::{Corpus, ExclusionRule, KnnConfig, UtteranceRecord};

fn check(name: &str, limit: Duration, body: impl FnOnce()) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body));
    let took = start.elapsed();
    let (ok, why) = match outcome {
        Ok(()) if took <= limit => (true, String::new()),
        Ok(()) => (false, format!(" (over time limit {limit:?})")),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!(" ({msg})"))
        }
    };
    // straight to the handle so the line shows even when output is captured
    let _ = writeln!(std::io::stderr(), "{} {name} [{:.2?}]{why}", if ok { "PASS" } else { "FAIL" }, took);
    ok
}

// 1. aggregation reproduction

/// Per-domain accuracies (alarm, event, music, timer, messaging,
/// navigation) and the reported macro average, by augmentation mode.
const TABLE: [(&str, [f64; 6], f64); 3] = [
    ("without-nn", [86.67, 83.83, 79.80, 81.21, 93.50, 82.96], 84.66),
    ("utterance-nn", [87.17, 85.03, 80.73, 81.75, 94.52, 84.16], 85.56),
    ("semparse-nn", [88.57, 84.77, 80.71, 81.01, 94.65, 85.20], 85.82),
];

fn aggregation() {
    let domains = ["alarm", "event", "music", "timer", "messaging", "navigation"];
    for (column, accs, macro_expected) in TABLE {
        // 10,000 examples per domain so each accuracy is an exact count
        let mut results: Vec<(&str, bool)> = Vec::new();
        for (d, acc) in domains.iter().zip(accs) {
            let hits = (acc * 100.0).round() as usize;
            results.extend((0..10_000).map(|i| (*d, i < hits)));
        }
        let report = aggregate(&results).unwrap();
        for (d, acc) in domains.iter().zip(accs) {
            assert!((report.per_domain[*d].frame_accuracy - acc).abs() < 1e-9, "{column} {d}");
        }
        assert!(
            (report.macro_avg - macro_expected).abs() <= 0.005,
            "{column}: macro {} vs {macro_expected}",
            report.macro_avg
        );
    }
}

// 2. parser corpus

/// Frames from the oven-timer example and the three qualitative examples
/// (gold parses, neighbor parses and model outputs), spacing as printed.
const FRAMES: &[&str] = &[
    "[in:add_time_timer add [sl:date_time ten minutes ] to the [sl:timer_name oven]  [sl:method_timer timer] ]",
    "[in:add_time_timer add [sl:date_time ten minutes ] to the [sl:timer_name oven]  [sl:method_timer timer ] ]",
    "[in:send_message message [sl:recipient kira ] and [sl:recipient lena ] saying [sl:content_exact want to get drinks this week ]?]",
    "[in:send_message [sl:recipient lizzie ] [sl:recipient trent ] [sl:content_exact they have any updates yet ] ]",
    "[in:get_message [sl:content_exact they have any updates yet ] [sl:group lizzie ] [sl:group trent ] ]",
    "[in:stop_music [sl:music_type music ] ]",
    "[in:remove_from_playlist_music [sl:music_genre country ] ]",
    "[in:play_music [sl:music_genre country ] ]",
    "[in:remove_from_playlist_music delete [sl:music_artist_name mariah carey] [sl:music_type songs ] ]",
    "[in:remove_from_playlist_music [sl:music_artist_name mariah carey ] ]",
    "[in:unsupported_music [sl:music_type songs ] ]",
    "[in:remove_from_playlist_music [sl:music_type songs ] [sl:music_artist_name mariah carey ] ]",
];

/// Rebuilds an intent with its children in reverse order, recursively.
fn reversed(node: &IntentNode) -> IntentNode {
    let children = node
        .children()
        .iter()
        .rev()
        .map(|c| match c {
            IntentChild::Text(t) => IntentChild::Text(t.clone()),
            IntentChild::Slot(s) => {
                let value = match s.value() {
                    SlotValue::Text(ws) => SlotValue::Text(ws.clone()),
                    SlotValue::Intent(inner) => SlotValue::Intent(Box::new(reversed(inner))),
                };
                IntentChild::Slot(SlotNode::new(s.label(), value).unwrap())
            }
        })
        .collect();
    IntentNode::new(node.label(), children).unwrap()
}

fn parser_corpus() {
    for f in FRAMES {
        let t = parse_top(f).unwrap_or_else(|e| panic!("{f}: {e}"));
        let s = serialize(&t);
        assert_eq!(parse_top(&s).unwrap(), t, "round trip of {f}");
        assert_eq!(serialize(&parse_top(&s).unwrap()), s);
        let c = canonicalize(&t);
        assert_eq!(canonicalize(&c), c);
        let shuffled = serialize(&ParseTree::new(reversed(t.root())));
        assert!(frame_match(&shuffled, f).unwrap(), "{shuffled} vs {f}");
    }
    assert!(frame_match(FRAMES[3], "[in:send_message [sl:content_exact they have any updates yet ] [sl:recipient trent ] [sl:recipient lizzie ] ]").unwrap());
    assert!(!frame_match(FRAMES[4], FRAMES[3]).unwrap());
}

// 3. index oracle

fn unit_vectors(n: usize, dim: usize, rng: &mut SplitMix64) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / norm) as f32).collect()
        })
        .collect()
}

fn index_oracle() {
    let (n, dim) = (2000, 32);
    let mut rng = SplitMix64::new(20_000);
    let rows = unit_vectors(n, dim, &mut rng);
    let ids: Vec<String> = (0..n).map(|i| format!("v{i:04}")).collect();
    let domains: Vec<String> = (0..n).map(|i| format!("d{}", i % 6)).collect();
    let utts: Vec<String> = (0..n).map(|i| format!("utterance {}", i % 50)).collect();
    let ix = build_index(
        (0..n)
            .map(|i| IndexEntry {
                id: ids[i].clone(),
                vector: EmbeddingVector::new(rows[i].clone()),
                domain: domains[i].clone(),
                utterance: utts[i].clone(),
            })
            .collect(),
    )
    .unwrap();
    let fresh = unit_vectors(100, dim, &mut rng);
    let mut checked = 0;
    for qi in 0..200 {
        // half the queries are indexed rows, so self-exclusion matters
        let (q, anchor) = if qi % 2 == 0 {
            (fresh[qi / 2].clone(), rng.next_below(n as u64) as usize)
        } else {
            let p = rng.next_below(n as u64) as usize;
            (rows[p].clone(), p)
        };
        let rules = [
            ExclusionRule::None,
            ExclusionRule::ById(ids[anchor].clone()),
            ExclusionRule::by_text(&utts[anchor]),
            ExclusionRule::by_id_and_text(&ids[anchor], &utts[anchor]),
            ExclusionRule::DomainNotEqual(domains[anchor].clone()),
        ];
        let mut all: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let d: f64 = q.iter().zip(&rows[i]).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
                (d.sqrt(), i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(ids[a.1].cmp(&ids[b.1])));
        let query = EmbeddingVector::new(q);
        for (r, rule) in rules.iter().enumerate() {
            let expected: Vec<(f64, &str)> = all
                .iter()
                .filter(|&&(_, i)| match r {
                    0 => true,
                    1 => i != anchor,
                    2 => utts[i] != utts[anchor],
                    3 => i != anchor && utts[i] != utts[anchor],
                    _ => domains[i] != domains[anchor],
                })
                .map(|&(d, i)| (d, ids[i].as_str()))
                .collect();
            for k in [1, 5, 10] {
                let got = ix.query(&query, k, rule).unwrap();
                let want: Vec<&str> = expected.iter().take(k).map(|e| e.1).collect();
                assert_eq!(got.ids(), want, "query {qi} rule {r} k {k}");
                for (g, e) in got.entries.iter().zip(&expected) {
                    assert!((g.distance - e.0).abs() < 1e-9);
                }
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 200 * 5 * 3);
}

// 4. augmentation format

const WORKED: &str = "[in:add_time_timer add [sl:date_time ten minutes ] to the [sl:timer_name oven ] [sl:method_timer timer ] ] | please add 20 minutes on the lasagna timer";

fn augmentation_format() {
    let c = Corpus::from_rows(
        "train",
        [
            ("timer", "add ten minutes to the oven timer", FRAMES[0]),
            ("timer", "please add 20 minutes on the lasagna timer", "[in:add_time_timer [sl:date_time 20 minutes ] [sl:timer_name lasagna ] ]"),
        ],
    )
    .unwrap();
    let e = HashedEmbedder::default();
    let ix = index_corpus(&c, &e).unwrap();
    let rec = &c.records()[1];
    let q = e.embed(&rec.id, &rec.utterance).unwrap();
    let cfg = AugmentConfig::default();
    let nl = select_neighbors(rec, &q, &ix, &cfg, &c).unwrap();
    let ex = render_augmented(rec, &nl.ids(), &cfg, &c).unwrap();
    assert_eq!(ex.input, WORKED);
    let utt_cfg = AugmentConfig { mode: AugmentMode::UtteranceNn, ..cfg };
    let ex = render_augmented(rec, &nl.ids(), &utt_cfg, &c).unwrap();
    assert_eq!(ex.input, "add ten minutes to the oven timer | please add 20 minutes on the lasagna timer");

    let mut runner = TestRunner::new(Config { cases: 64, failure_persistence: None, ..Config::default() });
    let strategy = (any::<u64>(), 1usize..=3, prop_oneof![Just(AugmentMode::UtteranceNn), Just(AugmentMode::SemparseNn)]);
    runner
        .run(&strategy, |(seed, k, mode)| {
            let (train, _) = generate(&SynthConfig { train_size: 60, test_size: 0, seed, ..SynthConfig::default() }).unwrap();
            let ix = index_corpus(&train, &e).unwrap();
            let mut rng = SplitMix64::new(seed);
            let rec = &train.records()[rng.next_below(train.len() as u64) as usize];
            let q = e.embed(&rec.id, &rec.utterance).unwrap();
            let cfg = AugmentConfig { mode, k, ..AugmentConfig::default() };
            let nl = select_neighbors(rec, &q, &ix, &cfg, &train).unwrap();
            prop_assert_eq!(nl.entries.len(), k);
            prop_assert!(nl.entries.windows(2).all(|w| w[0].distance <= w[1].distance));
            let ex = render_augmented(rec, &nl.ids(), &cfg, &train).unwrap();
            let segs: Vec<&str> = ex.input.split(" | ").collect();
            prop_assert_eq!(segs.len(), k + 1);
            prop_assert_eq!(segs[k], rec.utterance.as_str());
            for (rank, id) in nl.ids().iter().enumerate() {
                let n = train.get(id).unwrap();
                let piece = match mode {
                    AugmentMode::UtteranceNn => n.utterance.clone(),
                    AugmentMode::SemparseNn => serialize(&n.tree),
                };
                // rank 0 sits immediately left of the utterance
                prop_assert_eq!(segs[k - 1 - rank], piece.as_str());
            }
            Ok(())
        })
        .unwrap();
}

// 5. end-to-end self-consistency

fn self_consistency() {
    let (train, test) = generate(&SynthConfig::default()).unwrap();
    assert_eq!(train.len(), 500);
    let skeletons: std::collections::HashSet<_> = train.records().iter().map(|r| &r.skeleton).collect();
    assert_eq!(skeletons.len(), 20);
    let e = HashedEmbedder::default();
    let ix = index_corpus(&train, &e).unwrap();
    let accuracy = |kind| {
        let cfg = KnnConfig { policy: NeighborPolicy { kind, exclusion: Exclusion::None }, ..KnnConfig::default() };
        let preds = predict_corpus(&test, &ix, &train, &e, &cfg).unwrap();
        evaluate(&test, &preds, None, &[]).unwrap().micro_avg
    };
    let top = accuracy(PolicyKind::TopK);
    assert_eq!(top, 100.0);
    let cross = accuracy(PolicyKind::CrossDomainRandom);
    assert!(cross < top, "cross-domain {cross}");
}

// 6. slicing properties

fn slicing() {
    let mut runner = TestRunner::new(Config { cases: 64, failure_persistence: None, ..Config::default() });
    runner
        .run(&(any::<u64>(), 1usize..200), |(seed, n)| {
            let (train, test) =
                generate(&SynthConfig { train_size: 120, test_size: n, seed, ..SynthConfig::default() }).unwrap();
            let mut rng = SplitMix64::new(seed ^ 0x5eed);
            let pairs: Vec<(&UtteranceRecord, bool)> =
                test.records().iter().map(|r| (r, rng.next_below(3) > 0)).collect();
            let hits = pairs.iter().filter(|p| p.1).count() as f64;
            let micro = 100.0 * hits / n as f64;

            let freq = slice_frequency(&pairs, &train);
            prop_assert_eq!(freq.buckets.len(), 5);
            let sizes: Vec<usize> = freq.buckets.iter().map(|b| b.n).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

            let cx = slice_complexity(&pairs);
            prop_assert_eq!(cx.buckets.len(), 2);
            let simple = pairs.iter().filter(|p| p.0.depth <= 1).count();
            prop_assert_eq!((cx.buckets[0].n, cx.buckets[1].n), (simple, n - simple));

            for s in [&freq, &cx] {
                let weighted: f64 = s.buckets.iter().map(|b| b.frame_accuracy.unwrap_or(0.0) * b.n as f64).sum();
                prop_assert!((weighted / n as f64 - micro).abs() <= 1e-9);
            }
            Ok(())
        })
        .unwrap();
}

// 7. determinism

fn topret(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_topret")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "topret {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const PIPELINE: &[&[&str]] = &[
    &["ingest", "train.tsv", "--out", "summary.json"],
    &["build-index", "train.tsv", "--out", "index.vidx"],
    &["augment", "train.tsv", "--train", "train.tsv", "--index", "index.vidx", "--out", "aug_train.tsv", "--k", "3", "--policy", "random-top-m", "--m", "10", "--seed", "7"],
    &["augment", "test.tsv", "--split", "test", "--train", "train.tsv", "--index", "index.vidx", "--out", "aug_test.tsv", "--mode", "utterance-nn", "--k", "2", "--exclude", "none"],
    &["predict", "test.tsv", "--train", "train.tsv", "--index", "index.vidx", "--out", "preds.tsv"],
    &["predict", "test.tsv", "--train", "train.tsv", "--index", "index.vidx", "--out", "cross.tsv", "--policy", "cross-domain", "--seed", "3"],
    &["eval", "test.tsv", "--preds", "preds.tsv", "--train", "train.tsv", "--slices", "complexity,frequency", "--out", "report.json", "--csv", "slices.csv"],
    &["subset", "train.tsv", "--fractions", "10,50,100", "--seed", "5", "--out-dir", "subsets"],
];

const PRODUCTS: &[&str] = &[
    "summary.json", "index.vidx", "aug_train.tsv", "aug_test.tsv", "preds.tsv", "cross.tsv", "report.json",
    "slices.csv", "subsets/subset_10.tsv", "subsets/subset_50.tsv", "subsets/subset_100.tsv",
];

fn determinism() {
    let (train, test) = generate(&SynthConfig { train_size: 400, test_size: 80, ..SynthConfig::default() }).unwrap();
    // identical relative flags in two fresh directories
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        std::fs::write(dir.path().join("train.tsv"), train.to_tsv()).unwrap();
        std::fs::write(dir.path().join("test.tsv"), test.to_tsv()).unwrap();
        for args in PIPELINE {
            topret(args, dir.path());
        }
    }
    for f in PRODUCTS {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty(), "{f} is empty");
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn acceptance() {
    panic::set_hook(Box::new(|_| {}));
    let results = [
        check("1 aggregation reproduction", Duration::from_secs(1), aggregation),
        check("2 parser corpus", Duration::from_secs(1), parser_corpus),
        check("3 index oracle", Duration::from_secs(10), index_oracle),
        check("4 augmentation format", Duration::from_secs(5), augmentation_format),
        check("5 end-to-end self-consistency", Duration::from_secs(30), self_consistency),
        check("6 slicing properties", Duration::from_secs(5), slicing),
        check("7 determinism", Duration::from_secs(60), determinism),
    ];
    let _ = panic::take_hook();
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
