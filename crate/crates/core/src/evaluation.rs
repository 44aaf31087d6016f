//! Frame accuracy and its slices.
//!
//! A prediction matches when its canonical form equals the gold canonical
//! form. Reports keep full precision in memory and print two decimals.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::corpus::{Corpus, UtteranceRecord};
use crate::knnparser::PredictionSet;
use crate::topformat::{canonical_string, labels, FrameSkeleton, ParseTree, TopError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold frame does not parse: {0}")]
    GoldUnparseable(TopError),
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("length mismatch: {left} neighbor parses vs {right} gold parses")]
    LengthMismatch { left: usize, right: usize },
    #[error("relative improvement needs a positive baseline, got {0}")]
    ZeroBaseline(f64),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn two_dp<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(format!("{x:.2}")).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}

fn two_dp_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => two_dp(v, s),
        None => s.serialize_none(),
    }
}

/// Outcome of comparing one prediction with its gold frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Match,
    Mismatch,
    Unparseable,
    Missing,
}

impl Judgement {
    pub fn is_match(self) -> bool {
        self == Judgement::Match
    }
}

pub fn judge(pred: Option<&str>, gold: &str) -> Result<Judgement, EvalError> {
    let gold = canonical_string(gold).map_err(EvalError::GoldUnparseable)?;
    Ok(match pred.map(canonical_string) {
        None => Judgement::Missing,
        Some(Err(_)) => Judgement::Unparseable,
        Some(Ok(p)) if p == gold => Judgement::Match,
        Some(Ok(_)) => Judgement::Mismatch,
    })
}

/// Exact match of canonical forms. An unparseable prediction never matches.
pub fn frame_match(pred: &str, gold: &str) -> Result<bool, EvalError> {
    judge(Some(pred), gold).map(Judgement::is_match)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub n: usize,
    #[serde(serialize_with = "two_dp")]
    pub frame_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Complexity,
    FrequencyQuintile,
}

impl FromStr for SliceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "complexity" => Ok(SliceKind::Complexity),
            "frequency" | "frequency_quintile" => Ok(SliceKind::FrequencyQuintile),
            _ => Err(format!("unknown slice `{s}`")),
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SliceKind::Complexity => "complexity",
            SliceKind::FrequencyQuintile => "frequency_quintile",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub name: String,
    pub n: usize,
    /// `None` for an empty bucket.
    #[serde(serialize_with = "two_dp_opt")]
    pub frame_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub slice_kind: SliceKind,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub per_domain: BTreeMap<String, DomainScore>,
    #[serde(serialize_with = "two_dp")]
    pub micro_avg: f64,
    #[serde(serialize_with = "two_dp")]
    pub macro_avg: f64,
    pub unparseable: usize,
    pub slices: Vec<SliceReport>,
    #[serde(default)]
    pub missing: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRReport {
    #[serde(serialize_with = "two_dp")]
    pub intent_precision: f64,
    #[serde(serialize_with = "two_dp")]
    pub intent_recall: f64,
    #[serde(serialize_with = "two_dp")]
    pub slot_precision: f64,
    #[serde(serialize_with = "two_dp")]
    pub slot_recall: f64,
}

fn percent(correct: usize, n: usize) -> f64 {
    100.0 * correct as f64 / n as f64
}

/// Unweighted mean of per-domain accuracies.
pub fn macro_average(accuracies: &[f64]) -> Option<f64> {
    if accuracies.is_empty() {
        None
    } else {
        Some(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
    }
}

/// Per-domain, pooled (micro) and domain-mean (macro) accuracy.
pub fn aggregate<D: AsRef<str>>(results: &[(D, bool)]) -> Result<EvalReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (domain, matched) in results {
        let entry = counts.entry(domain.as_ref().to_string()).or_default();
        entry.0 += 1;
        entry.1 += usize::from(*matched);
    }
    let total_correct: usize = counts.values().map(|c| c.1).sum();
    let per_domain: BTreeMap<String, DomainScore> = counts
        .into_iter()
        .map(|(d, (n, correct))| (d, DomainScore { n, frame_accuracy: percent(correct, n) }))
        .collect();
    let accs: Vec<f64> = per_domain.values().map(|s| s.frame_accuracy).collect();
    Ok(EvalReport {
        split: String::new(),
        micro_avg: percent(total_correct, results.len()),
        macro_avg: macro_average(&accs).unwrap_or(0.0),
        per_domain,
        unparseable: 0,
        slices: Vec::new(),
        missing: Vec::new(),
        config: None,
    })
}

fn multiset_overlap(a: &[&str], b: &[&str]) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for x in a {
        *counts.entry(x).or_default() += 1;
    }
    b.iter()
        .filter(|y| match counts.get_mut(*y) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

fn ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    if den == 0 {
        if other_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Label-multiset precision and recall of retrieved parses against gold,
/// macro-averaged over examples, as percentages.
pub fn neighbor_pr(neighbor_parses: &[ParseTree], gold_parses: &[ParseTree]) -> Result<PRReport, EvalError> {
    if neighbor_parses.len() != gold_parses.len() {
        return Err(EvalError::LengthMismatch { left: neighbor_parses.len(), right: gold_parses.len() });
    }
    let n = neighbor_parses.len();
    if n == 0 {
        return Err(EvalError::EmptyResults);
    }
    let mut sums = [0f64; 4];
    for (nb, gold) in neighbor_parses.iter().zip(gold_parses) {
        let (ni, ns) = labels(nb);
        let (gi, gs) = labels(gold);
        let oi = multiset_overlap(&ni, &gi);
        let os = multiset_overlap(&ns, &gs);
        sums[0] += ratio(oi, ni.len(), gi.is_empty());
        sums[1] += ratio(oi, gi.len(), ni.is_empty());
        sums[2] += ratio(os, ns.len(), gs.is_empty());
        sums[3] += ratio(os, gs.len(), ns.is_empty());
    }
    let pct = |s: f64| 100.0 * s / n as f64;
    Ok(PRReport {
        intent_precision: pct(sums[0]),
        intent_recall: pct(sums[1]),
        slot_precision: pct(sums[2]),
        slot_recall: pct(sums[3]),
    })
}

fn bucket(name: &str, matches: impl Iterator<Item = bool>) -> Bucket {
    let (n, correct) = matches.fold((0, 0), |(n, c), m| (n + 1, c + usize::from(m)));
    Bucket { name: name.to_string(), n, frame_accuracy: (n > 0).then(|| percent(correct, n)) }
}

/// "simple" (depth 1) versus "complex" (depth 2 and deeper).
pub fn slice_complexity(results: &[(&UtteranceRecord, bool)]) -> SliceReport {
    SliceReport {
        slice_kind: SliceKind::Complexity,
        buckets: vec![
            bucket("simple", results.iter().filter(|(r, _)| r.depth <= 1).map(|(_, m)| *m)),
            bucket("complex", results.iter().filter(|(r, _)| r.depth >= 2).map(|(_, m)| *m)),
        ],
    }
}

pub const FREQUENCY_BUCKETS: [&str; 5] = ["Very Low", "Low", "Medium", "High", "Very High"];

/// Sizes of five contiguous buckets; the first `n % 5` take one extra.
pub fn quintile_sizes(n: usize) -> [usize; 5] {
    let (base, rem) = (n / 5, n % 5);
    std::array::from_fn(|i| base + usize::from(i < rem))
}

/// Five equal-size buckets of test records ordered by how often their
/// skeleton occurs in `train` (ties by skeleton text, then id).
pub fn slice_frequency(results: &[(&UtteranceRecord, bool)], train: &Corpus) -> SliceReport {
    let mut freq: HashMap<&FrameSkeleton, usize> = HashMap::new();
    for r in train.records() {
        *freq.entry(&r.skeleton).or_default() += 1;
    }
    let mut order: Vec<(usize, &str, &str, bool)> = results
        .iter()
        .map(|(r, m)| (freq.get(&r.skeleton).copied().unwrap_or(0), r.skeleton.as_str(), r.id.as_str(), *m))
        .collect();
    order.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let mut rest = order.as_slice();
    let buckets = FREQUENCY_BUCKETS
        .iter()
        .zip(quintile_sizes(order.len()))
        .map(|(name, size)| {
            let (head, tail) = rest.split_at(size);
            rest = tail;
            bucket(name, head.iter().map(|x| x.3))
        })
        .collect();
    SliceReport { slice_kind: SliceKind::FrequencyQuintile, buckets }
}

/// `100 · (a − b) / b`.
pub fn relative_improvement(a: f64, b: f64) -> Result<f64, EvalError> {
    if b <= 0.0 {
        return Err(EvalError::ZeroBaseline(b));
    }
    Ok(100.0 * (a - b) / b)
}

/// Scores `preds` against the gold frames of `test`. Missing predictions
/// count as mismatches; slices that need training frequencies are skipped
/// when `train` is absent.
pub fn evaluate(
    test: &Corpus,
    preds: &PredictionSet,
    train: Option<&Corpus>,
    slices: &[SliceKind],
) -> Result<EvalReport, EvalError> {
    let mut scored = Vec::with_capacity(test.len());
    let mut unparseable = 0;
    let mut missing = Vec::new();
    for rec in test.records() {
        let j = judge(preds.get(&rec.id), &rec.semparse)?;
        match j {
            Judgement::Unparseable => unparseable += 1,
            Judgement::Missing => missing.push(rec.id.clone()),
            _ => {}
        }
        scored.push((rec, j.is_match()));
    }
    let pairs: Vec<(&str, bool)> = scored.iter().map(|(r, m)| (r.domain.as_str(), *m)).collect();
    let mut report = aggregate(&pairs)?;
    report.split = test.split_name().to_string();
    report.unparseable = unparseable;
    report.missing = missing;
    for kind in slices {
        match (kind, train) {
            (SliceKind::Complexity, _) => report.slices.push(slice_complexity(&scored)),
            (SliceKind::FrequencyQuintile, Some(t)) => report.slices.push(slice_frequency(&scored, t)),
            (SliceKind::FrequencyQuintile, None) => {}
        }
    }
    Ok(report)
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// `slice,bucket,n,accuracy` rows with a header line.
    pub fn slices_csv(&self) -> String {
        let mut out = String::from("slice,bucket,n,accuracy\n");
        for slice in &self.slices {
            for b in &slice.buckets {
                let acc = b.frame_accuracy.map(|a| format!("{a:.2}")).unwrap_or_default();
                out.push_str(&format!("{},{},{},{}\n", slice.slice_kind, b.name, b.n, acc));
            }
        }
        out
    }
}

pub fn emit_report(r: &EvalReport, path: &Path) -> Result<(), EvalError> {
    fs::write(path, r.to_json()?).map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}
