//! TOPv2-style TSV datasets: `domain \t utterance \t semparse [\t extra...]`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::hashing::SplitMix64;
use crate::topformat::{canonicalize, depth, parse_top, serialize, skeleton, FrameSkeleton, ParseTree, TopError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("row {row}: {source}")]
    RowParse { row: usize, source: TopError },
    #[error("line {line}: {source}")]
    LineParse { line: usize, source: TopError },
    #[error("line {line}: expected at least 3 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("no data rows")]
    EmptyFile,
    #[error("fractions must be strictly increasing percentages in (0, 100]: {0:?}")]
    BadFractions(Vec<f64>),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Lowercase and collapse whitespace runs; the textual identity used for
/// duplicate exclusion.
pub fn normalize_utterance(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub domain: String,
    pub utterance: String,
    pub semparse: String,
    pub tree: ParseTree,
    pub canonical: String,
    pub skeleton: FrameSkeleton,
    pub depth: usize,
}

impl UtteranceRecord {
    pub fn new(
        id: impl Into<String>,
        domain: impl Into<String>,
        utterance: impl Into<String>,
        semparse: impl Into<String>,
    ) -> Result<Self, TopError> {
        let semparse = semparse.into();
        let tree = parse_top(&semparse)?;
        let canonical = serialize(&canonicalize(&tree));
        Ok(UtteranceRecord {
            id: id.into(),
            domain: domain.into(),
            utterance: utterance.into(),
            skeleton: skeleton(&tree),
            depth: depth(&tree),
            semparse,
            tree,
            canonical,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    split_name: String,
    records: Vec<UtteranceRecord>,
    domains: BTreeSet<String>,
    by_id: HashMap<String, usize>,
}

/// A row dropped during lenient ingestion.
#[derive(Debug)]
pub struct SkippedRow {
    pub line: usize,
    pub error: CorpusError,
}

impl Corpus {
    pub fn from_records(split_name: impl Into<String>, records: Vec<UtteranceRecord>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        let domains = records.iter().map(|r| r.domain.clone()).collect();
        Ok(Corpus { split_name: split_name.into(), records, domains, by_id })
    }

    /// Builds records from `(domain, utterance, semparse)` rows with ids
    /// `<split>:<row>`.
    pub fn from_rows<'a>(
        split_name: &str,
        rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<Self, CorpusError> {
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(row, (d, u, s))| {
                UtteranceRecord::new(format!("{split_name}:{row}"), d, u, s)
                    .map_err(|source| CorpusError::RowParse { row, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Corpus::from_records(split_name, records)
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn domains(&self) -> &BTreeSet<String> {
        &self.domains
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Rows as `domain \t utterance \t semparse`, no header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\n", r.domain, r.utterance, r.semparse));
        }
        out
    }

    fn subset(&self, mut positions: Vec<usize>) -> Corpus {
        positions.sort_unstable();
        let records = positions.into_iter().map(|i| self.records[i].clone()).collect();
        Corpus::from_records(self.split_name.clone(), records).expect("subset of a valid corpus has unique ids")
    }
}

fn looks_like_header(line: &str) -> bool {
    match line.split('\t').nth(2) {
        Some(col) => parse_top(col).is_err(),
        None => true,
    }
}

/// Parses TSV text. `has_header: None` auto-detects a header by checking
/// whether the first line's third column is a valid frame. With
/// `skip_bad`, malformed rows are collected instead of failing the load.
pub fn parse_tsv(
    text: &str,
    split_name: &str,
    has_header: Option<bool>,
    skip_bad: bool,
) -> Result<(Corpus, Vec<SkippedRow>), CorpusError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let header = match (has_header, lines.peek()) {
        (_, None) => return Err(CorpusError::EmptyFile),
        (Some(h), _) => h,
        (None, Some((_, first))) => looks_like_header(first),
    };
    if header {
        lines.next();
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut rows = 0usize;
    for (row, (idx, raw)) in lines.enumerate() {
        rows += 1;
        let line = idx + 1;
        let cols: Vec<&str> = raw.trim_end_matches('\r').split('\t').collect();
        let result = if cols.len() < 3 {
            Err(CorpusError::ColumnCount { line, found: cols.len() })
        } else {
            UtteranceRecord::new(format!("{split_name}:{row}"), cols[0], cols[1], cols[2])
                .map_err(|source| CorpusError::LineParse { line, source })
        };
        match result {
            Ok(rec) => records.push(rec),
            Err(error) if skip_bad => skipped.push(SkippedRow { line, error }),
            Err(error) => return Err(error),
        }
    }
    if rows == 0 {
        return Err(CorpusError::EmptyFile);
    }
    Ok((Corpus::from_records(split_name, records)?, skipped))
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

pub fn ingest_tsv(path: &Path, split_name: &str, has_header: Option<bool>) -> Result<Corpus, CorpusError> {
    parse_tsv(&read(path)?, split_name, has_header, false).map(|(c, _)| c)
}

pub fn ingest_tsv_lenient(
    path: &Path,
    split_name: &str,
    has_header: Option<bool>,
) -> Result<(Corpus, Vec<SkippedRow>), CorpusError> {
    parse_tsv(&read(path)?, split_name, has_header, true)
}

/// Nested subsets: one seeded shuffle, then the first `ceil(f·N/100)`
/// shuffled records for each fraction `f`, restored to corpus order.
pub fn subset_incremental(c: &Corpus, fractions: &[f64], seed: u64) -> Result<Vec<Corpus>, CorpusError> {
    let valid = !fractions.is_empty()
        && fractions.iter().all(|&f| f > 0.0 && f <= 100.0)
        && fractions.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(CorpusError::BadFractions(fractions.to_vec()));
    }
    let n = c.len();
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    Ok(fractions
        .iter()
        .map(|&f| {
            // guard against products like 14.000000000000002
            let size = ((f * n as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize;
            c.subset(order[..size.min(n)].to_vec())
        })
        .collect())
}

pub fn filter_domain(c: &Corpus, domain: &str) -> Result<Corpus, CorpusError> {
    if !c.domains.contains(domain) {
        return Err(CorpusError::UnknownDomain(domain.to_string()));
    }
    let records = c.records.iter().filter(|r| r.domain == domain).cloned().collect();
    Corpus::from_records(c.split_name.clone(), records)
}
