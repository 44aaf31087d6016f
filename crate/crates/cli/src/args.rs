use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use topret::augment::{AugmentMode, Exclusion, PolicyKind};
use topret::evaluation::SliceKind;

#[derive(Debug, Parser)]
#[command(name = "topret", version, about = "Retrieval-augmented TOP semantic parsing pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Parse a TSV dataset and print a summary.
    Ingest(IngestArgs),
    /// Embed a training TSV and write an index file.
    BuildIndex(BuildIndexArgs),
    /// Print the nearest neighbors of one utterance or record.
    Query(QueryArgs),
    /// Write retrieval-augmented inputs for a corpus.
    Augment(AugmentArgs),
    /// Predict frames by nearest-neighbor transfer.
    Predict(PredictArgs),
    /// Score predictions and write a JSON report.
    Eval(EvalArgs),
    /// Write nested random subsets of a corpus.
    Subset(SubsetArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CorpusArgs {
    /// Force treating the first line as a header (auto-detected otherwise).
    #[arg(long, conflicts_with = "no_header")]
    pub has_header: bool,
    /// Force treating the first line as data.
    #[arg(long)]
    pub no_header: bool,
}

impl CorpusArgs {
    pub fn header(&self) -> Option<bool> {
        match (self.has_header, self.no_header) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    Hashed,
    File,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long, value_enum, default_value = "hashed")]
    pub embedder: EmbedderKind,
    /// Embedding dimension. Optional with `--embedder file`, where it must
    /// match the file if given.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Seed of the hashed embedder.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    /// Embedding file for `--embedder file`.
    #[arg(long, required_if_eq("embedder", "file"))]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    UtteranceNn,
    SemparseNn,
}

impl From<ModeArg> for AugmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::UtteranceNn => AugmentMode::UtteranceNn,
            ModeArg::SemparseNn => AugmentMode::SemparseNn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    TopK,
    RandomTopM,
    CrossDomain,
    OracleSkeleton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ExcludeArg {
    #[value(name = "none")]
    #[serde(rename = "none")]
    None,
    #[value(name = "id")]
    #[serde(rename = "id")]
    Id,
    #[value(name = "text")]
    #[serde(rename = "text")]
    Text,
    #[value(name = "id+text")]
    #[serde(rename = "id+text")]
    IdText,
}

impl From<ExcludeArg> for Exclusion {
    fn from(e: ExcludeArg) -> Self {
        match e {
            ExcludeArg::None => Exclusion::None,
            ExcludeArg::Id => Exclusion::Id,
            ExcludeArg::Text => Exclusion::Text,
            ExcludeArg::IdText => Exclusion::IdAndText,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value = "top-k")]
    pub policy: PolicyArg,
    /// Pool size for `random-top-m`.
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    /// Seed for sampled policies.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PolicyArgs {
    pub fn kind(&self) -> PolicyKind {
        match self.policy {
            PolicyArg::TopK => PolicyKind::TopK,
            PolicyArg::RandomTopM => PolicyKind::RandomTopM { m: self.m },
            PolicyArg::CrossDomain => PolicyKind::CrossDomainRandom,
            PolicyArg::OracleSkeleton => PolicyKind::OracleSkeleton,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Report malformed rows instead of failing.
    #[arg(long)]
    pub skip_bad: bool,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildIndexArgs {
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Indexed record to query with (its stored vector unless `--utterance`
    /// is also given).
    #[arg(long, required_unless_present = "utterance")]
    pub id: Option<String>,
    #[arg(long)]
    pub utterance: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "none")]
    pub exclude: ExcludeArg,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    /// Corpus to augment.
    pub corpus: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Training TSV the index was built from.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "semparse-nn")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value = "|")]
    pub separator: String,
    #[arg(long, value_enum, default_value = "id")]
    pub exclude: ExcludeArg,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub corpus_args: CorpusArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    pub test: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub exclude: ExcludeArg,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub corpus_args: CorpusArgs,
    #[command(flatten)]
    pub embed: EmbedArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    pub test: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub preds: PathBuf,
    /// Training TSV; enables the frequency slice.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', value_parser = parse_slice)]
    #[serde(serialize_with = "slice_names")]
    pub slices: Vec<SliceKind>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write slice rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub corpus_args: CorpusArgs,
}

fn parse_slice(s: &str) -> Result<SliceKind, String> {
    s.parse()
}

fn slice_names<S: serde::Serializer>(v: &[SliceKind], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|k| k.to_string()))
}

#[derive(Debug, Args, Serialize)]
pub struct SubsetArgs {
    pub corpus: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Increasing percentages, e.g. `10,25,50,100`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub corpus_args: CorpusArgs,
}
