use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde_json::{json, Value};

use topret::augment::{augment_corpus, augmented_tsv, index_corpus, AugmentConfig, NeighborPolicy};
use topret::corpus::{ingest_tsv, parse_tsv, subset_incremental};
use topret::embedding::{load_embeddings, Embedder, EmbeddingVector, HashedEmbedder, DEFAULT_DIM};
use topret::evaluation::{emit_report, evaluate};
use topret::knnparser::{load_predictions, predict_corpus};
use topret::topformat::parse_top;
use topret::vindex::{load_index, save_index, ExclusionRule, VectorIndex};
use topret::{Corpus, KnnConfig};

use crate::args::*;

/// Broken invariant inside the pipeline, as opposed to bad input data.
#[derive(Debug)]
pub struct Internal(pub String);

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Internal {}

fn internal(e: impl fmt::Display) -> anyhow::Error {
    Internal(e.to_string()).into()
}

pub type Outcome = anyhow::Result<()>;

fn require_input(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("input file not found: {}", path.display());
    }
    Ok(())
}

fn require_output(path: &Path) -> anyhow::Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("output directory does not exist: {}", parent.display());
    }
    if path.is_dir() {
        bail!("output path is a directory: {}", path.display());
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(path: &Path, split: &str, args: &CorpusArgs) -> anyhow::Result<Corpus> {
    ingest_tsv(path, split, args.header()).with_context(|| format!("loading {}", path.display()))
}

fn config_value(cmd: &Command) -> anyhow::Result<Value> {
    serde_json::to_value(cmd).map_err(internal)
}

fn pretty(v: &Value) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(internal)?;
    s.push('\n');
    Ok(s)
}

/// Builds the embedder described by `args`. Table embedders must cover
/// every id in `ids`.
fn embedder(args: &EmbedArgs, ids: &HashSet<String>) -> anyhow::Result<Box<dyn Embedder>> {
    match args.embedder {
        EmbedderKind::Hashed => {
            Ok(Box::new(HashedEmbedder::new(args.dim.unwrap_or(DEFAULT_DIM), args.embed_seed)?))
        }
        EmbedderKind::File => {
            let path = args.embeddings.as_ref().ok_or_else(|| anyhow!("--embedder file needs --embeddings"))?;
            let table = load_embeddings(path, ids).with_context(|| format!("loading {}", path.display()))?;
            if let Some(d) = args.dim {
                if d != table.dim() {
                    bail!("--dim {d} does not match embedding dimension {} in {}", table.dim(), path.display());
                }
            }
            Ok(Box::new(table))
        }
    }
}

fn check_embedder_paths(args: &EmbedArgs) -> anyhow::Result<()> {
    match &args.embeddings {
        Some(p) if args.embedder == EmbedderKind::File => require_input(p),
        _ => Ok(()),
    }
}

fn ids_of(c: &Corpus) -> HashSet<String> {
    c.records().iter().map(|r| r.id.clone()).collect()
}

fn open_index(path: &Path, embedder_dim: usize) -> anyhow::Result<VectorIndex> {
    let ix = load_index(path).with_context(|| format!("loading {}", path.display()))?;
    if ix.is_empty() {
        bail!("index {} is empty", path.display());
    }
    if ix.dim() != embedder_dim {
        bail!("index {} has dimension {} but the embedder produces {}", path.display(), ix.dim(), embedder_dim);
    }
    Ok(ix)
}

pub fn run(cmd: &Command) -> Outcome {
    let config = config_value(cmd)?;
    match cmd {
        Command::Ingest(a) => ingest(a, config),
        Command::BuildIndex(a) => build(a),
        Command::Query(a) => query(a),
        Command::Augment(a) => augment(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a, config),
        Command::Subset(a) => subset(a, config),
    }
}

fn ingest(a: &IngestArgs, config: Value) -> Outcome {
    require_input(&a.input)?;
    if let Some(out) = &a.out {
        require_output(out)?;
    }
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let (corpus, skipped) = parse_tsv(&text, &a.split, a.corpus.header(), a.skip_bad)
        .with_context(|| format!("loading {}", a.input.display()))?;
    let mut domains: BTreeMap<&str, usize> = BTreeMap::new();
    let mut depths: BTreeMap<usize, usize> = BTreeMap::new();
    for r in corpus.records() {
        *domains.entry(r.domain.as_str()).or_default() += 1;
        *depths.entry(r.depth).or_default() += 1;
    }
    let errors: Vec<Value> = skipped.iter().map(|s| json!({"line": s.line, "error": s.error.to_string()})).collect();
    let summary = json!({
        "split": corpus.split_name(),
        "records": corpus.len(),
        "domains": domains,
        "depth_histogram": depths.iter().map(|(d, n)| (d.to_string(), *n)).collect::<BTreeMap<_, _>>(),
        "skipped": skipped.len(),
        "parse_errors": errors,
        "config": config,
    });
    let text = pretty(&summary)?;
    match &a.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn build(a: &BuildIndexArgs) -> Outcome {
    require_input(&a.train)?;
    check_embedder_paths(&a.embed)?;
    require_output(&a.out)?;
    let train = load_corpus(&a.train, &a.split, &a.corpus)?;
    let e = embedder(&a.embed, &ids_of(&train))?;
    let ix = index_corpus(&train, e.as_ref()).context("building index")?;
    save_index(&ix, &a.out)?;
    eprintln!("indexed {} records (dim {}) into {}", ix.len(), ix.dim(), a.out.display());
    Ok(())
}

fn query(a: &QueryArgs) -> Outcome {
    require_input(&a.index)?;
    check_embedder_paths(&a.embed)?;
    let ix = load_index(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    if ix.is_empty() {
        bail!("index {} is empty", a.index.display());
    }
    let (vector, text): (EmbeddingVector, String) = match (&a.utterance, &a.id) {
        (Some(u), _) => {
            if a.embed.embedder == EmbedderKind::File {
                bail!("--utterance needs the hashed embedder; use --id with file embeddings");
            }
            (embedder(&a.embed, &HashSet::new())?.embed("", u)?, u.clone())
        }
        (None, Some(id)) => {
            let v = ix.vector(id).ok_or_else(|| anyhow!("id `{id}` is not in {}", a.index.display()))?;
            (v, ix.utterance_of(id).unwrap_or_default().to_string())
        }
        (None, None) => bail!("one of --id or --utterance is required"),
    };
    let id = a.id.as_deref().unwrap_or("");
    let rule = match a.exclude {
        ExcludeArg::None => ExclusionRule::None,
        ExcludeArg::Id => ExclusionRule::ById(id.to_string()),
        ExcludeArg::Text => ExclusionRule::by_text(&text),
        ExcludeArg::IdText => ExclusionRule::by_id_and_text(id, &text),
    };
    let list = ix.query(&vector, a.k, &rule).context("querying index")?;
    for (rank, n) in list.entries.iter().enumerate() {
        let pos = ix.position(&n.id).ok_or_else(|| internal(format!("neighbor `{}` vanished", n.id)))?;
        println!("{}\t{}\t{:.6}\t{}\t{}", rank + 1, n.id, n.distance, ix.domain(pos), ix.utterance(pos));
    }
    Ok(())
}

fn augment(a: &AugmentArgs) -> Outcome {
    for p in [&a.corpus, &a.train, &a.index] {
        require_input(p)?;
    }
    check_embedder_paths(&a.embed)?;
    require_output(&a.out)?;
    let cfg = AugmentConfig {
        mode: a.mode.into(),
        k: a.k,
        separator: a.separator.clone(),
        policy: NeighborPolicy { kind: a.policy.kind(), exclusion: a.exclude.into() },
        seed: a.policy.seed,
    };
    cfg.validate()?;
    let train = load_corpus(&a.train, "train", &a.corpus_args)?;
    let corpus = if a.corpus == a.train && a.split == "train" {
        train.clone()
    } else {
        load_corpus(&a.corpus, &a.split, &a.corpus_args)?
    };
    let e = embedder(&a.embed, &ids_of(&corpus))?;
    let ix = open_index(&a.index, e.dim())?;
    let examples = augment_corpus(&corpus, &ix, &cfg, &train, e.as_ref()).context("augmenting")?;
    write(&a.out, &augmented_tsv(&examples))?;
    eprintln!("wrote {} augmented examples to {}", examples.len(), a.out.display());
    Ok(())
}

fn predict(a: &PredictArgs) -> Outcome {
    for p in [&a.test, &a.train, &a.index] {
        require_input(p)?;
    }
    check_embedder_paths(&a.embed)?;
    require_output(&a.out)?;
    let train = load_corpus(&a.train, "train", &a.corpus_args)?;
    let test = load_corpus(&a.test, &a.split, &a.corpus_args)?;
    let e = embedder(&a.embed, &ids_of(&test))?;
    let ix = open_index(&a.index, e.dim())?;
    let cfg = KnnConfig {
        policy: NeighborPolicy { kind: a.policy.kind(), exclusion: a.exclude.into() },
        seed: a.policy.seed,
        ..KnnConfig::default()
    };
    let preds = predict_corpus(&test, &ix, &train, e.as_ref(), &cfg).context("predicting")?;
    if let Some(id) = preds.iter().find(|(_, f)| parse_top(f).is_err()).map(|(id, _)| id) {
        return Err(internal(format!("prediction for `{id}` is not a well-formed frame")));
    }
    write(&a.out, &preds.to_tsv())?;
    eprintln!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn eval(a: &EvalArgs, config: Value) -> Outcome {
    require_input(&a.test)?;
    require_input(&a.preds)?;
    if let Some(t) = &a.train {
        require_input(t)?;
    }
    require_output(&a.out)?;
    if let Some(c) = &a.csv {
        require_output(c)?;
    }
    let test = load_corpus(&a.test, &a.split, &a.corpus_args)?;
    let train = a.train.as_ref().map(|t| load_corpus(t, "train", &a.corpus_args)).transpose()?;
    let preds = load_predictions(&a.preds, &test).with_context(|| format!("loading {}", a.preds.display()))?;
    let mut report = evaluate(&test, &preds, train.as_ref(), &a.slices).context("evaluating")?;
    report.config = Some(config);
    emit_report(&report, &a.out)?;
    if let Some(c) = &a.csv {
        write(c, &report.slices_csv())?;
    }
    if !report.missing.is_empty() {
        eprintln!("{} test records have no prediction: {}", report.missing.len(), report.missing.join(", "));
    }
    eprintln!("micro {:.2}  macro {:.2}", report.micro_avg, report.macro_avg);
    Ok(())
}

fn subset(a: &SubsetArgs, config: Value) -> Outcome {
    require_input(&a.corpus)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let corpus = load_corpus(&a.corpus, &a.split, &a.corpus_args)?;
    let subsets = subset_incremental(&corpus, &a.fractions, a.seed)?;
    let mut files = Vec::new();
    for (f, s) in a.fractions.iter().zip(&subsets) {
        let path: PathBuf = a.out_dir.join(format!("subset_{f}.tsv"));
        write(&path, &s.to_tsv())?;
        files.push(json!({"fraction": f, "records": s.len(), "path": path}));
    }
    print!("{}", pretty(&json!({"subsets": files, "config": config}))?);
    Ok(())
}
