//! `adenorm` command line: `ingest`, `train`, `index`, `link`, `evaluate`.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by command flags. Relative paths in the file resolve against the file's
//! directory. Every seeded component draws its seed from the root `seed`
//! via [`derive_seed`] with the component names listed in [`components`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::encoder::{EncoderConfig, LookupEncoder, NgramEncoder, TextEncoder};
use crate::evaluation::{evaluate_dataset, format_report, load_dataset};
use crate::ontology::{write_pairs_jsonl, ConceptStore};
use crate::retrieval::{entries_from_store, HnswParams, Linker, VectorIndex};
use crate::seed::derive_seed;
use crate::training::{load_sts, run_schedule, CheckpointSink, Schedule, ScheduleName, TrainConfig};

/// Component names fed to [`derive_seed`].
pub mod components {
    pub const ENCODER: &str = "encoder";
    pub const TRAIN_STS: &str = "train.sts";
    pub const TRAIN_LORD: &str = "train.lord";
    pub const HNSW: &str = "hnsw";
}

#[derive(Debug, Parser)]
#[command(name = "adenorm", version, about = "Zero-shot biomedical concept normalization")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every seeded component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a dictionary (and definitions), print counts.
    Ingest(IngestArgs),
    /// Run a training schedule, writing one checkpoint per stage.
    Train(TrainArgs),
    /// Encode a dictionary and build a search index.
    Index(IndexArgs),
    /// Print ranked concepts for mentions.
    Link(LinkArgs),
    /// Accuracy@k over the splits of a mention dataset.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct EncoderSource {
    /// Encoder checkpoint (`adenorm-enc-v1`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed embeddings (JSON Lines), instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub definitions: Option<PathBuf>,
    /// Also write synonym pairs as JSON Lines (debugging aid).
    #[arg(long)]
    pub dump_pairs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// One of lord, sts-lord-sts, sts-only, synonym-lord.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub definitions: Option<PathBuf>,
    #[arg(long)]
    pub sts: Option<PathBuf>,
    /// Directory for checkpoints and the training log.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh encoder.
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    /// File-name prefix for outputs (defaults to the schedule name).
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Exact,
    Hnsw,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub encoder: EncoderSource,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub ef_construction: Option<usize>,
    #[arg(long)]
    pub ef_search: Option<usize>,
    /// Output index file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[command(flatten)]
    pub encoder: EncoderSource,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, conflicts_with = "mentions_file")]
    pub mention: Option<String>,
    /// One mention per line.
    #[arg(long)]
    pub mentions_file: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: Option<u32>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub encoder: EncoderSource,
    /// Prebuilt index; without it an exact index is built from `--dictionary`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: Option<u32>,
    #[arg(long)]
    pub model_tag: Option<String>,
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dictionary: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub sts: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub schedule: Option<String>,
    pub sts: TrainConfig,
    pub lord: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            schedule: None,
            sts: TrainConfig::default(),
            lord: TrainConfig::default(),
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub model_tag: Option<String>,
    pub index_kind: KindArg,
    pub paths: PathsConfig,
    pub encoder: EncoderConfig,
    pub train: TrainSection,
    pub hnsw: HnswParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 1,
            model_tag: None,
            index_kind: KindArg::Exact,
            paths: PathsConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainSection::default(),
            hnsw: HnswParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.dictionary,
            &mut p.definitions,
            &mut p.sts,
            &mut p.dataset,
            &mut p.checkpoint,
            &mut p.embeddings,
            &mut p.index,
            &mut p.out_dir,
        ] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    /// Pushes the root seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        let root = self.seed;
        self.encoder.seed = derive_seed(root, components::ENCODER);
        self.train.sts.seed = derive_seed(root, components::TRAIN_STS);
        self.train.lord.seed = derive_seed(root, components::TRAIN_LORD);
        self.hnsw.seed = derive_seed(root, components::HNSW);
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| anyhow!("missing --{name} (or paths.{} in the config)", name.replace('-', "_")))
}

/// An encoder loaded from either source.
pub enum AnyEncoder {
    Ngram(NgramEncoder),
    Lookup(LookupEncoder),
}

impl AnyEncoder {
    fn load(src: &EncoderSource, cfg: &RunConfig) -> Result<(Self, String)> {
        let checkpoint = src.checkpoint.clone();
        let embeddings = src.embeddings.clone();
        let (ckpt, emb) = match (checkpoint, embeddings) {
            (None, None) => (cfg.paths.checkpoint.clone(), cfg.paths.embeddings.clone()),
            other => other,
        };
        let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match (ckpt, emb) {
            (Some(p), _) => {
                let enc = NgramEncoder::load(&p).with_context(|| format!("loading checkpoint {}", p.display()))?;
                Ok((AnyEncoder::Ngram(enc), stem(&p)))
            }
            (None, Some(p)) => {
                let enc =
                    LookupEncoder::load(&p).with_context(|| format!("loading embeddings {}", p.display()))?;
                Ok((AnyEncoder::Lookup(enc), stem(&p)))
            }
            (None, None) => bail!("missing --checkpoint or --embeddings"),
        }
    }
}

impl TextEncoder for AnyEncoder {
    fn dim(&self) -> usize {
        match self {
            AnyEncoder::Ngram(e) => e.dim(),
            AnyEncoder::Lookup(e) => e.dim(),
        }
    }

    fn encode(&self, text: &str) -> crate::Result<crate::encoder::EmbeddingVector> {
        match self {
            AnyEncoder::Ngram(e) => e.encode(text),
            AnyEncoder::Lookup(e) => e.encode(text),
        }
    }
}

fn load_store(dictionary: &Path, definitions: Option<&Path>) -> Result<ConceptStore> {
    let (mut store, _) = ConceptStore::load_dictionary(dictionary)
        .with_context(|| format!("loading dictionary {}", dictionary.display()))?;
    if let Some(defs) = definitions {
        store
            .load_definitions(defs)
            .with_context(|| format!("loading definitions {}", defs.display()))?;
    }
    Ok(store)
}

/// Runs one command, writing its primary output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &cfg, out),
        Command::Train(a) => cmd_train(a, &cfg, out),
        Command::Index(a) => cmd_index(a, &cfg, out),
        Command::Link(a) => cmd_link(a, &cfg, out),
        Command::Evaluate(a) => cmd_evaluate(a, &cfg, out),
    }
}

pub fn cmd_ingest(a: &IngestArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dictionary = required(a.dictionary.clone(), &cfg.paths.dictionary, "dictionary")?;
    let definitions = a.definitions.clone().or_else(|| cfg.paths.definitions.clone());
    let store = load_store(&dictionary, definitions.as_deref())?;
    writeln!(
        out,
        "concepts={} synonyms={} definitions={}",
        store.len(),
        store.synonym_count(),
        store.definition_count()
    )?;
    if let Some(p) = &a.dump_pairs {
        let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_pairs_jsonl(&store.synonym_pairs(cfg.train.lord.seed), std::io::BufWriter::new(file))?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let schedule_name: ScheduleName = a
        .schedule
        .clone()
        .or_else(|| cfg.train.schedule.clone())
        .ok_or_else(|| anyhow!("missing --schedule (or train.schedule in the config)"))?
        .parse()?;
    let dictionary = required(a.dictionary.clone(), &cfg.paths.dictionary, "dictionary")?;
    let definitions = a.definitions.clone().or_else(|| cfg.paths.definitions.clone());
    let out_dir = required(a.out_dir.clone(), &cfg.paths.out_dir, "out-dir")?;
    let store = load_store(&dictionary, definitions.as_deref())?;

    let needs_sts = schedule_name.kinds().contains(&crate::training::StageKind::Sts);
    let sts = if needs_sts {
        let p = required(a.sts.clone(), &cfg.paths.sts, "sts")?;
        Some(load_sts(&p).with_context(|| format!("loading STS data {}", p.display()))?)
    } else {
        None
    };
    let schedule = Schedule::named(schedule_name, &store, sts.as_deref(), cfg.train.sts, cfg.train.lord)?;

    let initial = match &a.init_checkpoint {
        Some(p) => NgramEncoder::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => NgramEncoder::new(cfg.encoder)?,
    };
    let sink = CheckpointSink {
        dir: out_dir,
        prefix: a
            .tag
            .clone()
            .or_else(|| cfg.model_tag.clone())
            .unwrap_or_else(|| schedule_name.as_str().to_string()),
    };
    let run = run_schedule(initial, &schedule, Some(&sink))?;
    for (report, path) in run.reports.iter().zip(&run.checkpoint_paths) {
        let last = report.epochs.last().map_or(f64::NAN, |e| e.loss);
        writeln!(
            out,
            "stage{} {:?} loss={:.6} checkpoint={}",
            report.stage,
            report.kind,
            last,
            path.display()
        )?;
    }
    writeln!(out, "log={}", sink.log_path().display())?;
    Ok(())
}

pub fn cmd_index(a: &IndexArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let (encoder, _) = AnyEncoder::load(&a.encoder, cfg)?;
    let dictionary = required(a.dictionary.clone(), &cfg.paths.dictionary, "dictionary")?;
    let out_path = required(a.out.clone(), &cfg.paths.index, "out")?;
    let store = load_store(&dictionary, None)?;
    let entries = entries_from_store(&store, &encoder)?;
    let kind = a.kind.unwrap_or(cfg.index_kind);
    let index = match kind {
        KindArg::Exact => VectorIndex::build_exact(entries)?,
        KindArg::Hnsw => {
            let mut params = cfg.hnsw;
            params.m = a.m.unwrap_or(params.m);
            params.ef_construction = a.ef_construction.unwrap_or(params.ef_construction);
            params.ef_search = a.ef_search.unwrap_or(params.ef_search);
            VectorIndex::build_hnsw(entries, params)?
        }
    };
    index
        .save(&out_path)
        .with_context(|| format!("writing index {}", out_path.display()))?;
    log::info!(
        "{:?} index over {} concepts written to {}",
        index.kind(),
        index.distinct_concepts(),
        out_path.display()
    );
    writeln!(out, "entries={}", index.len())?;
    Ok(())
}

fn write_results(out: &mut dyn Write, results: &[crate::retrieval::RetrievalResult]) -> Result<()> {
    for r in results {
        writeln!(out, "{}\t{}\t{:.4}\t{}", r.concept_id, r.synonym, r.score, r.rank)?;
    }
    Ok(())
}

pub fn cmd_link(a: &LinkArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let k = a.k.map_or(cfg.k, |k| k as usize);
    if k == 0 {
        bail!("k must be at least 1");
    }
    let (encoder, _) = AnyEncoder::load(&a.encoder, cfg)?;
    let index_path = required(a.index.clone(), &cfg.paths.index, "index")?;
    let index = VectorIndex::load(&index_path).with_context(|| format!("loading index {}", index_path.display()))?;
    let linker = Linker::new(&encoder, &index)?;
    match (&a.mention, &a.mentions_file) {
        (Some(m), _) => write_results(out, &linker.link(m, k)?)?,
        (None, Some(p)) => {
            let content = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            for mention in content.lines().filter(|l| !l.trim().is_empty()) {
                writeln!(out, "# {mention}")?;
                write_results(out, &linker.link(mention, k)?)?;
            }
        }
        (None, None) => bail!("missing --mention or --mentions-file"),
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let k = a.k.map_or(cfg.k, |k| k as usize);
    if k == 0 {
        bail!("k must be at least 1");
    }
    let (encoder, encoder_name) = AnyEncoder::load(&a.encoder, cfg)?;
    let dataset_path = required(a.dataset.clone(), &cfg.paths.dataset, "dataset")?;
    let examples = load_dataset(&dataset_path)?;

    let index = match a.index.clone().or_else(|| cfg.paths.index.clone()) {
        Some(p) if a.dictionary.is_none() => {
            VectorIndex::load(&p).with_context(|| format!("loading index {}", p.display()))?
        }
        _ => {
            let dictionary = required(a.dictionary.clone(), &cfg.paths.dictionary, "dictionary")?;
            let store = load_store(&dictionary, None)?;
            VectorIndex::build_exact(entries_from_store(&store, &encoder)?)?
        }
    };
    let linker = Linker::new(&encoder, &index)?;
    let model_tag = a
        .model_tag
        .clone()
        .or_else(|| cfg.model_tag.clone())
        .unwrap_or(encoder_name);
    let dataset_name = a.dataset_name.clone().unwrap_or_else(|| {
        dataset_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let (report, misses) = evaluate_dataset(&examples, &linker, k, &model_tag, &dataset_name)?;
    log::info!("{} misses", misses.len());
    write!(out, "{}", format_report(&report))?;
    let json = report.to_json();
    match &a.json_out {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => writeln!(out, "{json}")?,
    }
    Ok(())
}
