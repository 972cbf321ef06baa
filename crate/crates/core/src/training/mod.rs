//! Training objectives and the staged schedule (STS, contrastive, STS).

mod adam;
mod loss;
mod stage;

pub use adam::Adam;
pub use loss::{info_nce_loss, sts_loss, InfoNceOutput, StsOutput};
pub use stage::{evaluate_loss, train_stage, EpochLoss, StageReport};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::NgramEncoder;
use crate::error::{Error, Result};
use crate::ontology::{ConceptStore, TrainingPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StageKind {
    Sts,
    Lord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsExample {
    pub text_a: String,
    pub text_b: String,
    /// In `[0, 1]`.
    pub gold_score: f64,
}

impl StsExample {
    pub fn new(text_a: impl Into<String>, text_b: impl Into<String>, gold_score: f64) -> Result<Self> {
        let (text_a, text_b) = (text_a.into(), text_b.into());
        if text_a.trim().is_empty() || text_b.trim().is_empty() {
            return Err(Error::InvalidArgument("STS texts must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&gold_score) {
            return Err(Error::InvalidArgument(format!("gold score {gold_score} outside [0, 1]")));
        }
        Ok(StsExample {
            text_a,
            text_b,
            gold_score,
        })
    }
}

/// Maximum raw score in STS TSV files.
pub const STS_SCALE: f64 = 5.0;

/// Reads `text_a<TAB>text_b<TAB>score` rows with scores in `0..=5`,
/// rescaled to `[0, 1]`.
pub fn load_sts(path: impl AsRef<Path>) -> Result<Vec<StsExample>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sts(&content, path)
}

pub fn parse_sts(content: &str, origin: &Path) -> Result<Vec<StsExample>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(origin, line_no, format!("expected 3 columns, found {}", cols.len())));
        }
        let raw: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, line_no, format!("bad score {:?}", cols[2])))?;
        if !(0.0..=STS_SCALE).contains(&raw) {
            return Err(Error::parse(origin, line_no, format!("score {raw} outside 0..5")));
        }
        let ex = StsExample::new(cols[0], cols[1], raw / STS_SCALE)
            .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::parse(origin, 0, "no STS examples"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            temperature: 0.05,
            learning_rate: 1e-2,
            epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, kind: StageKind) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        let min_batch = match kind {
            StageKind::Lord => 2,
            StageKind::Sts => 1,
        };
        if self.batch_size < min_batch {
            return Err(Error::Config(format!(
                "batch_size must be at least {min_batch} for {kind:?} stages"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageData {
    Pairs(Vec<TrainingPair>),
    Sts(Vec<StsExample>),
}

impl StageData {
    pub fn len(&self) -> usize {
        match self {
            StageData::Pairs(p) => p.len(),
            StageData::Sts(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> StageKind {
        match self {
            StageData::Pairs(_) => StageKind::Lord,
            StageData::Sts(_) => StageKind::Sts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub data: StageData,
    pub config: TrainConfig,
}

impl Stage {
    pub fn kind(&self) -> StageKind {
        self.data.kind()
    }
}

/// Named schedules mapping onto the model family being reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleName {
    /// One contrastive stage on (name, definition) pairs.
    #[serde(rename = "lord")]
    Lord,
    /// STS, then (name, definition) contrastive, then STS again.
    #[serde(rename = "sts-lord-sts")]
    StsLordSts,
    #[serde(rename = "sts-only")]
    StsOnly,
    /// One contrastive stage on synonym pairs only.
    #[serde(rename = "synonym-lord")]
    SynonymLord,
}

impl ScheduleName {
    pub const ALL: [ScheduleName; 4] = [
        ScheduleName::Lord,
        ScheduleName::StsLordSts,
        ScheduleName::StsOnly,
        ScheduleName::SynonymLord,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleName::Lord => "lord",
            ScheduleName::StsLordSts => "sts-lord-sts",
            ScheduleName::StsOnly => "sts-only",
            ScheduleName::SynonymLord => "synonym-lord",
        }
    }

    pub fn kinds(self) -> &'static [StageKind] {
        match self {
            ScheduleName::Lord | ScheduleName::SynonymLord => &[StageKind::Lord],
            ScheduleName::StsLordSts => &[StageKind::Sts, StageKind::Lord, StageKind::Sts],
            ScheduleName::StsOnly => &[StageKind::Sts],
        }
    }
}

impl FromStr for ScheduleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown schedule {s:?}; expected one of lord, sts-lord-sts, sts-only, synonym-lord"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub stages: Vec<Stage>,
}

impl Schedule {
    /// Builds a named schedule. Contrastive stages draw pairs from `store`
    /// (definitions or synonyms); STS stages use `sts`. Each stage gets its
    /// own config from `sts_config` / `lord_config`, with the seed offset by
    /// the stage position so repeated kinds do not share a shuffle.
    pub fn named(
        name: ScheduleName,
        store: &ConceptStore,
        sts: Option<&[StsExample]>,
        sts_config: TrainConfig,
        lord_config: TrainConfig,
    ) -> Result<Self> {
        let mut stages = Vec::new();
        for (pos, kind) in name.kinds().iter().enumerate() {
            let stage = match kind {
                StageKind::Sts => {
                    let sts = sts.ok_or_else(|| {
                        Error::Config(format!("schedule {} needs STS data", name.as_str()))
                    })?;
                    let mut config = sts_config;
                    config.seed = config.seed.wrapping_add(pos as u64);
                    Stage {
                        data: StageData::Sts(sts.to_vec()),
                        config,
                    }
                }
                StageKind::Lord => {
                    let mut config = lord_config;
                    config.seed = config.seed.wrapping_add(pos as u64);
                    let pairs = if name == ScheduleName::SynonymLord {
                        store.synonym_pairs(config.seed)
                    } else {
                        store.name_definition_pairs()
                    };
                    if pairs.is_empty() {
                        return Err(Error::Config(format!(
                            "schedule {} produced no training pairs (missing definitions or synonyms?)",
                            name.as_str()
                        )));
                    }
                    Stage {
                        data: StageData::Pairs(pairs),
                        config,
                    }
                }
            };
            stages.push(stage);
        }
        Ok(Schedule { stages })
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("empty schedule".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.config
                .validate(s.kind())
                .map_err(|e| Error::Config(format!("stage {}: {e}", i + 1)))?;
            if s.data.is_empty() {
                return Err(Error::Config(format!("stage {} has no data", i + 1)));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub stage: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Where `run_schedule` persists per-stage checkpoints and the log.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub prefix: String,
}

impl CheckpointSink {
    pub fn checkpoint_path(&self, stage: usize) -> PathBuf {
        self.dir.join(format!("{}-stage{stage}.ckpt", self.prefix))
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(format!("{}-train.jsonl", self.prefix))
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub final_state: NgramEncoder,
    /// State after each stage, in order.
    pub checkpoints: Vec<NgramEncoder>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub reports: Vec<StageReport>,
}

impl ScheduleRun {
    pub fn log(&self) -> Vec<LogEntry> {
        self.reports
            .iter()
            .flat_map(|r| {
                r.epochs.iter().map(move |e| LogEntry {
                    stage: r.stage,
                    epoch: e.epoch,
                    loss: e.loss,
                })
            })
            .collect()
    }
}

/// Runs stages in order. With a sink, each stage's checkpoint is written as
/// soon as it finishes, so a later failure leaves earlier checkpoints intact.
pub fn run_schedule(
    initial: NgramEncoder,
    schedule: &Schedule,
    sink: Option<&CheckpointSink>,
) -> Result<ScheduleRun> {
    schedule.validate()?;
    let mut log_writer = match sink {
        Some(s) => {
            fs::create_dir_all(&s.dir).map_err(|e| Error::io(&s.dir, e))?;
            let path = s.log_path();
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((BufWriter::new(file), path))
        }
        None => None,
    };

    let mut state = initial;
    let mut run = ScheduleRun {
        final_state: state.clone(),
        checkpoints: Vec::new(),
        checkpoint_paths: Vec::new(),
        reports: Vec::new(),
    };
    for (i, stage) in schedule.stages.iter().enumerate() {
        let stage_no = i + 1;
        let (next, report) = train_stage(state, &stage.data, &stage.config, stage_no)?;
        state = next;
        if let Some((writer, path)) = log_writer.as_mut() {
            for e in &report.epochs {
                let entry = LogEntry {
                    stage: stage_no,
                    epoch: e.epoch,
                    loss: e.loss,
                };
                serde_json::to_writer(&mut *writer, &entry)?;
                writer.write_all(b"\n").map_err(|e| Error::io(&*path, e))?;
            }
            writer.flush().map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(s) = sink {
            let path = s.checkpoint_path(stage_no);
            state.save(&path)?;
            run.checkpoint_paths.push(path);
        }
        run.checkpoints.push(state.clone());
        run.reports.push(report);
    }
    run.final_state = state;
    Ok(run)
}
