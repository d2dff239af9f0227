//! File formats and command implementations behind the `igam` binary.
//!
//! Binary embedding layout (all little-endian):
//!
//! ```text
//! "IGAMEMB1"            8 bytes
//! p                     u32
//! record count          u64
//! per record:           u32 category, then p × f32
//! ```
//!
//! The CSV alternative has header `category,e0,...,e{p-1}`; the JSON alternative is
//! `{"p": p, "records": [{"category": c, "vector": [...]}, ...]}`.
//!
//! Every command returns a serialisable value; [`to_json`] renders it with a fixed
//! key order and shortest round-trip floats, so re-emitting a parsed document is
//! byte-identical.

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::InfoAmountTable;
use crate::loss::{
    build_margins, ce_forward, igam_forward, normalize_info, normface_forward, CosineClassifier,
    InfoScale, InfoVariant, MarginFile, MarginMatrix, MarginVariant,
};
use crate::planner::{optimal_queue_length, PlanInput, PlanResult, SearchMode};
use crate::stats::{EmbeddingQueue, EmbeddingRecord, EpochAccumulator, GlobalStats, StatsFile};
use crate::toy::{train, EpochReport, LossKind, SyntheticSpec, TrainConfig};

pub const MAGIC: &[u8; 8] = b"IGAMEMB1";
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Bin,
    Csv,
    Json,
}

impl Format {
    /// Guess from the file extension, defaulting to binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            _ => Format::Bin,
        }
    }
}

/// Decoded embedding file.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonEmbeddings {
    p: usize,
    records: Vec<JsonRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    category: u32,
    vector: Vec<f64>,
}

fn malformed(offset: usize, what: impl std::fmt::Display) -> Error {
    Error::Input(format!("malformed embedding file at byte {offset}: {what}"))
}

pub fn decode_binary(bytes: &[u8]) -> Result<Embeddings> {
    if bytes.is_empty() {
        return Err(malformed(0, "file is empty"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(malformed(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(malformed(0, "bad magic, expected IGAMEMB1"));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    if dim == 0 {
        return Err(malformed(8, "dimension is zero"));
    }
    let record_len = 4 + 4 * dim;
    let expected = (count as u128) * record_len as u128 + HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        let offset = if (bytes.len() as u128) < expected {
            bytes.len() - (bytes.len() - HEADER_LEN) % record_len
        } else {
            (expected as usize).min(bytes.len())
        };
        return Err(malformed(
            offset,
            format!(
                "header declares {count} records of {record_len} bytes, file holds {} bytes",
                bytes.len()
            ),
        ));
    }
    let mut records = Vec::with_capacity(count as usize);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(record_len).enumerate() {
        let offset = HEADER_LEN + k * record_len;
        let category = u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes"));
        let mut vector = Vec::with_capacity(dim);
        for (i, f) in chunk[4..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(f.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(malformed(offset + 4 + 4 * i, "non-finite coordinate"));
            }
            vector.push(v as f64);
        }
        records.push(EmbeddingRecord::new(category, vector));
    }
    Ok(Embeddings { dim, records })
}

/// Encode with coordinates rounded to f32.
pub fn encode_binary(embeddings: &Embeddings) -> Result<Vec<u8>> {
    let dim = embeddings.dim;
    let mut out = Vec::with_capacity(HEADER_LEN + embeddings.records.len() * (4 + 4 * dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(embeddings.records.len() as u64).to_le_bytes());
    for r in &embeddings.records {
        if r.dim() != dim {
            return Err(Error::input("record dimension does not match header"));
        }
        out.extend_from_slice(&r.category.to_le_bytes());
        for &v in r.vector.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_csv(bytes: &[u8]) -> Result<Embeddings> {
    if bytes.is_empty() {
        return Err(malformed(0, "file is empty"));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| malformed(0, e))?
        .clone();
    if headers.get(0) != Some("category") || headers.len() < 2 {
        return Err(malformed(0, "header must be category,e0,...,e{p-1}"));
    }
    for (i, h) in headers.iter().skip(1).enumerate() {
        if h != format!("e{i}") {
            return Err(malformed(0, format!("header column {} should be e{i}, got {h}", i + 1)));
        }
    }
    let dim = headers.len() - 1;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let offset = e.position().map(|p| p.byte() as usize).unwrap_or(0);
            malformed(offset, e)
        })?;
        let offset = row.position().map(|p| p.byte() as usize).unwrap_or(0);
        let category: u32 = row[0]
            .trim()
            .parse()
            .map_err(|_| malformed(offset, format!("bad category {:?}", &row[0])))?;
        let vector = row
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(offset, format!("bad coordinate {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        records.push(EmbeddingRecord::new(category, vector));
    }
    Ok(Embeddings { dim, records })
}

pub fn encode_csv(embeddings: &Embeddings) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["category".to_string()];
    header.extend((0..embeddings.dim).map(|i| format!("e{i}")));
    let write_err = |e: csv::Error| Error::input(format!("csv: {e}"));
    w.write_record(&header).map_err(write_err)?;
    for r in &embeddings.records {
        let mut row = vec![r.category.to_string()];
        row.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(write_err)?;
    }
    w.into_inner().map_err(|e| Error::input(format!("csv: {e}")))
}

pub fn decode_json_embeddings(bytes: &[u8]) -> Result<Embeddings> {
    let doc: JsonEmbeddings = parse_json(bytes)?;
    let records = doc
        .records
        .into_iter()
        .map(|r| EmbeddingRecord::new(r.category, r.vector))
        .collect();
    Ok(Embeddings { dim: doc.p, records })
}

pub fn read_embeddings(path: &Path, format: Option<Format>) -> Result<Embeddings> {
    let bytes = std::fs::read(path)?;
    let emb = match format.unwrap_or_else(|| Format::from_path(path)) {
        Format::Bin => decode_binary(&bytes)?,
        Format::Csv => decode_csv(&bytes)?,
        Format::Json => decode_json_embeddings(&bytes)?,
    };
    if emb.records.is_empty() {
        return Err(Error::input(format!("{} contains no records", path.display())));
    }
    for r in &emb.records {
        if r.dim() != emb.dim {
            return Err(Error::input(format!(
                "record of category {} has {} coordinates, expected {}",
                r.category,
                r.dim(),
                emb.dim
            )));
        }
    }
    Ok(emb)
}

/// Parse JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Input(format!("invalid JSON at `{path}`: {}", e.into_inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&std::fs::read(path)?)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Stream records through the queue in file order and merge the windows.
pub fn cmd_stats(embeddings: &Embeddings, queue_len: usize) -> Result<StatsFile> {
    let mut acc = EpochAccumulator::new(EmbeddingQueue::new(queue_len, embeddings.dim)?);
    for r in &embeddings.records {
        acc.push(r.clone())?;
    }
    Ok(acc.finalize_epoch()?.to_file())
}

pub fn cmd_info(stats: &StatsFile, epoch: u64) -> Result<InfoAmountTable> {
    let global = GlobalStats::from_file(stats)?;
    InfoAmountTable::from_global(&global, epoch, None)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MarginOptions {
    pub info_variant: InfoVariant,
    pub info_scale: InfoScale,
    pub margin_variant: MarginVariant,
}

/// Margins for the categories of `info`, in ascending id order.
pub fn cmd_margins(info: &InfoAmountTable, opts: MarginOptions) -> Result<MarginFile> {
    let norm = normalize_info(info, opts.info_variant, opts.info_scale)?;
    Ok(build_margins(&norm, opts.margin_variant)?.to_file())
}

/// Classifier weights, p×C row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub p: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    pub weights_row_major: Vec<f64>,
}

impl WeightsFile {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.weights_row_major.len() != self.p * self.classes {
            return Err(Error::input(format!(
                "weights for p = {}, C = {} need {} values, got {}",
                self.p,
                self.classes,
                self.p * self.classes,
                self.weights_row_major.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.p, self.classes, &self.weights_row_major))
    }

    pub fn from_matrix(w: &DMatrix<f64>) -> Self {
        Self {
            p: w.nrows(),
            classes: w.ncols(),
            weights_row_major: w.transpose().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEvalReport {
    pub loss: LossKind,
    pub scale: f64,
    pub mean_loss: f64,
    pub losses: Vec<f64>,
}

/// Evaluate a loss on every record; the record's category is its label (column index).
pub fn cmd_loss_eval(
    embeddings: &Embeddings,
    weights: &WeightsFile,
    margins: Option<&MarginFile>,
    loss: LossKind,
    scale: f64,
) -> Result<LossEvalReport> {
    let w = weights.to_matrix()?;
    if w.nrows() != embeddings.dim {
        return Err(Error::input(format!(
            "weights have p = {}, embeddings have p = {}",
            w.nrows(),
            embeddings.dim
        )));
    }
    let margins = match (loss, margins) {
        (LossKind::Igam, Some(m)) => MarginMatrix::from_file(m)?,
        (LossKind::Igam, None) => return Err(Error::input("igam loss needs a margin matrix")),
        _ => MarginMatrix::zeros(w.ncols()),
    };
    let clf = match loss {
        LossKind::Ce => None,
        _ => Some(CosineClassifier::new(w.clone(), scale)?),
    };
    let mut losses = Vec::with_capacity(embeddings.records.len());
    for r in &embeddings.records {
        let label = r.category as usize;
        let out = match (&clf, loss) {
            (None, _) => ce_forward(&r.vector, label, &w)?,
            (Some(c), LossKind::Normface) => normface_forward(&r.vector, label, c)?,
            (Some(c), _) => igam_forward(&r.vector, label, c, &margins)?,
        };
        losses.push(out.loss);
    }
    let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
    Ok(LossEvalReport {
        loss,
        scale,
        mean_loss,
        losses,
    })
}

pub fn cmd_plan(instances: u64, dim: u64, classes: u64, mode: SearchMode) -> Result<PlanResult> {
    Ok(optimal_queue_length(&PlanInput::new(instances, dim, classes, mode)?))
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::heterogeneous(0)
    }
}

/// A toy experiment: one dataset spec, a training config, and optionally a sweep
/// over losses and seeds (each seed reseeds both data and training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub dataset: SyntheticSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<Vec<LossKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub loss: LossKind,
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub config: RunConfigFile,
    pub runs: Vec<ToyRun>,
}

pub fn cmd_toy_run(config: &RunConfigFile) -> Result<ToyReport> {
    let losses = config.losses.clone().unwrap_or_else(|| vec![config.train.loss]);
    let seeds = config.seeds.clone().unwrap_or_else(|| vec![config.dataset.seed]);
    if losses.is_empty() || seeds.is_empty() {
        return Err(Error::input("losses and seeds must not be empty"));
    }
    let mut runs = Vec::new();
    for &seed in &seeds {
        let spec = SyntheticSpec {
            seed,
            ..config.dataset.clone()
        };
        for &loss in &losses {
            let train_config = TrainConfig {
                loss,
                seed: if config.seeds.is_some() { seed } else { config.train.seed },
                ..config.train.clone()
            };
            let run = train(&spec, &train_config)?;
            runs.push(ToyRun {
                loss,
                seed,
                epochs: run.reports,
            });
        }
    }
    Ok(ToyReport {
        config: config.clone(),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub loss: LossKind,
    pub seed: u64,
    pub epoch: usize,
    pub bias_variance: f64,
    pub mean_accuracy: f64,
    pub pearson_info_acc: Option<f64>,
    pub max_margin: f64,
}

/// Final-epoch figures of every run.
pub fn cmd_toy_report(report: &ToyReport) -> Result<Vec<SummaryRow>> {
    report
        .runs
        .iter()
        .map(|run| {
            let last = run
                .epochs
                .last()
                .ok_or_else(|| Error::input(format!("run {} / {} has no epochs", run.loss.name(), run.seed)))?;
            let n = last.per_class_accuracy.len().max(1) as f64;
            Ok(SummaryRow {
                loss: run.loss,
                seed: run.seed,
                epoch: last.epoch,
                bias_variance: last.bias_variance,
                mean_accuracy: last.per_class_accuracy.iter().sum::<f64>() / n,
                pearson_info_acc: last.pearson_info_acc,
                max_margin: last.max_margin,
            })
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::input(format!("csv: {e}"));
    w.write_record(["loss", "seed", "epoch", "bias_variance", "mean_accuracy", "pearson_info_acc", "max_margin"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.loss.name().to_string(),
            r.seed.to_string(),
            r.epoch.to_string(),
            r.bias_variance.to_string(),
            r.mean_accuracy.to_string(),
            r.pearson_info_acc.map(|v| v.to_string()).unwrap_or_default(),
            r.max_margin.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::input(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::input(e.to_string()))
}
