use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempsamp_core::advantage::Strategy;
use tempsamp_core::policy::{IntervalPolicy, Matrix};
use tempsamp_core::rewards::SalientAnnotation;
use tempsamp_core::trainer::{StepRecord, StepSink, SCHEMA_VERSION};
use tempsamp_core::{Schema, TimeInterval};

use crate::error::CliError;

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::runtime(path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            CliError::Validation(format!("{}:{}: {e}", path.display(), index + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for v in values {
        serde_json::to_writer(&mut w, v).map_err(|e| CliError::runtime(path.display(), e))?;
        writeln!(w).map_err(|e| CliError::runtime(path.display(), e))?;
    }
    w.flush().map_err(|e| CliError::runtime(path.display(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::runtime(path.display(), e))?;
    writeln!(w).map_err(|e| CliError::runtime(path.display(), e))?;
    w.flush().map_err(|e| CliError::runtime(path.display(), e))
}

/// Creates `path` and any missing parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::runtime(parent.display(), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(path.display(), e))
}

/// Serialized policy, with the reference snapshot when one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema_version: u32,
    pub num_bins: usize,
    pub weights: Vec<Vec<f64>>,
    pub format_weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_weights: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_format_weights: Option<Vec<Vec<f64>>>,
}

impl PolicyFile {
    pub fn from_policy(policy: &IntervalPolicy) -> Self {
        let reference = policy.reference();
        Self {
            schema_version: SCHEMA_VERSION,
            num_bins: policy.num_bins(),
            weights: policy.weights().to_rows(),
            format_weights: policy.format_weights().to_rows(),
            ref_weights: reference.map(|(w, _)| w.to_rows()),
            ref_format_weights: reference.map(|(_, f)| f.to_rows()),
        }
    }

    pub fn into_policy(self) -> Result<IntervalPolicy, CliError> {
        let bad = |e: tempsamp_core::PolicyError| CliError::Validation(format!("policy file: {e}"));
        let reference = match (self.ref_weights, self.ref_format_weights) {
            (Some(w), Some(f)) => Some((
                Matrix::from_rows(&w).map_err(bad)?,
                Matrix::from_rows(&f).map_err(bad)?,
            )),
            (None, None) => None,
            _ => {
                return Err(CliError::Validation(
                    "policy file: ref_weights and ref_format_weights must appear together".into(),
                ))
            }
        };
        IntervalPolicy::from_parts(
            self.num_bins,
            Matrix::from_rows(&self.weights).map_err(bad)?,
            Matrix::from_rows(&self.format_weights).map_err(bad)?,
            reference,
        )
        .map_err(bad)
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub schema_version: u32,
    pub step: usize,
    pub phase: Schema,
    pub strategy: Strategy,
    pub top1_rewards: Vec<f64>,
    pub skewness: Option<f64>,
    pub kl: f64,
    pub objective: f64,
    pub gt_action_prob: f64,
}

impl From<&StepRecord> for LogLine {
    fn from(r: &StepRecord) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            step: r.step,
            phase: r.phase,
            strategy: r.strategy,
            top1_rewards: r.top1_rewards.clone(),
            skewness: r.skewness,
            kl: r.kl,
            objective: r.objective,
            gt_action_prob: r.gt_action_prob,
        }
    }
}

/// Streams step records to a JSONL writer.
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.writer.flush()
    }
}

impl<W: Write> StepSink for JsonlSink<W> {
    fn record(&mut self, record: &StepRecord) -> Result<(), String> {
        serde_json::to_writer(&mut self.writer, &LogLine::from(record)).map_err(|e| e.to_string())?;
        writeln!(self.writer).map_err(|e| e.to_string())
    }
}

/// Ground-truth moments of a highlight annotation: maximal runs of
/// consecutive salient clips.
pub fn salient_segments(ann: &SalientAnnotation) -> Vec<TimeInterval> {
    let clip_len = ann.track.clip_len();
    let mut runs = Vec::new();
    let mut iter = ann.salient.iter().copied().peekable();
    while let Some(first) = iter.next() {
        let mut last = first;
        while iter.peek() == Some(&(last + 1)) {
            last = iter.next().expect("peeked");
        }
        runs.push(
            TimeInterval::new(first as f64 * clip_len, (last + 1) as f64 * clip_len)
                .expect("clip spans are ordered and non-negative"),
        );
    }
    runs
}
