use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempsamp_core::advantage::Strategy;
use tempsamp_core::env::DatasetSpec;
use tempsamp_core::trainer::{TrainConfig, TrainError};

use crate::error::CliError;

/// File names of one training run, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub out_dir: PathBuf,
    pub log_file: String,
    pub summary_file: String,
    pub policy_file: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            log_file: "run.jsonl".into(),
            summary_file: "summary.json".into(),
            policy_file: "policy.json".into(),
        }
    }
}

impl OutputPaths {
    pub fn log_path(&self) -> PathBuf {
        self.out_dir.join(&self.log_file)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out_dir.join(&self.summary_file)
    }

    pub fn policy_path(&self) -> PathBuf {
        self.out_dir.join(&self.policy_file)
    }
}

/// Everything a run needs: trainer and shaping settings, the dataset to
/// generate (or a JSONL file to load instead), and where to write results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    /// Load instances from this JSONL file instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub output: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            dataset: DatasetSpec {
                num_bins: train.num_bins,
                ..DatasetSpec::default()
            },
            train,
            dataset_path: None,
            output: OutputPaths::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub seed: Option<u64>,
    pub steps: Option<(usize, usize)>,
    pub g: Option<usize>,
    pub tau: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub lambda_off: Option<f64>,
    pub kappa: Option<f64>,
    pub wf: Option<f64>,
}

impl ExperimentConfig {
    /// Reads a config file; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.out_dir {
            self.output.out_dir = dir.clone();
        }
        if let Some(s) = o.strategy {
            self.train.strategy = s;
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.dataset.seed = seed;
        }
        if let Some(steps) = o.steps {
            self.train.steps_per_phase = steps;
        }
        if let Some(g) = o.g {
            self.train.group_size = g;
        }
        let shaping = &mut self.train.shaping;
        for (slot, value) in [
            (&mut shaping.tau, o.tau),
            (&mut shaping.alpha1, o.alpha1),
            (&mut shaping.alpha2, o.alpha2),
            (&mut shaping.lambda_off, o.lambda_off),
            (&mut shaping.kappa, o.kappa),
            (&mut self.train.w_f, o.wf),
        ] {
            if let Some(v) = value {
                *slot = v;
            }
        }
    }

    /// Checks every constituent invariant before anything runs.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| match e {
            TrainError::ConfigInvalid { field, reason } => {
                CliError::Validation(format!("invalid config field `train.{field}`: {reason}"))
            }
            other => CliError::Validation(other.to_string()),
        })?;
        if self.dataset_path.is_none() {
            self.dataset
                .validate()
                .map_err(|e| CliError::Validation(format!("invalid config field `dataset`: {e}")))?;
            if self.dataset.num_bins != self.train.num_bins {
                return Err(CliError::Validation(format!(
                    "invalid config field `dataset.num_bins`: {} differs from train.num_bins {}",
                    self.dataset.num_bins, self.train.num_bins
                )));
            }
        }
        Ok(())
    }
}

/// Parses `--steps`: `N` for N steps in each phase, or `A,B`.
pub fn parse_steps(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(',') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}
