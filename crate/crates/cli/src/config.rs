//! Run configuration: one JSON file drives every stage. Relative paths
//! resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use intent_core::gateway::GatewayConfig;
use intent_core::generation::ConditioningVariant;
use intent_core::model::{ModelConfig, TrainOptions};
use intent_core::synth::GenSpec;

use crate::errors::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactPaths {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Mock fixture JSONL for e2e / --mock runs.
    pub fixtures: Option<PathBuf>,
    /// Golden report the e2e run must reproduce byte-for-byte.
    pub golden_report: Option<PathBuf>,
    /// `pair_id,human_label` CSV enabling agreement stats in the report.
    pub human_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub gateway: GatewayConfig,
    pub model: String,
    pub max_tokens: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            gateway: GatewayConfig::default(),
            model: "gpt-3.5-turbo-0125".into(),
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub paths: ArtifactPaths,
    pub gen: GenSpec,
    pub min_pages: usize,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub vocab_min_freq: usize,
    pub model: ModelConfig,
    pub train: TrainOptions,
    pub generator: EndpointConfig,
    pub judge: EndpointConfig,
    /// When set, classify-eval also runs the text-to-text baseline (prompt
    /// through the generator gateway, output matched to a class).
    pub baseline_model: Option<String>,
    pub variant: ConditioningVariant,
    /// Candidates requested per user.
    pub m: usize,
    pub shuffle_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run-0".into(),
            output_dir: PathBuf::from("runs"),
            paths: ArtifactPaths::default(),
            gen: GenSpec::default(),
            min_pages: 5,
            split_ratios: (0.8, 0.1, 0.1),
            split_seed: 11,
            vocab_min_freq: 1,
            model: ModelConfig::default(),
            train: TrainOptions::default(),
            generator: EndpointConfig::default(),
            judge: EndpointConfig {
                model: "gpt-4-0125-preview".into(),
                max_tokens: 8,
                ..EndpointConfig::default()
            },
            baseline_model: None,
            variant: ConditioningVariant::UsePredicted,
            m: 5,
            shuffle_seed: 13,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        resolve(&base, &mut cfg.output_dir);
        for p in [
            &mut cfg.paths.corpus,
            &mut cfg.paths.vocab,
            &mut cfg.paths.checkpoint,
            &mut cfg.paths.fixtures,
            &mut cfg.paths.golden_report,
            &mut cfg.paths.human_labels,
        ]
        .into_iter()
        .flatten()
        {
            resolve(&base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.m < 1 {
            return Err(CliError::Config("m must be >= 1".into()));
        }
        if self.run_id.is_empty() || self.run_id.contains('/') {
            return Err(CliError::Config(format!(
                "run_id {:?} must be a non-empty path segment",
                self.run_id
            )));
        }
        self.gen
            .validate()
            .map_err(|e| CliError::Config(format!("gen: {e}")))?;
        self.generator
            .gateway
            .validate()
            .map_err(|e| CliError::Config(format!("generator gateway: {e}")))?;
        self.judge
            .gateway
            .validate()
            .map_err(|e| CliError::Config(format!("judge gateway: {e}")))?;
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.paths
            .corpus
            .clone()
            .unwrap_or_else(|| self.run_dir().join("corpus.jsonl"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths
            .vocab
            .clone()
            .unwrap_or_else(|| self.run_dir().join("vocab.txt"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.run_dir().join("checkpoint.bin"))
    }

    pub fn history_path(&self) -> PathBuf {
        self.run_dir().join("history.json")
    }

    pub fn class_report_path(&self) -> PathBuf {
        self.run_dir().join("class_report.json")
    }

    pub fn candidates_path(&self) -> PathBuf {
        self.run_dir()
            .join(format!("candidates.{}.jsonl", self.variant.label()))
    }

    pub fn judgments_path(&self) -> PathBuf {
        self.run_dir()
            .join(format!("judgments.{}.jsonl", self.variant.label()))
    }

    pub fn report_path(&self) -> PathBuf {
        self.run_dir().join("report.json")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.run_dir().join("mock_transcript.jsonl")
    }
}
