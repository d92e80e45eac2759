//! The TOML run configuration.
//!
//! Every section is optional and defaults to the values documented on its
//! type. Unknown keys are rejected. Relative paths are resolved against the
//! directory of the config file.
//!
//! ```toml
//! seed = 7
//! source = "world_oracle"      # or "world_model", "files"
//!
//! [world]
//! skew = 2.0
//!
//! [instance]
//! n_pairs = 200
//!
//! [pipeline]
//! k = 16
//! direction = "v2t"
//! fusion = "log_sum"           # or "prob_sum", { weighted_log_sum = 0.5 }
//! cpn = { alpha_t_given_v = 0.9, alpha_v_given_t = 0.1 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bimodel::TrainConfig;
use crate::decode::{DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::pipeline::{EmbeddingConfig, PipelineConfig, ScorerKind};
use crate::rng::Rng;
use crate::seq::Summary;
use crate::world::WorldConfig;

use super::bundle::ScoreFileBundle;

/// Where scores come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Exact probabilities of the world.
    WorldOracle,
    /// A trained checkpoint scoring pairs drawn from the world.
    WorldModel,
    /// Precomputed score files.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    /// Distinct (video, text) pairs in the retrieval instance.
    pub n_pairs: usize,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig { n_pairs: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Checkpoint to score with (`world_model` source) or to decode from.
    pub file: Option<PathBuf>,
    pub dim: usize,
    pub text_summary: Summary,
    pub init_scale: f64,
    /// Divide sequence log-scores by sequence length.
    pub length_normalize: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = crate::bimodel::ModelConfig::default();
        ModelSection {
            file: None,
            dim: m.dim,
            text_summary: m.text_summary,
            init_scale: m.init_scale,
            length_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Training pairs sampled from the world.
    pub samples: usize,
    pub learning_rate: f64,
    /// Total epochs; a resumed run trains only the missing ones.
    pub epochs: usize,
    pub batch_size: usize,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            samples: 5000,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub noise: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let e = EmbeddingConfig::default();
        EmbeddingSection { dim: e.dim, noise: e.noise }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![1, 5, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            alphas: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// CPN strength of the normalized side of the comparison.
    pub alpha: f64,
    /// Row/column cap of heatmaps; `0` disables subsampling.
    pub heatmap_subsample: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            alpha: 1.0,
            heatmap_subsample: crate::evalkit::HEATMAP_SUBSAMPLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub strategy: Strategy,
    pub alpha: f64,
    /// Decoded length; `0` uses the world's text length.
    pub max_len: usize,
    /// Number of instance videos to decode captions for.
    pub conditions: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        DecodeSection {
            strategy: d.strategy,
            alpha: d.alpha,
            max_len: 0,
            conditions: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub source: Source,
    pub world: WorldConfig,
    /// Load the world from a `synth` output instead of generating it.
    pub world_file: Option<PathBuf>,
    pub instance: InstanceConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub pipeline: PipelineConfig,
    pub embeddings: EmbeddingSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub diagnose: DiagnoseSection,
    pub decode: DecodeSection,
    pub files: Option<ScoreFileBundle>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            source: Source::WorldOracle,
            world: WorldConfig::default(),
            world_file: None,
            instance: InstanceConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            pipeline: PipelineConfig::default(),
            embeddings: EmbeddingSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            diagnose: DiagnoseSection::default(),
            decode: DecodeSection::default(),
            files: None,
        }
    }
}

/// Independent seeds of one run, all derived from the run seed.
///
/// The world is generated from `Rng::new(seed)` itself.
pub mod streams {
    pub const INSTANCE: u64 = 1;
    pub const EMBEDDINGS: u64 = 2;
    pub const TRAIN_DATA: u64 = 3;
    pub const MODEL_INIT: u64 = 4;
    pub const TRAIN_ORDER: u64 = 5;
    pub const DECODE: u64 = 6;
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.world_file, &mut self.model.file, &mut self.train.resume].into_iter().flatten() {
            fix(p);
        }
        if let Some(files) = &mut self.files {
            files.resolve_paths(base);
        }
    }

    pub fn child_seed(&self, stream: u64) -> u64 {
        Rng::new(self.seed).child(stream).seed()
    }

    /// Checks that hold for every command.
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        match (self.source, &self.files) {
            (Source::Files, None) => return Err(Error::Config("source = \"files\" needs a [files] section".into())),
            (Source::WorldOracle | Source::WorldModel, Some(_)) => {
                return Err(Error::Config(
                    "a [files] section is only used with source = \"files\"; exactly one score source is allowed".into(),
                ))
            }
            _ => {}
        }
        let expected = match self.source {
            Source::WorldOracle => ScorerKind::World,
            Source::WorldModel => ScorerKind::BiModel,
            Source::Files => ScorerKind::FileScores,
        };
        if self.pipeline.scorer != expected && self.pipeline.scorer != ScorerKind::World {
            return Err(Error::Config(format!(
                "pipeline.scorer = {:?} disagrees with source = {:?}",
                self.pipeline.scorer, self.source
            )));
        }
        if self.source == Source::WorldModel && self.model.file.is_none() {
            return Err(Error::Config("source = \"world_model\" needs model.file".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty and >= 1".into()));
        }
        if let Some(a) = self.sweep.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Config(format!("sweep alpha {a} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.diagnose.alpha) {
            return Err(Error::Config(format!("diagnose.alpha = {} outside [0, 1]", self.diagnose.alpha)));
        }
        for p in [&self.world_file, &self.model.file, &self.train.resume].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        if let Some(files) = &self.files {
            files.check_exists()?;
        }
        Ok(())
    }

    /// Pipeline settings with the scorer matching the source.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            scorer: match self.source {
                Source::WorldOracle => ScorerKind::World,
                Source::WorldModel => ScorerKind::BiModel,
                Source::Files => ScorerKind::FileScores,
            },
            ..self.pipeline
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.child_seed(streams::TRAIN_ORDER),
        }
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            dim: self.embeddings.dim,
            noise: self.embeddings.noise,
            seed: self.child_seed(streams::EMBEDDINGS),
        }
    }
}
