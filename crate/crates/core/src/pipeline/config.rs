use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::carousel::{CarouselOptions, VariantPolicy, DEFAULT_MIN_SUPPORT};
use crate::gatne::GatneConfig;
use crate::ingest::{AnchorRule, EdgeType, ParseMode};
use crate::kge::KgeConfig;
use crate::par::ThreadMode;
use crate::recall::DEFAULT_RECALL_SIZE;
use crate::seed;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub sessions: PathBuf,
    pub catalog: PathBuf,
    pub aspects: PathBuf,
    pub similarity: PathBuf,
    pub judgments: PathBuf,
    /// Directory holding every stage artifact and the manifest.
    pub artifacts: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            sessions: "data/sessions.jsonl".into(),
            catalog: "data/catalog.jsonl".into(),
            aspects: "data/aspects.jsonl".into(),
            similarity: "data/similarity.tsv".into(),
            judgments: "data/judgments.jsonl".into(),
            artifacts: "artifacts".into(),
        }
    }
}

impl PathsConfig {
    fn resolve(&mut self, root: &Path) {
        for p in [
            &mut self.sessions,
            &mut self.catalog,
            &mut self.aspects,
            &mut self.similarity,
            &mut self.judgments,
            &mut self.artifacts,
        ] {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    pub size: usize,
    /// Which per-edge-type embedding feeds the index.
    pub edge_type: EdgeType,
    pub normalize: bool,
    pub min_support: usize,
    pub header_policy: VariantPolicy,
    pub top_k_headers: Option<usize>,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_RECALL_SIZE,
            edge_type: EdgeType::CoBought,
            normalize: false,
            min_support: DEFAULT_MIN_SUPPORT,
            header_policy: VariantPolicy::HashSplit,
            top_k_headers: None,
        }
    }
}

impl RecallConfig {
    pub fn carousel_options(&self) -> CarouselOptions {
        CarouselOptions { min_support: self.min_support, policy: self.header_policy, top_k_headers: self.top_k_headers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

/// `"det"` (single thread), `"parallel"` (all cores) or a worker count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threads {
    Count(usize),
    Named(String),
}

impl Default for Threads {
    fn default() -> Self {
        Threads::Named("det".into())
    }
}

impl Threads {
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        let t = match s.parse::<usize>() {
            Ok(n) => Threads::Count(n),
            Err(_) => Threads::Named(s.to_string()),
        };
        t.mode()?;
        Ok(t)
    }

    pub fn mode(&self) -> Result<ThreadMode, PipelineError> {
        match self {
            Threads::Count(0) => Err(PipelineError::Config("threads must be at least 1".into())),
            Threads::Count(1) => Ok(ThreadMode::Deterministic),
            Threads::Count(_) => Ok(ThreadMode::Parallel),
            Threads::Named(s) => match s.as_str() {
                "det" | "deterministic" => Ok(ThreadMode::Deterministic),
                "parallel" => Ok(ThreadMode::Parallel),
                other => Err(PipelineError::Config(format!("unknown thread setting {other:?}"))),
            },
        }
    }

    /// Worker count to request from the pool, if fixed.
    pub fn count(&self) -> Option<usize> {
        match self {
            Threads::Count(n) => Some(*n),
            Threads::Named(_) => None,
        }
    }
}

/// Everything a run needs. Section `seed` fields are ignored: each stage's
/// seed is derived from the global `seed` and the stage name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: Threads,
    pub parse_mode: ParseMode,
    pub paths: PathsConfig,
    pub anchors: AnchorRule,
    pub synth: SynthConfig,
    pub kge: KgeConfig,
    pub gatne: GatneConfig,
    pub recall: RecallConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Parses TOML; relative paths are taken relative to `root`.
    pub fn from_toml(text: &str, root: &Path) -> Result<Self, PipelineError> {
        let mut config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.paths.resolve(root);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let root = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml(&text, root)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, &[seed::label(stage)])
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { seed: self.stage_seed("synth"), ..self.synth.clone() }
    }

    pub fn kge_config(&self) -> KgeConfig {
        KgeConfig { seed: self.stage_seed("train-kge"), ..self.kge.clone() }
    }

    /// GATNE config with the seed derived and the base dimension tied to the KG dimension.
    pub fn gatne_config(&self) -> GatneConfig {
        GatneConfig { seed: self.stage_seed("train-gatne"), base_dim: self.kge.dim, ..self.gatne.clone() }
    }

    pub fn thread_mode(&self) -> Result<ThreadMode, PipelineError> {
        self.threads.mode()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.thread_mode()?;
        self.synth_config().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.kge_config().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.gatne_config().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.recall.size == 0 || self.eval.k == 0 {
            return Err(PipelineError::Config("recall.size and eval.k must be positive".into()));
        }
        if self.recall.top_k_headers == Some(0) {
            return Err(PipelineError::Config("top_k_headers must be positive".into()));
        }
        Ok(())
    }
}
