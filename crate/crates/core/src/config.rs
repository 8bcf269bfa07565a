//! Run configuration: a versioned TOML document with every default filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::Family;
use crate::evaluator::{Backend, DEFAULT_T};
use crate::relabel::Mix;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Dyna,
    DynaPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    Tabular,
    Feedforward,
}

impl From<BackendName> for Backend {
    fn from(b: BackendName) -> Self {
        match b {
            BackendName::Tabular => Backend::Tabular,
            BackendName::Feedforward => Backend::Feedforward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluatorSection {
    pub backend: BackendName,
    pub t_bins: usize,
    /// Relabeling mixture, e.g. `fepg` or `episode:0.5,pertask:0.5`.
    pub mix: String,
    pub batch_size: usize,
    /// Evaluator updates per environment interaction.
    pub batches_per_step: usize,
    pub sync_period: u64,
    /// Step size; the backend's own default when absent.
    pub lr: Option<f64>,
    /// Hidden widths of the feedforward backend.
    pub hidden: Vec<usize>,
}

impl Default for EvaluatorSection {
    fn default() -> Self {
        Self {
            backend: BackendName::Tabular,
            t_bins: DEFAULT_T,
            mix: "fepg".into(),
            batch_size: 32,
            batches_per_step: 1,
            sync_period: 1000,
            lr: None,
            hidden: vec![128; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynaSection {
    pub n_sim: usize,
    pub alpha: f64,
    /// Interactions over which exploration anneals from 1.0 to 0.05.
    pub eps_steps: u64,
    pub threshold: f64,
    pub p_g1: f64,
    pub p_g2: f64,
    /// Nearest hallucination candidates to draw among; 0 for all.
    pub k: usize,
}

impl Default for DynaSection {
    fn default() -> Self {
        Self {
            n_sim: 10,
            alpha: 0.5,
            eps_steps: 30_000,
            threshold: 0.05,
            p_g1: 0.03,
            p_g2: 0.05,
            k: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    pub theta: f64,
    pub tau: usize,
    pub n_candidates: usize,
    /// Disconnect candidates the evaluator rejects.
    pub reject: bool,
    pub p_g1: f64,
    pub p_g2: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        Self {
            theta: 0.05,
            tau: 8,
            n_candidates: 5,
            reject: true,
            p_g1: 0.0,
            p_g2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub difficulties: Vec<f64>,
    pub tasks_per_difficulty: usize,
    pub max_steps: usize,
    /// Random-walk episodes per evaluation task used to fit the candidate sampler.
    pub warmup_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            difficulties: crate::metrics::OOD_DIFFICULTIES.to_vec(),
            tasks_per_difficulty: 5,
            max_steps: 100,
            warmup_episodes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub run_id: String,
    pub family: String,
    pub width: usize,
    pub height: usize,
    pub difficulty: f64,
    pub n_train_tasks: usize,
    pub task_seed: u64,
    pub interactions: u64,
    pub max_episode_len: usize,
    pub gamma: f64,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Interactions between metric snapshots.
    pub snapshot_every: u64,
    pub evaluator: EvaluatorSection,
    pub dyna: DynaSection,
    pub planner: PlannerSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_id: "run".into(),
            family: "ssm".into(),
            width: 8,
            height: 8,
            difficulty: 0.25,
            n_train_tasks: 50,
            task_seed: 0,
            interactions: 50_000,
            max_episode_len: 100,
            gamma: 0.95,
            agent: AgentKind::DynaPlus,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            snapshot_every: 5_000,
            evaluator: EvaluatorSection::default(),
            dyna: DynaSection::default(),
            planner: PlannerSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn family(&self) -> Result<Family, ConfigError> {
        self.family.parse().map_err(|_| invalid("family", format!("unknown family `{}`", self.family)))
    }

    pub fn mix(&self) -> Result<Mix, ConfigError> {
        Mix::parse(&self.evaluator.mix).map_err(|e| invalid("evaluator.mix", e.to_string()))
    }

    /// Nearest-candidate limit of the injector.
    pub fn injector_k(&self) -> Option<usize> {
        (self.dyna.k > 0).then_some(self.dyna.k)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        self.family()?;
        self.mix()?;
        if self.width < 2 || self.height < 2 {
            return Err(invalid("width", "grid must be at least 2x2"));
        }
        if !(0.0..1.0).contains(&self.difficulty) {
            return Err(invalid("difficulty", "must lie in [0, 1)"));
        }
        if self.n_train_tasks == 0 {
            return Err(invalid("n_train_tasks", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1]"));
        }
        if self.snapshot_every == 0 {
            return Err(invalid("snapshot_every", "must be positive"));
        }
        if self.max_episode_len == 0 {
            return Err(invalid("max_episode_len", "must be positive"));
        }
        if self.evaluator.t_bins < 2 {
            return Err(invalid("evaluator.t_bins", "needs at least two bins"));
        }
        if self.evaluator.batch_size == 0 {
            return Err(invalid("evaluator.batch_size", "must be positive"));
        }
        if self.evaluator.sync_period == 0 {
            return Err(invalid("evaluator.sync_period", "must be positive"));
        }
        if self.evaluator.lr.is_some_and(|lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(invalid("evaluator.lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dyna.alpha) {
            return Err(invalid("dyna.alpha", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.dyna.threshold) {
            return Err(invalid("dyna.threshold", "must lie in [0, 1]"));
        }
        let rates = |p1: f64, p2: f64| (0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2) && p1 + p2 <= 1.0;
        if !rates(self.dyna.p_g1, self.dyna.p_g2) {
            return Err(invalid("dyna.p_g1", "rates must lie in [0, 1] and sum to at most 1"));
        }
        if !rates(self.planner.p_g1, self.planner.p_g2) {
            return Err(invalid("planner.p_g1", "rates must lie in [0, 1] and sum to at most 1"));
        }
        if !(0.0..=1.0).contains(&self.planner.theta) {
            return Err(invalid("planner.theta", "must lie in [0, 1]"));
        }
        if self.planner.tau == 0 {
            return Err(invalid("planner.tau", "must be positive"));
        }
        if self.eval.difficulties.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(invalid("eval.difficulties", "each must lie in [0, 1)"));
        }
        Ok(())
    }
}
