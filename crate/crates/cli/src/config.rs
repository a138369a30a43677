//! Run configuration: a JSON document with a fixed schema. Unknown keys are
//! rejected, relative paths are resolved against the config file's
//! directory, and every referenced input must exist.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jket_core::blocks::{CellKind, EncoderKind, FinalState};
use jket_core::joint::{Interval, SharingPlan};
use jket_core::kge::KgeConfig;
use jket_core::lm::LmConfig;
use jket_core::optim::{Optimizer, OptimizerKind};
use jket_core::typer::TyperConfig;

use crate::error::{CliError, CoreContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    Kge,
    Et,
    Lm,
    JointKgeEt,
    JointKgeLm,
}

impl TaskName {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Kge => "kge",
            TaskName::Et => "et",
            TaskName::Lm => "lm",
            TaskName::JointKgeEt => "joint-kge-et",
            TaskName::JointKgeLm => "joint-kge-lm",
        }
    }

    fn default_plan(self) -> &'static str {
        match self {
            TaskName::JointKgeEt => "kge_et_shared_embeddings",
            TaskName::JointKgeLm => "kge_lm_shared_forward_cell",
            _ => "none",
        }
    }
}

/// Input files. For `joint-kge-et`, `train`/`dev`/`test` hold triples and
/// the `typing_*` entries hold typing records; for `joint-kge-lm`, `train`
/// is the sentence-and-facts corpus, which is split 80/10/10 internally.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typing_train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typing_dev: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typing_test: Option<PathBuf>,
}

impl DataPaths {
    fn all_mut(&mut self) -> [&mut Option<PathBuf>; 6] {
        [
            &mut self.train,
            &mut self.dev,
            &mut self.test,
            &mut self.typing_train,
            &mut self.typing_dev,
            &mut self.typing_test,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderName {
    #[default]
    Bilstm,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellName {
    #[default]
    Lstm,
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinalStateName {
    #[default]
    Rightmost,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

/// `"epoch"` or `{"steps": n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalConfig {
    #[default]
    Epoch,
    Steps(usize),
}

fn d50() -> usize {
    50
}
fn d100() -> usize {
    100
}
fn kge_head() -> [usize; 2] {
    [100, 100]
}
fn typer_head() -> [usize; 3] {
    [100, 100, 100]
}
fn one() -> f64 {
    1.0
}
fn weight_decay() -> f64 {
    1e-5
}
fn tau() -> f64 {
    0.5
}
fn learning_rate() -> f64 {
    1e-3
}
fn batch_size() -> usize {
    32
}
fn epochs() -> usize {
    10
}
fn ratio() -> usize {
    1
}
fn max_vocab() -> usize {
    70_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the subcommand when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskName>,
    /// Mandatory, here or through `--seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataPaths,
    /// Word vectors in GloVe text format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default = "d50")]
    pub embed_dim: usize,
    #[serde(default = "d50")]
    pub hidden: usize,
    #[serde(default = "d100")]
    pub attention_dim: usize,
    #[serde(default = "kge_head")]
    pub kge_head: [usize; 2],
    #[serde(default = "typer_head")]
    pub typer_head: [usize; 3],
    #[serde(default)]
    pub encoder: EncoderName,
    #[serde(default)]
    pub cell: CellName,
    #[serde(default)]
    pub final_state: FinalStateName,
    /// `k`, the weight of the positive term in the KGE loss.
    #[serde(default = "one")]
    pub pos_weight: f64,
    /// `lambda`, applied as weight decay.
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "tau")]
    pub tau: f64,
    #[serde(default)]
    pub sigmoid_scores: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_window: Option<usize>,
    #[serde(default)]
    pub tie_embeddings: bool,
    #[serde(default)]
    pub optimizer: OptimizerName,
    #[serde(default = "learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    /// Training epochs; for joint runs, alternation rounds.
    #[serde(default = "epochs")]
    pub epochs: usize,
    #[serde(default = "ratio")]
    pub negative_ratio: usize,
    #[serde(default = "max_vocab")]
    pub max_vocab: usize,
    /// Sharing plan name; joint tasks only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    #[serde(default)]
    pub interval: IntervalConfig,
    /// Joint tasks: also train each task alone with the same settings and
    /// record those reports as baselines.
    #[serde(default)]
    pub baselines: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    /// Parse without validation.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))
    }

    /// Read, resolve and validate the config for `task`. `seed` and `out`
    /// override the file's values.
    pub fn load(path: &Path, task: TaskName, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => usage(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = fs::canonicalize(base).unwrap_or_else(|_| base.to_path_buf());
        cfg.resolve_paths(&base);
        if let Some(s) = seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = out {
            cfg.output = Some(o.to_path_buf());
        }
        cfg.validate(task)?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        for p in self.data.all_mut() {
            join(p);
        }
        join(&mut self.embeddings);
        join(&mut self.output);
    }

    pub fn validate(&mut self, task: TaskName) -> Result<()> {
        if let Some(t) = self.task {
            if t != task {
                return Err(usage(format!(
                    "config is for task {} but the command trains {}",
                    t.as_str(),
                    task.as_str()
                )));
            }
        }
        self.task = Some(task);
        if self.seed.is_none() {
            return Err(usage("seed is mandatory (config \"seed\" or --seed)"));
        }
        if self.output.is_none() {
            return Err(usage("no output directory (config \"output\" or --out)"));
        }
        let sizes = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("attention_dim", self.attention_dim),
            ("kge_head[0]", self.kge_head[0]),
            ("kge_head[1]", self.kge_head[1]),
            ("typer_head[0]", self.typer_head[0]),
            ("typer_head[1]", self.typer_head[1]),
            ("typer_head[2]", self.typer_head[2]),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("negative_ratio", self.negative_ratio),
            ("max_vocab", self.max_vocab),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if self.context_window == Some(0) {
            return Err(usage("context_window must be positive when given"));
        }
        if self.interval == IntervalConfig::Steps(0) {
            return Err(usage("interval steps must be positive"));
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("pos_weight", self.pos_weight)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(usage(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !self.tau.is_finite() {
            return Err(usage("tau must be finite"));
        }
        let plan_name = self.plan.clone().unwrap_or_else(|| task.default_plan().to_string());
        let plan = SharingPlan::by_name(&plan_name).map_err(|e| usage(e.to_string()))?;
        let fits = match task {
            TaskName::JointKgeEt => !plan.mentions("lm"),
            TaskName::JointKgeLm => !plan.mentions("et"),
            _ => plan.aliases.is_empty() && !plan.kge_forward_only,
        };
        if !fits {
            return Err(usage(format!("sharing plan {plan_name} does not apply to task {}", task.as_str())));
        }
        self.plan = Some(plan_name);
        let required: &[(&str, &Option<PathBuf>)] = match task {
            TaskName::JointKgeEt => &[("data.train", &self.data.train), ("data.typing_train", &self.data.typing_train)],
            _ => &[("data.train", &self.data.train)],
        };
        for (name, p) in required {
            if p.is_none() {
                return Err(usage(format!("{name} is required for task {}", task.as_str())));
            }
        }
        let d = &self.data;
        for p in [&d.train, &d.dev, &d.test, &d.typing_train, &d.typing_dev, &d.typing_test, &self.embeddings]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(usage(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn task(&self) -> TaskName {
        self.task.unwrap_or(TaskName::Kge)
    }

    pub fn sharing_plan(&self) -> Result<SharingPlan> {
        SharingPlan::by_name(self.plan.as_deref().unwrap_or("none")).during("config")
    }

    pub fn output_dir(&self) -> &Path {
        self.output.as_deref().unwrap_or(Path::new("."))
    }

    fn cell_kind(&self) -> CellKind {
        match self.cell {
            CellName::Lstm => CellKind::Lstm,
            CellName::Rnn => CellKind::SimpleRnn,
        }
    }

    pub fn kge_config(&self) -> KgeConfig {
        KgeConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            head_hidden: self.kge_head,
            encoder: match self.encoder {
                EncoderName::Bilstm => EncoderKind::BiLstm,
                EncoderName::Lstm => EncoderKind::ForwardLstm,
            },
            cell: self.cell_kind(),
            final_state: match self.final_state {
                FinalStateName::Rightmost => FinalState::Rightmost,
                FinalStateName::Mean => FinalState::Mean,
            },
            pos_weight: self.pos_weight,
        }
    }

    pub fn typer_config(&self) -> TyperConfig {
        TyperConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            attention_dim: self.attention_dim,
            head_hidden: self.typer_head,
            tau: self.tau,
            sigmoid_scores: self.sigmoid_scores,
            context_window: self.context_window,
            cell: self.cell_kind(),
        }
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            tie_embeddings: self.tie_embeddings,
            cell: self.cell_kind(),
        }
    }

    pub fn interval(&self) -> Interval {
        match self.interval {
            IntervalConfig::Epoch => Interval::Epoch,
            IntervalConfig::Steps(n) => Interval::Steps(n),
        }
    }

    pub fn optimizer(&self) -> Result<Optimizer<f32>> {
        let kind = match self.optimizer {
            OptimizerName::Adam => OptimizerKind::adam(),
            OptimizerName::Sgd => OptimizerKind::Sgd,
        };
        Optimizer::new(kind, self.learning_rate, self.weight_decay).during("optimizer")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
