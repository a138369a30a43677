//! Model assembly from a run configuration, and archive save/load.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jket_core::joint::{build_kge_et, build_kge_lm, init_rng, KgeEtModels, KgeLmModels, TaskKind};
use jket_core::kge::{KgeModel, ThresholdTable};
use jket_core::lm::LmModel;
use jket_core::typer::{TypeInventory, TyperModel};
use jket_core::vocab::Vocabulary;
use jket_core::{ParamStore, Tensor};

use crate::archive::Archive;
use crate::config::{RunConfig, TaskName};
use crate::error::{CliError, CoreContext, Result};

pub const MODEL_FILE: &str = "model.jket";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub per_relation: BTreeMap<String, f64>,
    pub fallback: f64,
}

impl From<&ThresholdTable> for Thresholds {
    fn from(t: &ThresholdTable) -> Self {
        Thresholds {
            per_relation: t.per_relation.clone(),
            fallback: t.fallback,
        }
    }
}

/// Task metadata stored next to the tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aux {
    /// Subset of `kge`, `et`, `lm`.
    pub tasks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    /// Type inventory, index order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub types: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Models {
    pub kge: Option<KgeModel>,
    pub et: Option<TyperModel>,
    pub lm: Option<LmModel>,
}

impl Models {
    pub fn tasks(&self) -> Vec<String> {
        let mut t = Vec::new();
        if self.kge.is_some() {
            t.push("kge".to_string());
        }
        if self.et.is_some() {
            t.push("et".to_string());
        }
        if self.lm.is_some() {
            t.push("lm".to_string());
        }
        t
    }
}

/// Register the models `cfg` describes. Parameter names depend only on the
/// configuration, so a rebuilt store lines up with the archive.
pub fn build(
    store: &mut ParamStore<f32>,
    cfg: &RunConfig,
    vocab_size: usize,
    num_types: usize,
    embeddings: Option<Tensor<f32>>,
) -> Result<Models> {
    let seed = cfg.seed();
    let op = "build_model";
    Ok(match cfg.task() {
        TaskName::Kge => Models {
            kge: Some(
                KgeModel::new(store, "kge", vocab_size, &cfg.kge_config(), embeddings, &mut init_rng(seed, TaskKind::Kge))
                    .during(op)?,
            ),
            ..Models::default()
        },
        TaskName::Et => Models {
            et: Some(
                TyperModel::new(
                    store,
                    "et",
                    vocab_size,
                    num_types,
                    &cfg.typer_config(),
                    embeddings,
                    &mut init_rng(seed, TaskKind::Typing),
                )
                .during(op)?,
            ),
            ..Models::default()
        },
        TaskName::Lm => Models {
            lm: Some(
                LmModel::new(store, "lm", vocab_size, &cfg.lm_config(), embeddings, &mut init_rng(seed, TaskKind::Lm))
                    .during(op)?,
            ),
            ..Models::default()
        },
        TaskName::JointKgeEt => {
            let KgeEtModels { kge, et } = build_kge_et(
                store,
                &cfg.sharing_plan()?,
                vocab_size,
                num_types,
                &cfg.kge_config(),
                &cfg.typer_config(),
                embeddings,
                seed,
            )
            .during(op)?;
            Models {
                kge: Some(kge),
                et: Some(et),
                lm: None,
            }
        }
        TaskName::JointKgeLm => {
            let KgeLmModels { kge, lm } = build_kge_lm(
                store,
                &cfg.sharing_plan()?,
                vocab_size,
                &cfg.kge_config(),
                &cfg.lm_config(),
                embeddings,
                seed,
            )
            .during(op)?;
            Models {
                kge: Some(kge),
                et: None,
                lm: Some(lm),
            }
        }
    })
}

/// Write `dir/model.jket`. The archived config omits the output directory,
/// which says where a model was written, not what it is.
pub fn save(dir: &Path, cfg: &RunConfig, vocab: &Vocabulary, aux: &Aux, store: &ParamStore<f32>) -> Result<PathBuf> {
    let path = dir.join(MODEL_FILE);
    let aux = serde_json::to_string(aux).expect("aux serializes");
    let mut snapshot = cfg.clone();
    snapshot.output = None;
    Archive::from_store(store, vocab.tokens(), snapshot.to_json(), aux).write(&path)?;
    Ok(path)
}

/// A trained model restored from an archive.
#[derive(Debug)]
pub struct Loaded {
    pub path: PathBuf,
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
    pub aux: Aux,
    pub store: ParamStore<f32>,
    pub models: Models,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let archive = Archive::read(path)?;
        let bad = |m: String| CliError::format(path, None, m);
        let cfg = RunConfig::parse(&archive.config).map_err(|e| bad(format!("archived config: {e}")))?;
        let aux: Aux = serde_json::from_str(&archive.aux).map_err(|e| bad(format!("archived metadata: {e}")))?;
        let vocab = Vocabulary::from_tokens(archive.vocab.clone()).map_err(|e| bad(format!("archived vocabulary: {e}")))?;
        let mut store = ParamStore::new();
        let models = build(&mut store, &cfg, vocab.len(), aux.types.len(), None)?;
        if models.tasks() != aux.tasks {
            return Err(bad(format!("archive lists tasks {:?}, its config builds {:?}", aux.tasks, models.tasks())));
        }
        archive.restore(&mut store, path)?;
        Ok(Loaded {
            path: path.to_path_buf(),
            cfg,
            vocab,
            aux,
            store,
            models,
        })
    }

    /// The task to serve: `requested`, or the only task in the archive.
    pub fn pick_task(&self, requested: Option<&str>) -> Result<String> {
        match requested {
            Some(t) if self.aux.tasks.iter().any(|x| x == t) => Ok(t.to_string()),
            Some(t) => Err(CliError::Usage(format!(
                "archive {} has no {t} model (it has {})",
                self.path.display(),
                self.aux.tasks.join(", ")
            ))),
            None if self.aux.tasks.len() == 1 => Ok(self.aux.tasks[0].clone()),
            None => Err(CliError::Usage(format!(
                "archive {} holds several tasks ({}); pick one with --task",
                self.path.display(),
                self.aux.tasks.join(", ")
            ))),
        }
    }

    pub fn kge(&self) -> Result<&KgeModel> {
        self.models.kge.as_ref().ok_or_else(|| CliError::Usage("archive has no kge model".into()))
    }

    pub fn typer(&self) -> Result<&TyperModel> {
        self.models.et.as_ref().ok_or_else(|| CliError::Usage("archive has no et model".into()))
    }

    pub fn lm(&self) -> Result<&LmModel> {
        self.models.lm.as_ref().ok_or_else(|| CliError::Usage("archive has no lm model".into()))
    }

    pub fn thresholds(&self) -> Result<ThresholdTable> {
        let t = self
            .aux
            .thresholds
            .as_ref()
            .ok_or_else(|| CliError::format(&self.path, None, "archive has no decision thresholds"))?;
        Ok(ThresholdTable {
            per_relation: t.per_relation.clone(),
            fallback: t.fallback,
        })
    }

    pub fn inventory(&self) -> Result<TypeInventory> {
        TypeInventory::from_names(self.aux.types.clone()).map_err(|e| CliError::format(&self.path, None, e.to_string()))
    }
}
