//! Joint training through shared parameters under alternating optimization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;

use crate::blocks::EncoderKind;
use crate::error::{Error, Result};
use crate::kge::{KgeConfig, KgeModel, Triple};
use crate::lm::{LmConfig, LmModel};
use crate::metrics::EvalReport;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::typer::{TyperConfig, TyperModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskKind {
    Kge,
    Typing,
    Lm,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Kge => "kge",
            TaskKind::Typing => "et",
            TaskKind::Lm => "lm",
        }
    }
}

/// A trainable task: owns its data stream, its shuffling RNG and its
/// optimizer state, and updates only its own parameters.
pub trait Task<R: Real> {
    fn kind(&self) -> TaskKind;

    /// Trainable parameters this task's optimizer updates.
    fn params(&self) -> Vec<ParamId>;

    /// Optimizer steps in one pass over the task's data; 0 means no data.
    fn batches_per_epoch(&self) -> usize;

    /// One mini-batch step. Returns the batch loss.
    fn train_step(&mut self, store: &mut ParamStore<R>) -> Result<f64>;
}

/// Mini-batch index ranges over `n` items. A trailing batch of a single
/// item is merged into the previous one so batch statistics stay defined.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let bs = batch_size.max(1);
    let mut out: Vec<Range<usize>> = (0..n).step_by(bs).map(|s| s..(s + bs).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Named parameter aliases installed before any model registers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharingPlan {
    pub name: String,
    /// `(alias prefix, canonical prefix)` pairs.
    pub aliases: Vec<(String, String)>,
    /// Replace the KGE bi-LSTM by a forward-only LSTM.
    pub kge_forward_only: bool,
}

pub const PLAN_NAMES: [&str; 5] = [
    "none",
    "kge_et_shared_embeddings",
    "kge_et_shared_encoders",
    "kge_lm_shared_forward_cell",
    "kge_lm_fully_shared_lstm",
];

impl SharingPlan {
    fn with(name: &str, aliases: &[(&str, &str)], kge_forward_only: bool) -> Self {
        SharingPlan {
            name: name.into(),
            aliases: aliases.iter().map(|&(a, b)| (a.into(), b.into())).collect(),
            kge_forward_only,
        }
    }

    /// No sharing: every task keeps private parameters.
    pub fn none() -> Self {
        Self::with("none", &[], false)
    }

    /// One word-embedding table for KGE and typing; encoders private.
    pub fn kge_et_shared_embeddings() -> Self {
        Self::with("kge_et_shared_embeddings", &[("et.embed", "kge.embed")], false)
    }

    /// Embeddings plus both typing context encoders tied to the KGE bi-LSTM.
    pub fn kge_et_shared_encoders() -> Self {
        Self::with(
            "kge_et_shared_encoders",
            &[
                ("et.embed", "kge.embed"),
                ("et.left", "kge.encoder"),
                ("et.right", "kge.encoder"),
            ],
            false,
        )
    }

    /// The LM cell is the forward half of the KGE bi-LSTM; embeddings shared.
    pub fn kge_lm_shared_forward_cell() -> Self {
        Self::with(
            "kge_lm_shared_forward_cell",
            &[("kge.embed", "lm.embed"), ("kge.encoder.fwd", "lm.cell")],
            false,
        )
    }

    /// As above, with the KGE encoder reduced to that same forward LSTM.
    pub fn kge_lm_fully_shared_lstm() -> Self {
        Self::with(
            "kge_lm_fully_shared_lstm",
            &[("kge.embed", "lm.embed"), ("kge.encoder.fwd", "lm.cell")],
            true,
        )
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "none" => Self::none(),
            "kge_et_shared_embeddings" => Self::kge_et_shared_embeddings(),
            "kge_et_shared_encoders" => Self::kge_et_shared_encoders(),
            "kge_lm_shared_forward_cell" => Self::kge_lm_shared_forward_cell(),
            "kge_lm_fully_shared_lstm" => Self::kge_lm_fully_shared_lstm(),
            other => {
                return Err(Error::Config(format!(
                    "unknown sharing plan {other}; expected one of {PLAN_NAMES:?}"
                )))
            }
        })
    }

    pub fn install<R: Real>(&self, store: &mut ParamStore<R>) -> Result<()> {
        for (from, to) in &self.aliases {
            store.alias_prefix(from, to)?;
        }
        Ok(())
    }

    /// Whether the plan touches the named task prefix.
    pub fn mentions(&self, prefix: &str) -> bool {
        self.aliases
            .iter()
            .any(|(a, b)| a.split('.').next() == Some(prefix) || b.split('.').next() == Some(prefix))
    }

    /// `(alias id, canonical id)` for every registered alias name, for
    /// bit-identity checks.
    pub fn aliased_pairs<R: Real>(&self, store: &ParamStore<R>) -> Vec<(String, String, ParamId)> {
        let mut out = Vec::new();
        for (name, id) in store.all_names() {
            if self.aliases.iter().any(|(from, _)| name == from || name.starts_with(&format!("{from}."))) {
                out.push((String::from(name), String::from(store.name(id)), id));
            }
        }
        out
    }
}

/// Length of one alternation interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interval {
    /// One pass over the active task's data.
    Epoch,
    Steps(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlternationSchedule {
    pub unit: Interval,
    /// Indices into the task list, visited in this order each round.
    pub order: Vec<usize>,
    pub rounds: usize,
}

impl AlternationSchedule {
    /// Tasks `0..n` in turn, one epoch each, for `rounds` rounds.
    pub fn epochs(n_tasks: usize, rounds: usize) -> Self {
        AlternationSchedule {
            unit: Interval::Epoch,
            order: (0..n_tasks).collect(),
            rounds,
        }
    }
}

/// One interval of alternating training.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub round: usize,
    pub task: TaskKind,
    pub steps: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub intervals: Vec<IntervalRecord>,
}

impl TrainingLog {
    pub fn losses(&self, task: TaskKind) -> Vec<f64> {
        self.intervals.iter().filter(|r| r.task == task).map(|r| r.mean_loss).collect()
    }
}

/// Optimise one task's loss per interval, cycling through `schedule.order`.
/// `observer` sees the store after every interval and may stop training by
/// returning an error.
pub fn train_alternating<R: Real>(
    store: &mut ParamStore<R>,
    tasks: &mut [&mut dyn Task<R>],
    schedule: &AlternationSchedule,
    mut observer: impl FnMut(&IntervalRecord, &ParamStore<R>) -> Result<()>,
) -> Result<TrainingLog> {
    if schedule.order.is_empty() {
        return Err(Error::Config("alternation order is empty".into()));
    }
    for &i in &schedule.order {
        let task = tasks
            .get(i)
            .ok_or_else(|| Error::Config(format!("schedule names task {i} of {}", tasks.len())))?;
        if task.batches_per_epoch() == 0 {
            return Err(Error::Config(format!("task {} is scheduled but has no data", task.kind().name())));
        }
    }
    if schedule.unit == Interval::Steps(0) {
        return Err(Error::Config("interval of zero steps".into()));
    }
    let mut log = TrainingLog::default();
    for round in 0..schedule.rounds {
        for &i in &schedule.order {
            let task = &mut tasks[i];
            let steps = match schedule.unit {
                Interval::Epoch => task.batches_per_epoch(),
                Interval::Steps(n) => n,
            };
            let mut total = 0.0;
            for _ in 0..steps {
                total += task.train_step(store)?;
            }
            let rec = IntervalRecord {
                round,
                task: task.kind(),
                steps,
                mean_loss: total / steps as f64,
            };
            observer(&rec, store)?;
            log.intervals.push(rec);
        }
    }
    Ok(log)
}

/// Standalone training: `epochs` passes over one task's data.
pub fn train_epochs<R: Real>(store: &mut ParamStore<R>, task: &mut dyn Task<R>, epochs: usize) -> Result<TrainingLog> {
    train_alternating(store, &mut [task], &AlternationSchedule::epochs(1, epochs), |_, _| Ok(()))
}

/// Initialisation stream for a task's model, shared by standalone and joint
/// builders so an empty plan reproduces independent models exactly.
pub fn init_rng(seed: u64, task: TaskKind) -> Rng {
    rng::stream(seed, &format!("{}-init", task.name()))
}

#[derive(Debug, Clone)]
pub struct KgeEtModels {
    pub kge: KgeModel,
    pub et: TyperModel,
}

#[derive(Debug, Clone)]
pub struct KgeLmModels {
    pub kge: KgeModel,
    pub lm: LmModel,
}

/// KGE and typer over one store. KGE registers first, so shared tensors
/// start from the KGE initialisation.
#[allow(clippy::too_many_arguments)]
pub fn build_kge_et<R: Real>(
    store: &mut ParamStore<R>,
    plan: &SharingPlan,
    vocab_size: usize,
    num_types: usize,
    kge_cfg: &KgeConfig,
    et_cfg: &TyperConfig,
    embeddings: Option<Tensor<R>>,
    seed: u64,
) -> Result<KgeEtModels> {
    plan.install(store)?;
    let mut kge_cfg = kge_cfg.clone();
    if plan.kge_forward_only {
        kge_cfg.encoder = EncoderKind::ForwardLstm;
    }
    let kge = KgeModel::new(store, "kge", vocab_size, &kge_cfg, embeddings.clone(), &mut init_rng(seed, TaskKind::Kge))?;
    let et = TyperModel::new(store, "et", vocab_size, num_types, et_cfg, embeddings, &mut init_rng(seed, TaskKind::Typing))?;
    Ok(KgeEtModels { kge, et })
}

/// KGE and LM over one store. The LM registers first, so a shared cell and
/// embedding start exactly as the standalone LM's would.
#[allow(clippy::too_many_arguments)]
pub fn build_kge_lm<R: Real>(
    store: &mut ParamStore<R>,
    plan: &SharingPlan,
    vocab_size: usize,
    kge_cfg: &KgeConfig,
    lm_cfg: &LmConfig,
    embeddings: Option<Tensor<R>>,
    seed: u64,
) -> Result<KgeLmModels> {
    plan.install(store)?;
    let mut kge_cfg = kge_cfg.clone();
    if plan.kge_forward_only {
        kge_cfg.encoder = EncoderKind::ForwardLstm;
    }
    let lm = LmModel::new(store, "lm", vocab_size, lm_cfg, embeddings.clone(), &mut init_rng(seed, TaskKind::Lm))?;
    let kge = KgeModel::new(store, "kge", vocab_size, &kge_cfg, embeddings, &mut init_rng(seed, TaskKind::Kge))?;
    Ok(KgeLmModels { kge, lm })
}

/// Copy of `report` with every metric of `baseline` added as
/// `baseline_{name}`; metrics the baseline lacks are recorded as absent.
pub fn with_baseline(report: &EvalReport, baseline: Option<&EvalReport>) -> EvalReport {
    let mut out = report.clone();
    for k in report.metrics.keys() {
        out.set(&format!("baseline_{k}"), baseline.and_then(|b| b.get(k)));
    }
    out
}

/// A sentence paired with the fact triples it expresses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointRecord {
    pub tokens: Vec<String>,
    pub triples: Vec<Triple>,
}

/// Disjoint, exhaustive 80/10/10 train/dev/test index sets after a seeded
/// shuffle.
pub fn split_80_10_10(n: usize, seed: u64) -> [Vec<usize>; 3] {
    split_80_10_10_on(n, seed, "split")
}

/// [`split_80_10_10`] shuffled with the named stream.
pub fn split_80_10_10_on(n: usize, seed: u64, stream: &str) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, stream));
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let test = idx.split_off(n_train + n_dev);
    let dev = idx.split_off(n_train);
    [idx, dev, test]
}

/// Items at the given indices.
pub fn select<T: Clone>(items: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kge::KgeTrainer;
    use crate::lm::LmTrainer;
    use crate::optim::Optimizer;
    use crate::typer::{TypingInstance, TyperTrainer};
    use crate::vocab::{Vocabulary, SEP};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn kge_cfg() -> KgeConfig {
        KgeConfig {
            embed_dim: 4,
            hidden: 3,
            head_hidden: [5, 5],
            ..KgeConfig::default()
        }
    }

    fn lm_cfg() -> LmConfig {
        LmConfig {
            embed_dim: 4,
            hidden: 3,
            ..LmConfig::default()
        }
    }

    fn et_cfg() -> TyperConfig {
        TyperConfig {
            embed_dim: 4,
            hidden: 3,
            attention_dim: 4,
            head_hidden: [5, 5, 5],
            ..TyperConfig::default()
        }
    }

    fn toy_vocab() -> Vocabulary {
        let words = ["ann", "bob", "paris", "rome", "born", "in", "lives", "was", "and", "."];
        Vocabulary::from_tokens(
            crate::vocab::SPECIAL_TOKENS
                .iter()
                .chain(words.iter())
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    fn toy_triples() -> Vec<Triple> {
        vec![
            Triple::new("ann", "born_in", "paris"),
            Triple::new("bob", "born_in", "rome"),
            Triple::new("ann", "lives_in", "rome"),
            Triple::new("bob", "lives_in", "paris"),
        ]
    }

    fn toy_sentences(v: &Vocabulary) -> Vec<Vec<usize>> {
        ["ann was born in paris .", "bob was born in rome and lives in paris .", "ann lives in rome ."]
            .iter()
            .map(|s| v.encode_sentence(s.split(' ')))
            .collect()
    }

    struct KgeLm {
        store: ParamStore<f32>,
        models: KgeLmModels,
        kge: KgeTrainer<f32>,
        lm: LmTrainer<f32>,
    }

    fn kge_lm(plan: &SharingPlan, seed: u64) -> KgeLm {
        let v = toy_vocab();
        let mut store = ParamStore::new();
        let models = build_kge_lm(&mut store, plan, v.len(), &kge_cfg(), &lm_cfg(), None, seed).unwrap();
        let kge = KgeTrainer::new(
            models.kge.clone(),
            Optimizer::adam(0.05).unwrap(),
            &v,
            &toy_triples(),
            &[],
            1,
            3,
            seed,
        )
        .unwrap();
        let lm = LmTrainer::new(models.lm.clone(), Optimizer::adam(0.05).unwrap(), toy_sentences(&v), 2, seed).unwrap();
        KgeLm { store, models, kge, lm }
    }

    fn bits(store: &ParamStore<f32>, id: ParamId) -> Vec<u32> {
        store.value(id).data().iter().map(|v| v.to_bits()).collect()
    }

    fn snapshot(store: &ParamStore<f32>, ids: &[ParamId]) -> Vec<Vec<u32>> {
        ids.iter().map(|&id| bits(store, id)).collect()
    }

    #[test]
    fn batch_ranges_cover_and_merge_singletons() {
        assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(1, 4), vec![0..1]);
        assert!(batch_ranges(0, 4).is_empty());
    }

    #[test]
    fn plans_by_name() {
        for name in PLAN_NAMES {
            assert_eq!(SharingPlan::by_name(name).unwrap().name, name);
        }
        assert!(matches!(SharingPlan::by_name("everything"), Err(Error::Config(_))));
    }

    #[test]
    fn shared_forward_cell_is_one_storage() {
        let t = kge_lm(&SharingPlan::kge_lm_shared_forward_cell(), 1);
        assert_eq!(t.models.kge.encoder.fwd.params(), t.models.lm.cell.params());
        assert_eq!(t.models.kge.embed, t.models.lm.embed);
        let bwd = t.models.kge.encoder.bwd.as_ref().unwrap();
        assert!(bwd.params().iter().all(|p| !t.models.lm.params().contains(p)));
    }

    #[test]
    fn mutating_lm_cell_is_seen_by_kge() {
        let mut t = kge_lm(&SharingPlan::kge_lm_shared_forward_cell(), 2);
        let id = t.models.lm.cell.w_x;
        t.store.value_mut(id).data_mut()[0] = 0.375;
        assert_eq!(t.store.value(t.models.kge.encoder.fwd.w_x).data()[0], 0.375);
    }

    #[test]
    fn fully_shared_plan_drops_backward_cell() {
        let t = kge_lm(&SharingPlan::kge_lm_fully_shared_lstm(), 3);
        assert!(t.models.kge.encoder.bwd.is_none());
        assert_eq!(t.models.kge.encoder.fwd.params(), t.models.lm.cell.params());
    }

    #[test]
    fn alias_dimension_mismatch_is_config_error() {
        let v = toy_vocab();
        let mut store = ParamStore::<f32>::new();
        let lm = LmConfig { hidden: 4, ..lm_cfg() };
        let err = build_kge_lm(&mut store, &SharingPlan::kge_lm_shared_forward_cell(), v.len(), &kge_cfg(), &lm, None, 0);
        assert!(matches!(err, Err(Error::Config(_))));
        let mut store = ParamStore::<f32>::new();
        let et = TyperConfig { embed_dim: 6, ..et_cfg() };
        let err = build_kge_et(&mut store, &SharingPlan::kge_et_shared_embeddings(), v.len(), 3, &kge_cfg(), &et, None, 0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn empty_plan_reproduces_independent_training() {
        let mut joint = kge_lm(&SharingPlan::none(), 5);
        let mut solo_kge = kge_lm(&SharingPlan::none(), 5);
        let mut solo_lm = kge_lm(&SharingPlan::none(), 5);
        let schedule = AlternationSchedule::epochs(2, 3);
        train_alternating(&mut joint.store, &mut [&mut joint.kge, &mut joint.lm], &schedule, |_, _| Ok(())).unwrap();
        train_epochs(&mut solo_kge.store, &mut solo_kge.kge, 3).unwrap();
        train_epochs(&mut solo_lm.store, &mut solo_lm.lm, 3).unwrap();
        let kp = joint.models.kge.params();
        let lp = joint.models.lm.params();
        assert_eq!(snapshot(&joint.store, &kp), snapshot(&solo_kge.store, &kp));
        assert_eq!(snapshot(&joint.store, &lp), snapshot(&solo_lm.store, &lp));
        // Sanity: training moved something.
        let fresh = kge_lm(&SharingPlan::none(), 5);
        assert_ne!(snapshot(&joint.store, &kp), snapshot(&fresh.store, &kp));
    }

    #[test]
    fn single_task_schedule_equals_standalone() {
        let mut a = kge_lm(&SharingPlan::kge_lm_shared_forward_cell(), 6);
        let mut b = kge_lm(&SharingPlan::kge_lm_shared_forward_cell(), 6);
        let schedule = AlternationSchedule {
            unit: Interval::Epoch,
            order: vec![1],
            rounds: 2,
        };
        train_alternating(&mut a.store, &mut [&mut a.kge, &mut a.lm], &schedule, |_, _| Ok(())).unwrap();
        train_epochs(&mut b.store, &mut b.lm, 2).unwrap();
        let all: Vec<ParamId> = a.store.entries().map(|e| e.0).collect();
        assert_eq!(snapshot(&a.store, &all), snapshot(&b.store, &all));
    }

    #[test]
    fn inactive_task_private_parameters_never_move() {
        let mut t = kge_lm(&SharingPlan::kge_lm_shared_forward_cell(), 7);
        let lm_private: Vec<ParamId> = t.models.lm.params().into_iter().filter(|p| !t.models.kge.params().contains(p)).collect();
        let kge_private: Vec<ParamId> =
            t.models.kge.params().into_iter().filter(|p| !t.models.lm.params().contains(p)).collect();
        assert!(!lm_private.is_empty() && !kge_private.is_empty());
        let schedule = AlternationSchedule {
            unit: Interval::Steps(1),
            order: vec![0, 1],
            rounds: 4,
        };
        let mut before = (snapshot(&t.store, &lm_private), snapshot(&t.store, &kge_private));
        let mut shared_before = snapshot(&t.store, &t.models.lm.cell.params());
        train_alternating(&mut t.store, &mut [&mut t.kge, &mut t.lm], &schedule, |rec, store| {
            let now = (snapshot(store, &lm_private), snapshot(store, &kge_private));
            let shared_now = snapshot(store, &t.models.lm.cell.params());
            match rec.task {
                TaskKind::Kge => assert_eq!(now.0, before.0, "LM-private moved during a KGE interval"),
                TaskKind::Lm => assert_eq!(now.1, before.1, "KGE-private moved during an LM interval"),
                TaskKind::Typing => unreachable!(),
            }
            assert_ne!(shared_now, shared_before, "shared cell did not move");
            before = now;
            shared_before = shared_now;
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn backward_cell_unchanged_by_lm_intervals() {
        let mut t = kge_lm(&SharingPlan::kge_lm_shared_forward_cell(), 8);
        let bwd = t.models.kge.encoder.bwd.as_ref().unwrap().params().to_vec();
        let mut last = snapshot(&t.store, &bwd);
        let schedule = AlternationSchedule::epochs(2, 3);
        let mut kge_moved = false;
        train_alternating(&mut t.store, &mut [&mut t.lm, &mut t.kge], &schedule, |rec, store| {
            let now = snapshot(store, &bwd);
            if rec.task == TaskKind::Lm {
                assert_eq!(now, last);
            } else {
                kge_moved |= now != last;
            }
            last = now;
            Ok(())
        })
        .unwrap();
        assert!(kge_moved);
    }

    #[test]
    fn typing_update_changes_kge_scores_through_shared_embeddings() {
        let v = toy_vocab();
        let triple: Vec<usize> = [v.lookup("ann"), SEP, v.lookup("born"), v.lookup("in"), SEP, v.lookup("paris")].to_vec();
        // Two distinct mentions, so batch normalisation sees nonzero variance.
        let instances = vec![
            TypingInstance::new(["ann", "was", "born", "in", "paris"].iter().map(|w| v.lookup(w)).collect(), 4, 5, vec![0])
                .unwrap(),
            TypingInstance::new(["bob", "lives", "in", "rome", "."].iter().map(|w| v.lookup(w)).collect(), 0, 1, vec![1])
                .unwrap(),
        ];
        for (plan, should_change) in [(SharingPlan::kge_et_shared_embeddings(), true), (SharingPlan::none(), false)] {
            let mut store = ParamStore::<f32>::new();
            let m = build_kge_et(&mut store, &plan, v.len(), 2, &kge_cfg(), &et_cfg(), None, 9).unwrap();
            assert_eq!(m.kge.embed == m.et.embed, should_change);
            let before = m.kge.score(&store, &triple).unwrap();
            let mut et = TyperTrainer::new(m.et.clone(), Optimizer::sgd(0.5).unwrap(), instances.clone(), 2, 9).unwrap();
            et.train_step(&mut store).unwrap();
            let after = m.kge.score(&store, &triple).unwrap();
            assert_eq!(before != after, should_change, "plan {}", plan.name);
        }
    }

    #[test]
    fn schedule_errors() {
        let mut t = kge_lm(&SharingPlan::none(), 10);
        let empty = AlternationSchedule {
            unit: Interval::Epoch,
            order: vec![],
            rounds: 1,
        };
        assert!(matches!(
            train_alternating(&mut t.store, &mut [&mut t.kge, &mut t.lm], &empty, |_, _| Ok(())),
            Err(Error::Config(_))
        ));
        let zero = AlternationSchedule {
            unit: Interval::Steps(0),
            order: vec![0],
            rounds: 1,
        };
        assert!(matches!(
            train_alternating(&mut t.store, &mut [&mut t.kge, &mut t.lm], &zero, |_, _| Ok(())),
            Err(Error::Config(_))
        ));
        let mut no_data = LmTrainer::new(t.models.lm.clone(), Optimizer::adam(0.1).unwrap(), vec![], 2, 0).unwrap();
        let err = train_alternating(&mut t.store, &mut [&mut t.kge, &mut no_data], &AlternationSchedule::epochs(2, 1), |_, _| Ok(()));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn aliases_stay_bit_identical_under_random_schedules(
            order in proptest::collection::vec(0usize..2, 1..6),
            steps in 1usize..4,
            fully in any::<bool>(),
            seed in 0u64..1000,
        ) {
            let plan = if fully { SharingPlan::kge_lm_fully_shared_lstm() } else { SharingPlan::kge_lm_shared_forward_cell() };
            let mut t = kge_lm(&plan, seed);
            let pairs: Vec<(ParamId, ParamId)> = t
                .models
                .lm
                .cell
                .params()
                .into_iter()
                .zip(t.models.kge.encoder.fwd.params())
                .chain([(t.models.lm.embed, t.models.kge.embed)])
                .collect();
            let schedule = AlternationSchedule { unit: Interval::Steps(steps), order, rounds: 2 };
            let names = plan.aliased_pairs(&t.store);
            prop_assert!(!names.is_empty());
            train_alternating(&mut t.store, &mut [&mut t.kge, &mut t.lm], &schedule, |_, store| {
                for &(a, b) in &pairs {
                    assert_eq!(bits(store, a), bits(store, b));
                }
                for (alias, canonical, id) in &names {
                    assert_eq!(store.id(alias), Some(*id));
                    assert_eq!(store.id(canonical), Some(*id));
                }
                Ok(())
            })
            .unwrap();
        }

        #[test]
        fn split_is_disjoint_and_exhaustive(n in 0usize..300, seed in any::<u64>()) {
            let [a, b, c] = split_80_10_10(n, seed);
            prop_assert_eq!(a.len(), n * 8 / 10);
            prop_assert_eq!(b.len(), n / 10);
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
