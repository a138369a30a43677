//! End-to-end KGE+LM runs over a sentence/fact corpus: split, vocabulary,
//! evaluation negatives, standalone baselines and joint training. Shared by
//! the command line and the joint-learning checks.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::joint::{
    build_kge_lm, init_rng, select, split_80_10_10, split_80_10_10_on, train_alternating, AlternationSchedule, Interval, IntervalRecord,
    JointRecord, KgeLmModels, SharingPlan, Task, TaskKind, TrainingLog,
};
use crate::kge::{
    corrupt_negatives, entity_pool, evaluate_scored, fit_thresholds, score_triples, KgeConfig, KgeModel,
    KgeTrainer, ThresholdTable, Triple, TripleKey,
};
use crate::lm::{LmConfig, LmModel, LmTrainer};
use crate::metrics::EvalReport;
use crate::optim::{Optimizer, OptimizerKind};
use crate::params::ParamStore;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;
use crate::vocab::{tokenize_triple, Vocabulary};

/// A split, encoded joint corpus.
#[derive(Debug, Clone)]
pub struct JointData {
    pub vocab: Vocabulary,
    /// BOS/EOS-wrapped training sentences.
    pub train_sentences: Vec<Vec<usize>>,
    pub dev_sentences: Vec<Vec<usize>>,
    pub test_sentences: Vec<Vec<usize>>,
    /// Training facts of the knowledge graph (positives).
    pub train_triples: Vec<Triple>,
    /// Held-out facts plus one corruption each.
    pub dev_triples: Vec<Triple>,
    pub test_triples: Vec<Triple>,
}

fn with_negatives(
    positives: &[Triple],
    pool: &[String],
    known: &BTreeSet<TripleKey>,
    rng: &mut rng::Rng,
) -> Result<Vec<Triple>> {
    let neg = corrupt_negatives(positives, pool, 1, known, rng)?;
    Ok(positives.iter().cloned().chain(neg).collect())
}

impl JointData {
    /// Sentences and knowledge-graph facts are split 80/10/10 separately.
    /// The graph is every distinct triple in the corpus, whether attached
    /// to a sentence or standing alone, so it may hold facts that no
    /// training sentence states. The vocabulary covers training sentences
    /// and the tokens of every triple.
    pub fn prepare(records: &[JointRecord], max_vocab: usize, seed: u64) -> Result<Self> {
        let sentences: Vec<&JointRecord> = records.iter().filter(|r| !r.tokens.is_empty()).collect();
        if sentences.is_empty() {
            return Err(Error::Data("joint corpus has no sentences".into()));
        }
        let mut seen = BTreeSet::new();
        let facts: Vec<Triple> = records
            .iter()
            .flat_map(|r| &r.triples)
            .filter(|t| t.is_positive() && seen.insert(t.key()))
            .map(|t| Triple::labeled(&t.head, &t.relation, &t.tail, true))
            .collect();
        if facts.is_empty() {
            return Err(Error::Data("joint corpus has no facts".into()));
        }
        let [train, dev, test] = split_80_10_10(sentences.len(), seed);
        let pick = |idx: &[usize]| -> Vec<&JointRecord> { idx.iter().map(|&i| sentences[i]).collect() };
        let (train, dev, test) = (pick(&train), pick(&dev), pick(&test));
        let [kg_train, kg_dev, kg_test] = split_80_10_10_on(facts.len(), seed, "kg-split");
        let triple_tokens = facts
            .iter()
            .map(|t| {
                tokenize_triple(&t.head, &t.relation, &t.tail)
                    .map(|tt| tt.sequence().into_iter().map(String::from).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::build(train.iter().map(|r| r.tokens.clone()).chain(triple_tokens), max_vocab)?;
        let encode = |rs: &[&JointRecord]| -> Vec<Vec<usize>> { rs.iter().map(|r| vocab.encode_sentence(&r.tokens)).collect() };
        let known: BTreeSet<TripleKey> = facts.iter().map(Triple::key).collect();
        let pool = entity_pool(&facts);
        let mut neg_rng = rng::stream(seed, "eval-negatives");
        let dev_triples = with_negatives(&select(&facts, &kg_dev), &pool, &known, &mut neg_rng)?;
        let test_triples = with_negatives(&select(&facts, &kg_test), &pool, &known, &mut neg_rng)?;
        Ok(JointData {
            train_sentences: encode(&train),
            dev_sentences: encode(&dev),
            test_sentences: encode(&test),
            train_triples: select(&facts, &kg_train),
            dev_triples,
            test_triples,
            vocab,
        })
    }
}

/// Hyperparameters of a KGE+LM run.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeLmSettings {
    pub kge: KgeConfig,
    pub lm: LmConfig,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Alternation rounds; each round gives every task one interval.
    pub epochs: usize,
    pub interval: Interval,
    pub negative_ratio: usize,
}

/// Which tasks a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    KgeOnly,
    LmOnly,
    Joint,
}

/// Trained models with their test reports.
#[derive(Debug)]
pub struct KgeLmOutcome<R> {
    pub store: ParamStore<R>,
    pub kge: Option<KgeModel>,
    pub lm: Option<LmModel>,
    pub kge_report: Option<EvalReport>,
    pub thresholds: Option<ThresholdTable>,
    pub lm_report: Option<EvalReport>,
    pub log: TrainingLog,
}

/// Thresholds fitted on dev, metrics on test.
pub fn evaluate_kge_split<R: Real>(
    model: &KgeModel,
    store: &ParamStore<R>,
    data: &JointData,
) -> Result<(EvalReport, ThresholdTable)> {
    let dev = score_triples(model, store, &data.vocab, &data.dev_triples)?;
    let thresholds = fit_thresholds(&dev)?;
    let test = score_triples(model, store, &data.vocab, &data.test_triples)?;
    Ok((evaluate_scored(&test, &thresholds)?, thresholds))
}

pub fn evaluate_lm_split<R: Real>(model: &LmModel, store: &ParamStore<R>, data: &JointData) -> Result<EvalReport> {
    let mut r = EvalReport::new("lm");
    r.set("perplexity", Some(model.perplexity(store, &data.test_sentences)?));
    r.set("dev_perplexity", Some(model.perplexity(store, &data.dev_sentences)?));
    Ok(r)
}

/// Train and evaluate. Standalone runs build their single model exactly as
/// the joint builder would under an empty plan, so a standalone run and a
/// joint run with the same seed start from the same weights.
pub fn run_kge_lm<R: Real>(
    data: &JointData,
    plan: &SharingPlan,
    settings: &KgeLmSettings,
    kind: RunKind,
    embeddings: Option<Tensor<R>>,
    seed: u64,
    observer: impl FnMut(&IntervalRecord, &ParamStore<R>) -> Result<()>,
) -> Result<KgeLmOutcome<R>> {
    let mut store = ParamStore::new();
    let optimizer = || Optimizer::<R>::new(settings.optimizer, settings.learning_rate, settings.weight_decay);
    let mut kge_cfg = settings.kge.clone();
    let (kge, lm) = match kind {
        RunKind::Joint => {
            let KgeLmModels { kge, lm } =
                build_kge_lm(&mut store, plan, data.vocab.len(), &settings.kge, &settings.lm, embeddings, seed)?;
            (Some(kge), Some(lm))
        }
        RunKind::KgeOnly => {
            if plan.kge_forward_only {
                kge_cfg.encoder = crate::blocks::EncoderKind::ForwardLstm;
            }
            let m = KgeModel::new(&mut store, "kge", data.vocab.len(), &kge_cfg, embeddings, &mut init_rng(seed, TaskKind::Kge))?;
            (Some(m), None)
        }
        RunKind::LmOnly => {
            let m = LmModel::new(&mut store, "lm", data.vocab.len(), &settings.lm, embeddings, &mut init_rng(seed, TaskKind::Lm))?;
            (None, Some(m))
        }
    };
    let mut kge_task = match &kge {
        Some(m) => Some(KgeTrainer::new(
            m.clone(),
            optimizer()?,
            &data.vocab,
            &data.train_triples,
            &[],
            settings.negative_ratio,
            settings.batch_size,
            seed,
        )?),
        None => None,
    };
    let mut lm_task = match &lm {
        Some(m) => Some(LmTrainer::new(m.clone(), optimizer()?, data.train_sentences.clone(), settings.batch_size, seed)?),
        None => None,
    };
    let mut tasks: Vec<&mut dyn Task<R>> = Vec::new();
    if let Some(t) = lm_task.as_mut() {
        tasks.push(t);
    }
    if let Some(t) = kge_task.as_mut() {
        tasks.push(t);
    }
    let schedule = AlternationSchedule {
        unit: settings.interval,
        order: (0..tasks.len()).collect(),
        rounds: settings.epochs,
    };
    let log = train_alternating(&mut store, &mut tasks, &schedule, observer)?;
    let (kge_report, thresholds) = match kge.as_ref().map(|m| evaluate_kge_split(m, &store, data)).transpose()? {
        Some((r, t)) => (Some(r), Some(t)),
        None => (None, None),
    };
    let lm_report = lm.as_ref().map(|m| evaluate_lm_split(m, &store, data)).transpose()?;
    Ok(KgeLmOutcome {
        store,
        kge,
        lm,
        kge_report,
        thresholds,
        lm_report,
        log,
    })
}
