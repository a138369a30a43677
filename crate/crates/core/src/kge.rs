//! LM-style knowledge graph embedding: a triple is read as a word sequence
//! by a bi-LSTM, its final state is transformed by a ReLU MLP, and the
//! sigmoid of `z_L . C_final` is the probability that the fact holds.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::blocks::{CellKind, EncoderKind, FeedForwardHead, FinalState, Mode, SequenceEncoder};
use crate::error::{Error, Result};
use crate::joint::{batch_ranges, Task, TaskKind};
use crate::metrics::{accuracy, aucpr, auroc, precision_recall_f1, EvalReport};
use crate::optim::Optimizer;
use crate::params::{uniform, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{tokenize_triple, Vocabulary, OOV_INIT_RANGE, SEP};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-7;

/// Maximum redraws per negative before giving up.
pub const CORRUPTION_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub label: Option<bool>,
}

pub type TripleKey = (String, String, String);

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Triple {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            label: None,
        }
    }

    pub fn labeled(head: &str, relation: &str, tail: &str, label: bool) -> Self {
        Triple {
            label: Some(label),
            ..Self::new(head, relation, tail)
        }
    }

    pub fn key(&self) -> TripleKey {
        (self.head.clone(), self.relation.clone(), self.tail.clone())
    }

    /// Token ids of `head [SEP] relation [SEP] tail`.
    pub fn ids(&self, vocab: &Vocabulary) -> Result<Vec<usize>> {
        Ok(tokenize_triple(&self.head, &self.relation, &self.tail)?.ids(vocab))
    }

    /// Missing labels count as positive (training files list facts only).
    pub fn is_positive(&self) -> bool {
        self.label.unwrap_or(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Widths of the two hidden layers; the third layer maps back to the
    /// encoder state width so it can be dotted with `C_final`.
    pub head_hidden: [usize; 2],
    pub encoder: EncoderKind,
    pub cell: CellKind,
    pub final_state: FinalState,
    /// Weight `k` on the positive log-likelihood term.
    pub pos_weight: f64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            embed_dim: 50,
            hidden: 50,
            head_hidden: [100, 100],
            encoder: EncoderKind::BiLstm,
            cell: CellKind::Lstm,
            final_state: FinalState::Rightmost,
            pos_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KgeModel {
    pub embed: ParamId,
    pub encoder: SequenceEncoder,
    pub head: FeedForwardHead,
    pub pos_weight: f64,
}

impl KgeModel {
    /// Registers `{prefix}.embed`, `{prefix}.encoder.*` and `{prefix}.head.*`.
    /// Without `embeddings` the table is drawn from U(-0.05, 0.05).
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        vocab_size: usize,
        cfg: &KgeConfig,
        embeddings: Option<Tensor<R>>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(cfg.pos_weight > 0.0) {
            return Err(Error::Config(format!("positive weight must be > 0, got {}", cfg.pos_weight)));
        }
        let table = uniform(rng, &[vocab_size, cfg.embed_dim], OOV_INIT_RANGE);
        let table = match embeddings {
            Some(t) if t.shape() == [vocab_size, cfg.embed_dim] => t,
            Some(t) => {
                return Err(Error::Config(format!(
                    "embedding table {:?} does not match [{vocab_size}, {}]",
                    t.shape(),
                    cfg.embed_dim
                )))
            }
            None => table,
        };
        let embed = store.register(&format!("{prefix}.embed"), table, true)?;
        let encoder = SequenceEncoder::new(
            store,
            &format!("{prefix}.encoder"),
            cfg.embed_dim,
            cfg.hidden,
            cfg.encoder,
            cfg.cell,
            cfg.final_state,
            rng,
        )?;
        let w = encoder.width();
        let head = FeedForwardHead::new(
            store,
            &format!("{prefix}.head"),
            &[w, cfg.head_hidden[0], cfg.head_hidden[1], w],
            None,
            rng,
        )?;
        Ok(KgeModel {
            embed,
            encoder,
            head,
            pos_weight: cfg.pos_weight,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embed];
        p.extend(self.encoder.params());
        p.extend(self.head.params());
        p
    }

    /// Match probabilities `[B]` for a batch of token-id sequences.
    pub fn forward<R: Real>(&self, tape: &mut Tape<'_, R>, batch: &[&[usize]]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data("empty triple batch".into()));
        }
        let table = tape.param(self.embed);
        let finals = batch
            .iter()
            .map(|ids| Ok(self.encoder.encode_ids(tape, table, ids)?.c_final))
            .collect::<Result<Vec<Var>>>()?;
        let c = tape.stack(&finals)?;
        let (z, _) = self.head.forward(tape, c, Mode::Eval)?;
        let prod = tape.mul(z, c)?;
        let logits = tape.row_sum(prod)?;
        tape.sigmoid(logits)
    }

    /// Weighted cross-entropy
    /// `-(1/N) sum [k y log f + (1 - y) log(1 - f)]` with `f` clamped to
    /// `[1e-7, 1 - 1e-7]`. The L2 term lives in the optimizer.
    pub fn loss<R: Real>(&self, tape: &mut Tape<'_, R>, batch: &[&[usize]], labels: &[bool]) -> Result<Var> {
        if labels.len() != batch.len() {
            return Err(Error::Data("label count differs from batch size".into()));
        }
        let f = self.forward(tape, batch)?;
        bce_loss(tape, f, labels, self.pos_weight)
    }

    /// Probability for one tokenized triple.
    pub fn score<R: Real>(&self, store: &ParamStore<R>, ids: &[usize]) -> Result<R> {
        let mut tape = Tape::new(store);
        let f = self.forward(&mut tape, &[ids])?;
        Ok(tape.value(f).item())
    }

    pub fn score_many<R: Real>(&self, store: &ParamStore<R>, seqs: &[Vec<usize>], chunk: usize) -> Result<Vec<R>> {
        let mut out = Vec::with_capacity(seqs.len());
        for part in seqs.chunks(chunk.max(1)) {
            let mut tape = Tape::new(store);
            let refs: Vec<&[usize]> = part.iter().map(Vec::as_slice).collect();
            let f = self.forward(&mut tape, &refs)?;
            out.extend_from_slice(tape.value(f).data());
        }
        Ok(out)
    }
}

/// Weighted binary cross-entropy over probabilities `f` `[B]`.
pub fn bce_loss<R: Real>(tape: &mut Tape<'_, R>, f: Var, labels: &[bool], pos_weight: f64) -> Result<Var> {
    let n = labels.len();
    let f = tape.clamp(f, R::of(LOG_CLAMP), R::of(1.0 - LOG_CLAMP))?;
    let log_f = tape.ln(f)?;
    let one_minus = tape.scale(f, -R::one())?;
    let one_minus = tape.offset(one_minus, R::one())?;
    let log_1mf = tape.ln(one_minus)?;
    let wpos = tape.constant(Tensor::vector(
        labels.iter().map(|&y| if y { R::of(pos_weight) } else { R::zero() }).collect(),
    ));
    let wneg = tape.constant(Tensor::vector(
        labels.iter().map(|&y| if y { R::zero() } else { R::one() }).collect(),
    ));
    let a = tape.dot(wpos, log_f)?;
    let b = tape.dot(wneg, log_1mf)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -R::one() / R::of(n as f64))
}

/// Replace head or tail (fair coin) with a random pool entity, `ratio` times
/// per positive, never producing a triple from `known`.
pub fn corrupt_negatives(
    positives: &[Triple],
    pool: &[String],
    ratio: usize,
    known: &BTreeSet<TripleKey>,
    rng: &mut Rng,
) -> Result<Vec<Triple>> {
    if pool.is_empty() {
        return Err(Error::Sampling("empty entity pool".into()));
    }
    let mut out = Vec::with_capacity(positives.len() * ratio);
    for p in positives {
        for _ in 0..ratio {
            let mut found = None;
            for _ in 0..CORRUPTION_RETRIES {
                let e = &pool[rng.gen_range(0..pool.len())];
                let cand = if rng.gen_bool(0.5) {
                    Triple::labeled(e, &p.relation, &p.tail, false)
                } else {
                    Triple::labeled(&p.head, &p.relation, e, false)
                };
                if !known.contains(&cand.key()) {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(t) => out.push(t),
                None => {
                    return Err(Error::Sampling(format!(
                        "no valid corruption of ({}, {}, {}) after {CORRUPTION_RETRIES} draws",
                        p.head, p.relation, p.tail
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// Sorted distinct heads and tails.
pub fn entity_pool(triples: &[Triple]) -> Vec<String> {
    let set: BTreeSet<&String> = triples.iter().flat_map(|t| [&t.head, &t.tail]).collect();
    set.into_iter().cloned().collect()
}

/// Model score with the triple's relation and gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTriple {
    pub relation: String,
    pub score: f64,
    pub label: bool,
}

/// Per-relation decision thresholds with a global fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub per_relation: BTreeMap<String, f64>,
    pub fallback: f64,
}

impl ThresholdTable {
    pub fn threshold(&self, relation: &str) -> f64 {
        self.per_relation.get(relation).copied().unwrap_or(self.fallback)
    }

    pub fn predict(&self, relation: &str, score: f64) -> bool {
        score > self.threshold(relation)
    }
}

/// Threshold maximising accuracy of `score > t` over midpoints between
/// adjacent distinct scores, with 0 and 1 as outer sentinels. Ties go to the
/// smallest threshold.
pub fn best_threshold(items: &[(f64, bool)]) -> f64 {
    let mut sorted: Vec<(f64, bool)> = items.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bounds: Vec<f64> = vec![0.0];
    for &(v, _) in &sorted {
        if *bounds.last().unwrap() != v {
            bounds.push(v);
        }
    }
    if *bounds.last().unwrap() != 1.0 {
        bounds.push(1.0);
    }
    let total_pos = sorted.iter().filter(|x| x.1).count();
    let (mut best, mut best_correct) = (f64::NAN, 0usize);
    // Running counts of items at or below the current cut.
    let (mut i, mut neg_below, mut pos_below) = (0usize, 0usize, 0usize);
    for w in bounds.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        while i < sorted.len() && sorted[i].0 <= t {
            if sorted[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let correct = neg_below + total_pos - pos_below;
        if best.is_nan() || correct > best_correct {
            best = t;
            best_correct = correct;
        }
    }
    best
}

/// Fit per-relation thresholds and the global fallback on scored dev data.
pub fn fit_thresholds(dev: &[ScoredTriple]) -> Result<ThresholdTable> {
    if dev.is_empty() {
        return Err(Error::Data("cannot fit thresholds on an empty dev set".into()));
    }
    let mut by_rel: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for s in dev {
        by_rel.entry(s.relation.as_str()).or_default().push((s.score, s.label));
    }
    let all: Vec<(f64, bool)> = dev.iter().map(|s| (s.score, s.label)).collect();
    Ok(ThresholdTable {
        per_relation: by_rel
            .into_iter()
            .map(|(r, items)| (String::from(r), best_threshold(&items)))
            .collect(),
        fallback: best_threshold(&all),
    })
}

/// Accuracy, precision, recall and F1 at the thresholds; AUROC and AUCPR
/// over raw scores.
pub fn evaluate_scored(test: &[ScoredTriple], thresholds: &ThresholdTable) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let scores: Vec<f64> = test.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = test.iter().map(|s| s.label).collect();
    let pred: Vec<bool> = test.iter().map(|s| thresholds.predict(&s.relation, s.score)).collect();
    let prf = precision_recall_f1(&pred, &labels);
    let mut r = EvalReport::new("kge");
    r.set("accuracy", Some(accuracy(&pred, &labels)))
        .set("auroc", auroc(&scores, &labels))
        .set("aucpr", aucpr(&scores, &labels))
        .set("precision", Some(prf.precision))
        .set("recall", Some(prf.recall))
        .set("f1", Some(prf.f1));
    Ok(r)
}

/// Score labelled triples with the model.
pub fn score_triples<R: Real>(
    model: &KgeModel,
    store: &ParamStore<R>,
    vocab: &Vocabulary,
    triples: &[Triple],
) -> Result<Vec<ScoredTriple>> {
    let seqs = triples.iter().map(|t| t.ids(vocab)).collect::<Result<Vec<_>>>()?;
    let scores = model.score_many(store, &seqs, 64)?;
    triples
        .iter()
        .zip(scores)
        .map(|(t, s)| {
            let label = t
                .label
                .ok_or_else(|| Error::Data(format!("unlabelled triple ({}, {}, {})", t.head, t.relation, t.tail)))?;
            Ok(ScoredTriple {
                relation: t.relation.clone(),
                score: s.to_f64_lossy(),
                label,
            })
        })
        .collect()
}

/// Training driver: positives with freshly corrupted negatives each epoch.
#[derive(Debug)]
pub struct KgeTrainer<R> {
    pub model: KgeModel,
    pub optimizer: Optimizer<R>,
    pub batch_size: usize,
    pub negative_ratio: usize,
    positives: Vec<Triple>,
    fixed_negatives: Vec<Triple>,
    pool: Vec<String>,
    known: BTreeSet<TripleKey>,
    entity_ids: BTreeMap<String, Vec<usize>>,
    relation_ids: BTreeMap<String, Vec<usize>>,
    rng: Rng,
    epoch: Vec<(Vec<usize>, bool)>,
    cursor: usize,
}

impl<R: Real> KgeTrainer<R> {
    /// Labelled negatives in `train` are used as given; otherwise
    /// `negative_ratio` corruptions per positive are drawn every epoch.
    /// `known` extends the set of true facts corruptions must avoid.
    pub fn new(
        model: KgeModel,
        optimizer: Optimizer<R>,
        vocab: &Vocabulary,
        train: &[Triple],
        known: &[Triple],
        negative_ratio: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let positives: Vec<Triple> = train.iter().filter(|t| t.is_positive()).cloned().collect();
        let fixed_negatives: Vec<Triple> = train.iter().filter(|t| !t.is_positive()).cloned().collect();
        let mut known_set: BTreeSet<TripleKey> = positives.iter().map(Triple::key).collect();
        known_set.extend(known.iter().filter(|t| t.is_positive()).map(Triple::key));
        let pool = entity_pool(&positives);
        let mut entity_ids = BTreeMap::new();
        let mut relation_ids = BTreeMap::new();
        for t in train {
            let tok = tokenize_triple(&t.head, &t.relation, &t.tail)?;
            entity_ids.insert(t.head.clone(), vocab.encode(&tok.head));
            entity_ids.insert(t.tail.clone(), vocab.encode(&tok.tail));
            relation_ids.insert(t.relation.clone(), vocab.encode(&tok.relation));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(KgeTrainer {
            model,
            optimizer,
            batch_size,
            negative_ratio,
            positives,
            fixed_negatives,
            pool,
            known: known_set,
            entity_ids,
            relation_ids,
            rng: rng::stream(seed, "kge-train"),
            epoch: Vec::new(),
            cursor: 0,
        })
    }

    fn encode(&self, t: &Triple) -> Vec<usize> {
        let mut ids = self.entity_ids[&t.head].clone();
        ids.push(SEP);
        ids.extend_from_slice(&self.relation_ids[&t.relation]);
        ids.push(SEP);
        ids.extend_from_slice(&self.entity_ids[&t.tail]);
        ids
    }

    fn epoch_len(&self) -> usize {
        if self.fixed_negatives.is_empty() {
            self.positives.len() * (1 + self.negative_ratio)
        } else {
            self.positives.len() + self.fixed_negatives.len()
        }
    }

    fn start_epoch(&mut self) -> Result<()> {
        let negatives = if self.fixed_negatives.is_empty() {
            corrupt_negatives(&self.positives, &self.pool, self.negative_ratio, &self.known, &mut self.rng)?
        } else {
            self.fixed_negatives.clone()
        };
        let mut examples: Vec<(Vec<usize>, bool)> = self
            .positives
            .iter()
            .map(|t| (self.encode(t), true))
            .chain(negatives.iter().map(|t| (self.encode(t), false)))
            .collect();
        examples.shuffle(&mut self.rng);
        self.epoch = examples;
        self.cursor = 0;
        Ok(())
    }
}

impl<R: Real> Task<R> for KgeTrainer<R> {
    fn kind(&self) -> TaskKind {
        TaskKind::Kge
    }

    fn params(&self) -> Vec<ParamId> {
        self.model.params()
    }

    fn batches_per_epoch(&self) -> usize {
        batch_ranges(self.epoch_len(), self.batch_size).len()
    }

    fn train_step(&mut self, store: &mut ParamStore<R>) -> Result<f64> {
        if self.positives.is_empty() {
            return Err(Error::Config("KGE task has no training triples".into()));
        }
        let ranges = batch_ranges(self.epoch_len(), self.batch_size);
        if self.epoch.is_empty() || self.cursor >= ranges.len() {
            self.start_epoch()?;
        }
        let range = ranges[self.cursor].clone();
        self.cursor += 1;
        let batch = &self.epoch[range];
        let seqs: Vec<&[usize]> = batch.iter().map(|(s, _)| s.as_slice()).collect();
        let labels: Vec<bool> = batch.iter().map(|(_, l)| *l).collect();
        let (loss, grads) = {
            let mut tape = Tape::new(store);
            let loss = self.model.loss(&mut tape, &seqs, &labels)?;
            (tape.value(loss).item().to_f64_lossy(), tape.backward(loss)?)
        };
        self.optimizer.step(store, &grads, &self.model.params())?;
        Ok(loss)
    }
}
