//! Fine-grained entity typing: averaged mention embedding plus an attended
//! bi-LSTM encoding of the left and right context, scored per type through a
//! batch-normalised feed-forward head.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::blocks::{AttentionLayer, CellKind, EncoderKind, FeedForwardHead, FinalState, Mode, SequenceEncoder};
use crate::error::{Error, Result};
use crate::joint::{batch_ranges, Task, TaskKind};
use crate::metrics::{typing_scores, EvalReport};
use crate::optim::Optimizer;
use crate::params::{uniform, xavier, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tape::{BatchMoments, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, OOV_INIT_RANGE};

/// Ordered set of type labels such as `/person/politician`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TypeInventory {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TypeInventory {
    /// Sorted, de-duplicated inventory over every label seen.
    pub fn build<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut names: Vec<String> = labels.into_iter().map(String::from).collect();
        names.sort();
        names.dedup();
        Self::from_names(names).expect("deduplicated")
    }

    /// Keeps the given order; duplicates are a data error.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate type label {n}")));
            }
        }
        Ok(TypeInventory { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.get(l.as_ref())
                    .ok_or_else(|| Error::Data(format!("unknown type label {}", l.as_ref())))
            })
            .collect()
    }
}

/// A mention span `[start, end)` inside a tokenized sentence with its gold
/// type indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingInstance {
    pub tokens: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub types: Vec<usize>,
}

impl TypingInstance {
    pub fn new(tokens: Vec<usize>, start: usize, end: usize, mut types: Vec<usize>) -> Result<Self> {
        if start >= end || end > tokens.len() {
            return Err(Error::Data(format!(
                "invalid mention span [{start}, {end}) in a sentence of {} tokens",
                tokens.len()
            )));
        }
        types.sort_unstable();
        types.dedup();
        Ok(TypingInstance { tokens, start, end, types })
    }

    pub fn mention(&self) -> &[usize] {
        &self.tokens[self.start..self.end]
    }

    /// Up to `cap` tokens immediately left of the mention.
    pub fn left(&self, cap: Option<usize>) -> &[usize] {
        let from = cap.map_or(0, |c| self.start.saturating_sub(c));
        &self.tokens[from..self.start]
    }

    /// Up to `cap` tokens immediately right of the mention, in reading order.
    pub fn right(&self, cap: Option<usize>) -> &[usize] {
        let to = cap.map_or(self.tokens.len(), |c| (self.end + c).min(self.tokens.len()));
        &self.tokens[self.end..to]
    }
}

/// A typing example in surface form, as stored in JSON-lines corpora.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingRecord {
    pub tokens: Vec<String>,
    pub start: usize,
    pub end: usize,
    pub types: Vec<String>,
}

impl TypingRecord {
    pub fn to_instance(&self, vocab: &Vocabulary, inventory: &TypeInventory) -> Result<TypingInstance> {
        let tokens = self.tokens.iter().map(|t| vocab.lookup(&t.to_lowercase())).collect();
        TypingInstance::new(tokens, self.start, self.end, inventory.encode(&self.types)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TyperConfig {
    pub embed_dim: usize,
    /// Per-direction hidden size of each context bi-LSTM.
    pub hidden: usize,
    pub attention_dim: usize,
    pub head_hidden: [usize; 3],
    pub tau: f64,
    /// Compare `sigmoid(g)` rather than raw `g` against `tau`.
    pub sigmoid_scores: bool,
    /// Context tokens kept on each side; `None` keeps the whole sentence.
    pub context_window: Option<usize>,
    pub cell: CellKind,
}

impl Default for TyperConfig {
    fn default() -> Self {
        TyperConfig {
            embed_dim: 50,
            hidden: 50,
            attention_dim: 100,
            head_hidden: [100, 100, 100],
            tau: 0.5,
            sigmoid_scores: false,
            context_window: None,
            cell: CellKind::Lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypePrediction {
    pub scores: Vec<f64>,
    pub types: Vec<usize>,
}

/// `{t : s_t > tau}` (after an optional sigmoid), falling back to the single
/// argmax type when that set is empty. Ties go to the lowest index.
pub fn decide_types(scores: &[f64], tau: f64, sigmoid: bool) -> Vec<usize> {
    let squash = |s: f64| if sigmoid { 1.0 / (1.0 + libm::exp(-s)) } else { s };
    let picked: Vec<usize> = (0..scores.len()).filter(|&t| squash(scores[t]) > tau).collect();
    if !picked.is_empty() || scores.is_empty() {
        return picked;
    }
    let mut best = 0;
    for (t, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = t;
        }
    }
    vec![best]
}

/// `sum_t max(0, 1 - y_t g_t)` for one instance.
pub fn hinge_loss(scores: &[f64], signs: &[f64]) -> Result<f64> {
    if scores.len() != signs.len() {
        return Err(Error::shape(
            "typing_hinge_loss",
            format!("{} scores vs {} labels", scores.len(), signs.len()),
        ));
    }
    Ok(scores.iter().zip(signs).map(|(g, y)| (1.0 - y * g).max(0.0)).sum())
}

/// `+1` for gold types and `-1` elsewhere.
pub fn gold_signs<R: Real>(types: &[usize], num_types: usize) -> Vec<R> {
    let mut y = vec![-R::one(); num_types];
    for &t in types {
        y[t] = R::one();
    }
    y
}

/// Batch-averaged hinge loss on the tape for scores `[B, T]` and signs
/// `[B, T]`.
pub fn hinge_loss_tape<R: Real>(tape: &mut Tape<'_, R>, g: Var, signs: Tensor<R>) -> Result<Var> {
    if tape.value(g).shape() != signs.shape() {
        return Err(Error::shape(
            "typing_hinge_loss",
            format!("scores {:?} vs labels {:?}", tape.value(g).shape(), signs.shape()),
        ));
    }
    let batch = if signs.is_matrix() { signs.rows() } else { 1 };
    let y = tape.constant(signs);
    let m = tape.mul(y, g)?;
    let m = tape.scale(m, -R::one())?;
    let m = tape.offset(m, R::one())?;
    let m = tape.relu(m)?;
    let s = tape.sum(m)?;
    tape.scale(s, R::one() / R::of(batch as f64))
}

#[derive(Debug, Clone)]
pub struct TyperModel {
    pub embed: ParamId,
    pub left: SequenceEncoder,
    pub right: SequenceEncoder,
    pub attention: AttentionLayer,
    pub head: FeedForwardHead,
    pub theta: ParamId,
    pub num_types: usize,
    pub tau: f64,
    pub sigmoid_scores: bool,
    pub context_window: Option<usize>,
    embed_dim: usize,
}

impl TyperModel {
    /// Registers `{prefix}.embed`, `{prefix}.left.*`, `{prefix}.right.*`,
    /// `{prefix}.attention.*`, `{prefix}.head.*` and `{prefix}.theta`.
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        vocab_size: usize,
        num_types: usize,
        cfg: &TyperConfig,
        embeddings: Option<Tensor<R>>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_types == 0 {
            return Err(Error::Config("type inventory is empty".into()));
        }
        if !cfg.tau.is_finite() {
            return Err(Error::Config(format!("tau must be finite, got {}", cfg.tau)));
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
        let mk = |store: &mut ParamStore<R>, side: &str, rng: &mut Rng| {
            SequenceEncoder::new(
                store,
                &format!("{prefix}.{side}"),
                cfg.embed_dim,
                cfg.hidden,
                EncoderKind::BiLstm,
                cfg.cell,
                FinalState::Rightmost,
                rng,
            )
        };
        let left = mk(store, "left", rng)?;
        let right = mk(store, "right", rng)?;
        let width = left.width();
        let attention = AttentionLayer::new(store, &format!("{prefix}.attention"), width, cfg.attention_dim, rng)?;
        let [h1, h2, h3] = cfg.head_hidden;
        let head = FeedForwardHead::new(
            store,
            &format!("{prefix}.head"),
            &[cfg.embed_dim + width, h1, h2, h3],
            Some(0),
            rng,
        )?;
        let theta = store.register(&format!("{prefix}.theta"), xavier(rng, h3, num_types), true)?;
        Ok(TyperModel {
            embed,
            left,
            right,
            attention,
            head,
            theta,
            num_types,
            tau: cfg.tau,
            sigmoid_scores: cfg.sigmoid_scores,
            context_window: cfg.context_window,
            embed_dim: cfg.embed_dim,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embed];
        p.extend(self.left.params());
        p.extend(self.right.params());
        p.extend(self.attention.params());
        p.extend(self.head.params());
        p.push(self.theta);
        p
    }

    /// `m = (1/n) sum u_i` over the mention tokens.
    pub fn encode_mention<R: Real>(&self, tape: &mut Tape<'_, R>, inst: &TypingInstance) -> Result<Var> {
        let ids = inst.mention();
        if ids.is_empty() {
            return Err(Error::Data("empty mention span".into()));
        }
        let table = tape.param(self.embed);
        let u = tape.embedding(table, ids)?;
        let w = tape.constant(Tensor::filled(&[ids.len()], R::one() / R::of(ids.len() as f64)));
        tape.matmul(w, u)
    }

    /// Context matrix `[n_left + n_right, 2H]`, left rows first. `None` when
    /// both sides are empty.
    pub fn encode_context<R: Real>(&self, tape: &mut Tape<'_, R>, inst: &TypingInstance) -> Result<Option<Var>> {
        let table = tape.param(self.embed);
        let mut rows = Vec::new();
        for (enc, ids) in [
            (&self.left, inst.left(self.context_window)),
            (&self.right, inst.right(self.context_window)),
        ] {
            if !ids.is_empty() {
                rows.extend(enc.encode_ids(tape, table, ids)?.states);
            }
        }
        if rows.is_empty() {
            return Ok(None);
        }
        Ok(Some(tape.stack(&rows)?))
    }

    /// `V = concat[m, C_rep]`, with `C_rep = 0` when there is no context.
    pub fn features<R: Real>(&self, tape: &mut Tape<'_, R>, inst: &TypingInstance) -> Result<Var> {
        let m = self.encode_mention(tape, inst)?;
        let rep = match self.encode_context(tape, inst)? {
            Some(c) => self.attention.attend(tape, c)?.0,
            None => tape.constant(Tensor::zeros(&[self.left.width()])),
        };
        tape.concat(&[m, rep])
    }

    /// Type scores `g = q_L theta`, `[B, T]`.
    pub fn scores<R: Real>(
        &self,
        tape: &mut Tape<'_, R>,
        batch: &[&TypingInstance],
        mode: Mode,
    ) -> Result<(Var, Option<BatchMoments<R>>)> {
        if batch.is_empty() {
            return Err(Error::Data("empty typing batch".into()));
        }
        let feats = batch
            .iter()
            .map(|inst| self.features(tape, inst))
            .collect::<Result<Vec<_>>>()?;
        let v = tape.stack(&feats)?;
        let (q, moments) = self.head.forward(tape, v, mode)?;
        let theta = tape.param(self.theta);
        Ok((tape.matmul(q, theta)?, moments))
    }

    /// Training-mode hinge loss and the batch-norm moments to fold in after
    /// the step.
    pub fn loss<R: Real>(
        &self,
        tape: &mut Tape<'_, R>,
        batch: &[&TypingInstance],
    ) -> Result<(Var, Option<BatchMoments<R>>)> {
        let (g, moments) = self.scores(tape, batch, Mode::Train)?;
        let mut signs = Vec::with_capacity(batch.len() * self.num_types);
        for inst in batch {
            if let Some(&t) = inst.types.iter().find(|&&t| t >= self.num_types) {
                return Err(Error::Data(format!("type index {t} outside an inventory of {}", self.num_types)));
            }
            signs.extend(gold_signs::<R>(&inst.types, self.num_types));
        }
        let y = Tensor::matrix(batch.len(), self.num_types, signs)?;
        Ok((hinge_loss_tape(tape, g, y)?, moments))
    }

    /// Evaluation-mode scores and thresholded type set.
    pub fn predict<R: Real>(&self, store: &ParamStore<R>, inst: &TypingInstance) -> Result<TypePrediction> {
        let mut tape = Tape::new(store);
        let (g, _) = self.scores(&mut tape, &[inst], Mode::Eval)?;
        let scores: Vec<f64> = tape.value(g).data().iter().map(|v| v.to_f64_lossy()).collect();
        let types = decide_types(&scores, self.tau, self.sigmoid_scores);
        Ok(TypePrediction { scores, types })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }
}

/// Strict and loose typing scores of `predicted` against `gold`.
pub fn evaluate_typing<P: AsRef<[usize]>, G: AsRef<[usize]>>(predicted: &[P], gold: &[G]) -> Result<EvalReport> {
    let s = typing_scores(predicted, gold)?;
    let mut r = EvalReport::new("et");
    r.add_typing(&s)
        .set("strict_precision", Some(s.strict.precision))
        .set("strict_recall", Some(s.strict.recall));
    Ok(r)
}

pub fn evaluate<R: Real>(model: &TyperModel, store: &ParamStore<R>, data: &[TypingInstance]) -> Result<EvalReport> {
    let preds = data
        .iter()
        .map(|inst| Ok(model.predict(store, inst)?.types))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<&[usize]> = data.iter().map(|i| i.types.as_slice()).collect();
    evaluate_typing(&preds, &gold)
}

#[derive(Debug)]
pub struct TyperTrainer<R> {
    pub model: TyperModel,
    pub optimizer: Optimizer<R>,
    pub batch_size: usize,
    data: Vec<TypingInstance>,
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl<R: Real> TyperTrainer<R> {
    pub fn new(
        model: TyperModel,
        optimizer: Optimizer<R>,
        data: Vec<TypingInstance>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Some(i) = data.iter().position(|d| d.types.is_empty()) {
            return Err(Error::Data(format!("training mention {i} has no gold type")));
        }
        Ok(TyperTrainer {
            model,
            optimizer,
            batch_size,
            data,
            order: Vec::new(),
            cursor: 0,
            rng: rng::stream(seed, "et-train"),
        })
    }

    pub fn data(&self) -> &[TypingInstance] {
        &self.data
    }
}

impl<R: Real> Task<R> for TyperTrainer<R> {
    fn kind(&self) -> TaskKind {
        TaskKind::Typing
    }

    fn params(&self) -> Vec<ParamId> {
        self.model.params()
    }

    fn batches_per_epoch(&self) -> usize {
        batch_ranges(self.data.len(), self.batch_size).len()
    }

    fn train_step(&mut self, store: &mut ParamStore<R>) -> Result<f64> {
        if self.data.is_empty() {
            return Err(Error::Config("typing task has no training mentions".into()));
        }
        let ranges = batch_ranges(self.data.len(), self.batch_size);
        if self.order.is_empty() || self.cursor >= ranges.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch: Vec<&TypingInstance> = self.order[ranges[self.cursor].clone()]
            .iter()
            .map(|&i| &self.data[i])
            .collect();
        self.cursor += 1;
        let (loss, grads, moments) = {
            let mut tape = Tape::new(store);
            let (loss, moments) = self.model.loss(&mut tape, &batch)?;
            (tape.value(loss).item().to_f64_lossy(), tape.backward(loss)?, moments)
        };
        self.optimizer.step(store, &grads, &self.model.params())?;
        if let Some(m) = moments {
            self.model.head.update_running_stats(store, &m);
        }
        Ok(loss)
    }
}
