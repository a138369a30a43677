//! Single-layer left-to-right LSTM language model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;

use crate::blocks::{CellKind, CellState, LstmCell};
use crate::error::{Error, Result};
use crate::joint::{batch_ranges, Task, TaskKind};
use crate::metrics::perplexity_from_nll;
use crate::optim::Optimizer;
use crate::params::{uniform, xavier, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::{self, Rng};
use crate::tape::{log_softmax, softmax, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{BOS, EOS, OOV_INIT_RANGE, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    /// Reuse the input embeddings as the output projection (needs
    /// `hidden == embed_dim`).
    pub tie_embeddings: bool,
    pub cell: CellKind,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed_dim: 50,
            hidden: 50,
            tie_embeddings: false,
            cell: CellKind::Lstm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmModel {
    pub embed: ParamId,
    pub cell: LstmCell,
    /// `[H, V]`; `None` when tied to the embedding table.
    pub out_w: Option<ParamId>,
    pub out_b: ParamId,
    pub vocab_size: usize,
}

/// Decoding strategy for [`LmModel::generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Argmax, lowest index on ties.
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

/// Summed next-token NLL and the number of predicted tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NllTotals {
    pub total: f64,
    pub tokens: usize,
}

impl NllTotals {
    pub fn add(&mut self, other: NllTotals) {
        self.total += other.total;
        self.tokens += other.tokens;
    }

    pub fn perplexity(&self) -> Result<f64> {
        perplexity_from_nll(self.total, self.tokens)
    }
}

impl LmModel {
    /// Registers `{prefix}.embed`, `{prefix}.cell.*` and `{prefix}.out.*`.
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        vocab_size: usize,
        cfg: &LmConfig,
        embeddings: Option<Tensor<R>>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if cfg.tie_embeddings && cfg.hidden != cfg.embed_dim {
            return Err(Error::Config(format!(
                "tied output needs hidden ({}) == embedding dim ({})",
                cfg.hidden, cfg.embed_dim
            )));
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
        let cell = LstmCell::new(store, &format!("{prefix}.cell"), cfg.embed_dim, cfg.hidden, cfg.cell, rng)?;
        let out_w = if cfg.tie_embeddings {
            None
        } else {
            Some(store.register(&format!("{prefix}.out.w"), xavier(rng, cfg.hidden, vocab_size), true)?)
        };
        let out_b = store.register(&format!("{prefix}.out.b"), Tensor::zeros(&[vocab_size]), true)?;
        Ok(LmModel {
            embed,
            cell,
            out_w,
            out_b,
            vocab_size,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embed];
        p.extend(self.cell.params());
        p.extend(self.out_w);
        p.push(self.out_b);
        p
    }

    fn logits<R: Real>(&self, tape: &mut Tape<'_, R>, h: Var) -> Result<Var> {
        let w = match self.out_w {
            Some(w) => tape.param(w),
            None => {
                let e = tape.param(self.embed);
                tape.transpose(e)?
            }
        };
        let b = tape.param(self.out_b);
        let z = tape.matmul(h, w)?;
        tape.add_bias(z, b)
    }

    /// Log-probabilities of each next token of a wrapped sentence, `[n - 1]`.
    fn token_log_probs<R: Real>(&self, tape: &mut Tape<'_, R>, sentence: &[usize]) -> Result<Var> {
        if sentence.len() < 2 {
            return Err(Error::Data("a wrapped sentence has at least two tokens".into()));
        }
        if let Some(&t) = sentence.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Data(format!("token id {t} outside a vocabulary of {}", self.vocab_size)));
        }
        let n = sentence.len() - 1;
        let table = tape.param(self.embed);
        let xs = tape.embedding(table, &sentence[..n])?;
        let hs = self.cell.run(tape, xs, false)?;
        let h = tape.stack(&hs)?;
        let z = self.logits(tape, h)?;
        let lp = tape.log_softmax(z)?;
        tape.gather(lp, &sentence[1..])
    }

    /// Mean next-token NLL over every predicted position in the batch. Each
    /// sentence runs at its own length, so no padding enters the mean.
    pub fn nll<R: Real>(&self, tape: &mut Tape<'_, R>, batch: &[&[usize]]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Data("empty sentence batch".into()));
        }
        let parts = batch
            .iter()
            .map(|s| self.token_log_probs(tape, s))
            .collect::<Result<Vec<_>>>()?;
        let tokens: usize = batch.iter().map(|s| s.len() - 1).sum();
        let all = if parts.len() == 1 { parts[0] } else { tape.concat(&parts)? };
        let s = tape.sum(all)?;
        tape.scale(s, -R::one() / R::of(tokens as f64))
    }

    /// Summed NLL of one wrapped sentence, accumulated in `f64`.
    pub fn sentence_nll<R: Real>(&self, store: &ParamStore<R>, sentence: &[usize]) -> Result<NllTotals> {
        let mut tape = Tape::new(store);
        let lp = self.token_log_probs(&mut tape, sentence)?;
        let total = -tape.value(lp).data().iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        Ok(NllTotals {
            total,
            tokens: sentence.len() - 1,
        })
    }

    /// Token-weighted corpus NLL; sentences are consumed one at a time.
    pub fn corpus_nll<R: Real, S: AsRef<[usize]>>(
        &self,
        store: &ParamStore<R>,
        corpus: impl IntoIterator<Item = S>,
    ) -> Result<NllTotals> {
        let mut acc = NllTotals::default();
        for s in corpus {
            acc.add(self.sentence_nll(store, s.as_ref())?);
        }
        Ok(acc)
    }

    /// `exp(mean per-token NLL)`; an empty corpus is a data error.
    pub fn perplexity<R: Real, S: AsRef<[usize]>>(
        &self,
        store: &ParamStore<R>,
        corpus: impl IntoIterator<Item = S>,
    ) -> Result<f64> {
        self.corpus_nll(store, corpus)?.perplexity()
    }

    /// Next-token distribution after reading `context` (BOS is prepended).
    pub fn next_distribution<R: Real>(&self, store: &ParamStore<R>, context: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(store);
        let mut state = self.cell.zero_state(&mut tape);
        let mut h = state.h;
        for &t in core::iter::once(&BOS).chain(context) {
            state = self.feed(&mut tape, t, state)?;
            h = state.h;
        }
        let z = self.logits(&mut tape, h)?;
        let z: Vec<f64> = tape.value(z).data().iter().map(|v| v.to_f64_lossy()).collect();
        Ok(softmax(&z))
    }

    fn feed<R: Real>(&self, tape: &mut Tape<'_, R>, token: usize, state: CellState) -> Result<CellState> {
        if token >= self.vocab_size {
            return Err(Error::Data(format!("token id {token} outside a vocabulary of {}", self.vocab_size)));
        }
        let table = tape.param(self.embed);
        let x = tape.embedding(table, &[token])?;
        let x = tape.row(x, 0)?;
        self.cell.step(tape, x, state)
    }

    /// Continue `prompt` for at most `max_len` tokens, stopping at EOS (not
    /// included). PAD and BOS are never emitted.
    pub fn generate<R: Real>(
        &self,
        store: &ParamStore<R>,
        prompt: &[usize],
        max_len: usize,
        decoding: Decoding,
    ) -> Result<Vec<usize>> {
        let mut rng = match decoding {
            Decoding::Sample { temperature, seed } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
                }
                Some(rng::stream(seed, "lm-sample"))
            }
            Decoding::Greedy => None,
        };
        let mut out = Vec::new();
        if max_len == 0 {
            return Ok(out);
        }
        let mut tape = Tape::new(store);
        let mut state = self.cell.zero_state(&mut tape);
        for &t in core::iter::once(&BOS).chain(prompt) {
            state = self.feed(&mut tape, t, state)?;
        }
        while out.len() < max_len {
            let z = self.logits(&mut tape, state.h)?;
            let mut z: Vec<f64> = tape.value(z).data().iter().map(|v| v.to_f64_lossy()).collect();
            for banned in [PAD, BOS] {
                if banned < z.len() {
                    z[banned] = f64::NEG_INFINITY;
                }
            }
            let next = match (&mut rng, decoding) {
                (Some(rng), Decoding::Sample { temperature, .. }) => {
                    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
                    let p: Vec<f64> = log_softmax(&scaled).into_iter().map(libm::exp).collect();
                    WeightedIndex::new(&p)
                        .map_err(|_| Error::Numeric { op: "generate" })?
                        .sample(rng)
                }
                _ => argmax(&z),
            };
            if next == EOS {
                break;
            }
            out.push(next);
            state = self.feed(&mut tape, next, state)?;
        }
        Ok(out)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug)]
pub struct LmTrainer<R> {
    pub model: LmModel,
    pub optimizer: Optimizer<R>,
    pub batch_size: usize,
    sentences: Vec<Vec<usize>>,
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl<R: Real> LmTrainer<R> {
    /// `sentences` are already wrapped in BOS/EOS.
    pub fn new(
        model: LmModel,
        optimizer: Optimizer<R>,
        sentences: Vec<Vec<usize>>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(LmTrainer {
            model,
            optimizer,
            batch_size,
            sentences,
            order: Vec::new(),
            cursor: 0,
            rng: rng::stream(seed, "lm-train"),
        })
    }

    pub fn sentences(&self) -> &[Vec<usize>] {
        &self.sentences
    }
}

impl<R: Real> Task<R> for LmTrainer<R> {
    fn kind(&self) -> TaskKind {
        TaskKind::Lm
    }

    fn params(&self) -> Vec<ParamId> {
        self.model.params()
    }

    fn batches_per_epoch(&self) -> usize {
        batch_ranges(self.sentences.len(), self.batch_size).len()
    }

    fn train_step(&mut self, store: &mut ParamStore<R>) -> Result<f64> {
        if self.sentences.is_empty() {
            return Err(Error::Config("language-model task has no training sentences".into()));
        }
        let ranges = batch_ranges(self.sentences.len(), self.batch_size);
        if self.order.is_empty() || self.cursor >= ranges.len() {
            self.order = (0..self.sentences.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch: Vec<&[usize]> = self.order[ranges[self.cursor].clone()]
            .iter()
            .map(|&i| self.sentences[i].as_slice())
            .collect();
        self.cursor += 1;
        let (loss, grads) = {
            let mut tape = Tape::new(store);
            let loss = self.model.nll(&mut tape, &batch)?;
            (tape.value(loss).item().to_f64_lossy(), tape.backward(loss)?)
        };
        self.optimizer.step(store, &grads, &self.model.params())?;
        Ok(loss)
    }
}
