//! Central finite-difference checks of every differentiable operation, the
//! network blocks and the three model losses, in `f64`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::blocks::{
    AttentionLayer, CellKind, EncoderKind, FeedForwardHead, FinalState, LstmCell, Mode, SequenceEncoder,
};
use crate::error::Result;
use crate::kge::{KgeConfig, KgeModel};
use crate::lm::{LmConfig, LmModel};
use crate::params::{ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tape::{NormStats, Tape, Var};
use crate::tensor::Tensor;
use crate::typer::{TyperConfig, TyperModel, TypingInstance};
use crate::vocab::{BOS, EOS, SEP};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Relative errors use `max(|analytic|, |numeric|, FLOOR)` as denominator so
/// gradients that are zero up to rounding compare on an absolute scale.
pub const FLOOR: f64 = 1e-4;

type LossFn = Box<dyn Fn(&mut Tape<'_, f64>) -> Result<Var>>;

/// A scalar function of every parameter in `store`.
pub struct Problem {
    pub store: ParamStore<f64>,
    pub loss: LossFn,
}

impl core::fmt::Debug for Problem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Problem").field("store", &self.store).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn eval(p: &Problem) -> Result<f64> {
    let mut t = Tape::new(&p.store);
    let l = (p.loss)(&mut t)?;
    Ok(t.value(l).item())
}

/// Largest relative disagreement between backprop and central differences
/// over every element of every trainable parameter.
pub fn max_relative_error(p: &mut Problem) -> Result<f64> {
    let grads = {
        let mut t = Tape::new(&p.store);
        let l = (p.loss)(&mut t)?;
        t.backward(l)?
    };
    let ids: Vec<ParamId> = p.store.entries().filter(|(id, _, _)| p.store.is_trainable(*id)).map(|e| e.0).collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = grads.param_or_zero(id, &p.store);
        for k in 0..p.store.value(id).len() {
            let orig = p.store.value(id).data()[k];
            p.store.value_mut(id).data_mut()[k] = orig + STEP;
            let up = eval(p)?;
            p.store.value_mut(id).data_mut()[k] = orig - STEP;
            let down = eval(p)?;
            p.store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.data()[k];
            let denom = a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Entries at least `gap` away from zero, for inputs to kinked functions.
fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let mut t = rand_tensor(rng, shape, gap, 1.0);
    t.data_mut().iter_mut().for_each(|v| {
        if rng.gen_bool(0.5) {
            *v = -*v
        }
    });
    t
}

fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4))
}

fn param(store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>) -> ParamId {
    store.register(name, t, true).expect("fresh name")
}

/// Contract an arbitrary output with fixed random weights so every output
/// element contributes to the checked scalar.
fn weighted(rng: &mut Rng, f: impl Fn(&mut Tape<'_, f64>) -> Result<Var> + 'static) -> LossFn {
    let seed = rng.gen::<u64>();
    Box::new(move |t: &mut Tape<'_, f64>| {
        let y = f(t)?;
        let shape = t.value(y).shape().to_vec();
        let w = t.constant(rand_tensor(&mut rng::seeded(seed), &shape, -1.0, 1.0));
        t.dot(w, y)
    })
}

type Builder = fn(&mut Rng) -> Problem;

fn unary_problem(rng: &mut Rng, x: Tensor<f64>, op: fn(&mut Tape<'_, f64>, Var) -> Result<Var>) -> Problem {
    let mut store = ParamStore::new();
    let xi = param(&mut store, "x", x);
    let loss = weighted(rng, move |t| {
        let x = t.param(xi);
        op(t, x)
    });
    Problem { store, loss }
}

fn shape_of(rng: &mut Rng) -> Vec<usize> {
    let (m, n, _) = dims(rng);
    if rng.gen_bool(0.5) {
        vec![m * n]
    } else {
        vec![m, n]
    }
}

fn p_matmul(rng: &mut Rng) -> Problem {
    let (m, k, n) = dims(rng);
    let (sa, sb) = match rng.gen_range(0..3) {
        0 => (vec![m, k], vec![k, n]),
        1 => (vec![k], vec![k, n]),
        _ => (vec![m, k], vec![k]),
    };
    let mut store = ParamStore::new();
    let a = param(&mut store, "a", rand_tensor(rng, &sa, -1.0, 1.0));
    let b = param(&mut store, "b", rand_tensor(rng, &sb, -1.0, 1.0));
    let loss = weighted(rng, move |t| {
        let (a, b) = (t.param(a), t.param(b));
        t.matmul(a, b)
    });
    Problem { store, loss }
}

fn binary(rng: &mut Rng, op: fn(&mut Tape<'_, f64>, Var, Var) -> Result<Var>) -> Problem {
    let shape = shape_of(rng);
    let mut store = ParamStore::new();
    let a = param(&mut store, "a", rand_tensor(rng, &shape, -1.0, 1.0));
    let b = param(&mut store, "b", rand_tensor(rng, &shape, -1.0, 1.0));
    let loss = weighted(rng, move |t| {
        let (a, b) = (t.param(a), t.param(b));
        op(t, a, b)
    });
    Problem { store, loss }
}

fn p_add(rng: &mut Rng) -> Problem {
    binary(rng, |t, a, b| t.add(a, b))
}

fn p_mul(rng: &mut Rng) -> Problem {
    binary(rng, |t, a, b| t.mul(a, b))
}

fn p_dot(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let mut store = ParamStore::new();
    let a = param(&mut store, "a", rand_tensor(rng, &shape, -1.0, 1.0));
    let b = param(&mut store, "b", rand_tensor(rng, &shape, -1.0, 1.0));
    Problem {
        store,
        loss: Box::new(move |t| {
            let (a, b) = (t.param(a), t.param(b));
            let d = t.dot(a, b)?;
            t.mul(d, d)
        }),
    }
}

fn p_add_bias(rng: &mut Rng) -> Problem {
    let (m, n, _) = dims(rng);
    let shape = if rng.gen_bool(0.5) { vec![n] } else { vec![m, n] };
    let mut store = ParamStore::new();
    let x = param(&mut store, "x", rand_tensor(rng, &shape, -1.0, 1.0));
    let b = param(&mut store, "b", rand_tensor(rng, &[n], -1.0, 1.0));
    let loss = weighted(rng, move |t| {
        let (x, b) = (t.param(x), t.param(b));
        t.add_bias(x, b)
    });
    Problem { store, loss }
}

fn p_scale(rng: &mut Rng) -> Problem {
    let c = rng.gen_range(-2.0..2.0);
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, -1.0, 1.0);
    let mut store = ParamStore::new();
    let xi = param(&mut store, "x", x);
    let loss = weighted(rng, move |t| {
        let x = t.param(xi);
        let y = t.scale(x, c)?;
        t.offset(y, 0.5)
    });
    Problem { store, loss }
}

fn p_concat(rng: &mut Rng) -> Problem {
    let k = rng.gen_range(1..4);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = (0..k)
        .map(|i| {
            let n = rng.gen_range(1..4);
            param(&mut store, &format!("x{i}"), rand_tensor(rng, &[n], -1.0, 1.0))
        })
        .collect();
    let loss = weighted(rng, move |t| {
        let vs: Vec<Var> = ids.iter().map(|&i| t.param(i)).collect();
        t.concat(&vs)
    });
    Problem { store, loss }
}

fn p_stack_row(rng: &mut Rng) -> Problem {
    let (k, n, _) = dims(rng);
    let pick = rng.gen_range(0..k);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = (0..k)
        .map(|i| param(&mut store, &format!("x{i}"), rand_tensor(rng, &[n], -1.0, 1.0)))
        .collect();
    let loss = weighted(rng, move |t| {
        let vs: Vec<Var> = ids.iter().map(|&i| t.param(i)).collect();
        let m = t.stack(&vs)?;
        let r = t.row(m, pick)?;
        let s = t.sigmoid(m)?;
        let rs = t.row_sum(s)?;
        let rs = t.sum(rs)?;
        let r = t.scale(r, 2.0)?;
        let r0 = t.sum(r)?;
        let tot = t.add(rs, r0)?;
        let e = t.stack(&[tot, tot])?;
        t.tanh(e)
    });
    Problem { store, loss }
}

fn p_slice(rng: &mut Rng) -> Problem {
    let n = rng.gen_range(2..8);
    let start = rng.gen_range(0..n);
    let len = rng.gen_range(1..=n - start);
    let x = rand_tensor(rng, &[n], -1.0, 1.0);
    unary_problem_with(rng, x, move |t, x| t.slice(x, start, len))
}

fn unary_problem_with(
    rng: &mut Rng,
    x: Tensor<f64>,
    op: impl Fn(&mut Tape<'_, f64>, Var) -> Result<Var> + 'static,
) -> Problem {
    let mut store = ParamStore::new();
    let xi = param(&mut store, "x", x);
    let loss = weighted(rng, move |t| {
        let x = t.param(xi);
        op(t, x)
    });
    Problem { store, loss }
}

fn p_embedding(rng: &mut Rng) -> Problem {
    let (v, d, n) = dims(rng);
    let idx: Vec<usize> = (0..n + 1).map(|_| rng.gen_range(0..v)).collect();
    let x = rand_tensor(rng, &[v, d], -1.0, 1.0);
    unary_problem_with(rng, x, move |t, x| t.embedding(x, &idx))
}

fn p_sigmoid(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, -3.0, 3.0);
    unary_problem(rng, x, |t, x| t.sigmoid(x))
}

fn p_tanh(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, -3.0, 3.0);
    unary_problem(rng, x, |t, x| t.tanh(x))
}

fn p_relu(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = away_from_zero(rng, &shape, 0.01);
    unary_problem(rng, x, |t, x| t.relu(x))
}

fn p_ln(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, 0.1, 3.0);
    unary_problem(rng, x, |t, x| t.ln(x))
}

fn p_clamp(rng: &mut Rng) -> Problem {
    // Keep entries clear of the boundaries at -0.5 and 0.5.
    let shape = shape_of(rng);
    let mut x = rand_tensor(rng, &shape, -1.0, 1.0);
    x.data_mut().iter_mut().for_each(|v| {
        if (v.abs() - 0.5).abs() < 0.01 {
            *v += 0.05
        }
    });
    unary_problem(rng, x, |t, x| t.clamp(x, -0.5, 0.5))
}

fn p_softmax(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, -2.0, 2.0);
    unary_problem(rng, x, |t, x| t.softmax(x))
}

fn p_log_softmax(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, -2.0, 2.0);
    unary_problem(rng, x, |t, x| t.log_softmax(x))
}

fn p_reductions(rng: &mut Rng) -> Problem {
    let shape = shape_of(rng);
    let x = rand_tensor(rng, &shape, -1.0, 1.0);
    unary_problem(rng, x, |t, x| {
        let s = t.sum(x)?;
        let m = t.mean(x)?;
        let p = t.mul(s, m)?;
        t.concat(&[s, m, p])
    })
}

fn p_row_sum(rng: &mut Rng) -> Problem {
    let (m, n, _) = dims(rng);
    let x = rand_tensor(rng, &[m, n], -1.0, 1.0);
    unary_problem_with(rng, x, |t, x| t.row_sum(x))
}

fn p_gather(rng: &mut Rng) -> Problem {
    let (m, n, _) = dims(rng);
    let vector = rng.gen_bool(0.3);
    let rows = if vector { 1 } else { m };
    let idx: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..n)).collect();
    let shape = if vector { vec![n] } else { vec![m, n] };
    let x = rand_tensor(rng, &shape, -1.0, 1.0);
    unary_problem_with(rng, x, move |t, x| {
        let lp = t.log_softmax(x)?;
        t.gather(lp, &idx)
    })
}

fn p_transpose(rng: &mut Rng) -> Problem {
    let (m, n, k) = dims(rng);
    let mut store = ParamStore::new();
    let a = param(&mut store, "a", rand_tensor(rng, &[m, n], -1.0, 1.0));
    let b = param(&mut store, "b", rand_tensor(rng, &[m, k], -1.0, 1.0));
    let loss = weighted(rng, move |t| {
        let (a, b) = (t.param(a), t.param(b));
        let at = t.transpose(a)?;
        t.matmul(at, b)
    });
    Problem { store, loss }
}

fn p_batch_norm(rng: &mut Rng) -> Problem {
    let b = rng.gen_range(2..5);
    let f = rng.gen_range(1..4);
    let running = rng.gen_bool(0.3);
    let mean: Vec<f64> = (0..f).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..f).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut store = ParamStore::new();
    let x = param(&mut store, "x", rand_tensor(rng, &[b, f], -2.0, 2.0));
    let g = param(&mut store, "gamma", rand_tensor(rng, &[f], 0.5, 1.5));
    let be = param(&mut store, "beta", rand_tensor(rng, &[f], -0.5, 0.5));
    let loss = weighted(rng, move |t| {
        let (xv, gv, bv) = (t.param(x), t.param(g), t.param(be));
        let stats = if running {
            NormStats::Running { mean: &mean, var: &var }
        } else {
            NormStats::Batch
        };
        Ok(t.batch_norm(xv, gv, bv, stats)?.0)
    });
    Problem { store, loss }
}

fn p_lstm_step(rng: &mut Rng) -> Problem {
    let (d, h, n) = dims(rng);
    let kind = if rng.gen_bool(0.7) { CellKind::Lstm } else { CellKind::SimpleRnn };
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "cell", d, h, kind, rng).expect("sizes");
    let xs = param(&mut store, "xs", rand_tensor(rng, &[n, d], -1.0, 1.0));
    let reverse = rng.gen_bool(0.5);
    let loss = weighted(rng, move |t| {
        let x = t.param(xs);
        let hs = cell.run(t, x, reverse)?;
        t.stack(&hs)
    });
    Problem { store, loss }
}

fn p_encoder(rng: &mut Rng) -> Problem {
    let (d, h, n) = dims(rng);
    let kind = if rng.gen_bool(0.7) { EncoderKind::BiLstm } else { EncoderKind::ForwardLstm };
    let fin = if rng.gen_bool(0.7) { FinalState::Rightmost } else { FinalState::Mean };
    let mut store = ParamStore::new();
    let enc = SequenceEncoder::new(&mut store, "enc", d, h, kind, CellKind::Lstm, fin, rng).expect("sizes");
    let table = param(&mut store, "table", rand_tensor(rng, &[5, d], -1.0, 1.0));
    let ids: Vec<usize> = (0..n + 1).map(|_| rng.gen_range(0..5)).collect();
    let loss = weighted(rng, move |t| {
        let tb = t.param(table);
        let e = enc.encode_ids(t, tb, &ids)?;
        let s = t.stack(&e.states)?;
        let s = t.row_sum(s)?;
        let s = t.sum(s)?;
        let f = t.sum(e.c_final)?;
        t.concat(&[s, f, e.c_final])
    });
    Problem { store, loss }
}

fn p_attention(rng: &mut Rng) -> Problem {
    let (n, w, a) = dims(rng);
    let mut store = ParamStore::new();
    let att = AttentionLayer::new(&mut store, "att", w, a, rng).expect("sizes");
    let c = param(&mut store, "c", rand_tensor(rng, &[n, w], -1.0, 1.0));
    let loss = weighted(rng, move |t| {
        let cv = t.param(c);
        let (rep, weights) = att.attend(t, cv)?;
        t.concat(&[rep, weights])
    });
    Problem { store, loss }
}

fn p_feedforward(rng: &mut Rng) -> Problem {
    let b = rng.gen_range(2..5);
    let widths: Vec<usize> = (0..4).map(|_| rng.gen_range(1..4)).collect();
    let norm = rng.gen_bool(0.5).then_some(0);
    let mut store = ParamStore::new();
    let head = FeedForwardHead::new(&mut store, "head", &widths, norm, rng).expect("widths");
    // Positive biases keep most pre-activations clear of the ReLU kink.
    for l in &head.layers {
        *store.value_mut(l.b) = rand_tensor(rng, &[l.output], 0.2, 0.6);
    }
    let x = param(&mut store, "x", rand_tensor(rng, &[b, widths[0]], -1.0, 1.0));
    let mode = if rng.gen_bool(0.7) { Mode::Train } else { Mode::Eval };
    let loss = weighted(rng, move |t| {
        let xv = t.param(x);
        Ok(head.forward(t, xv, mode)?.0)
    });
    Problem { store, loss }
}

fn random_seq(rng: &mut Rng, v: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(5..v)).collect()
}

fn p_kge_loss(rng: &mut Rng) -> Problem {
    let v = 9;
    let cfg = KgeConfig {
        embed_dim: rng.gen_range(1..4),
        hidden: rng.gen_range(1..3),
        head_hidden: [rng.gen_range(1..4), rng.gen_range(1..4)],
        encoder: if rng.gen_bool(0.8) { EncoderKind::BiLstm } else { EncoderKind::ForwardLstm },
        pos_weight: rng.gen_range(0.5..2.0),
        ..KgeConfig::default()
    };
    let mut store = ParamStore::new();
    let model = KgeModel::new(&mut store, "kge", v, &cfg, None, rng).expect("config");
    // Larger embeddings than the default init make the check non-trivial.
    *store.value_mut(model.embed) = rand_tensor(rng, &[v, cfg.embed_dim], -1.0, 1.0);
    for l in &model.head.layers {
        *store.value_mut(l.b) = rand_tensor(rng, &[l.output], 0.2, 0.6);
    }
    let b = rng.gen_range(1..4);
    let seqs: Vec<Vec<usize>> = (0..b)
        .map(|_| {
            let mut s = { let n = rng.gen_range(1..3); random_seq(rng, v, n) };
            s.push(SEP);
            s.extend(random_seq(rng, v, 1));
            s.push(SEP);
            s.extend({ let n = rng.gen_range(1..3); random_seq(rng, v, n) });
            s
        })
        .collect();
    let labels: Vec<bool> = (0..b).map(|_| rng.gen_bool(0.5)).collect();
    Problem {
        store,
        loss: Box::new(move |t| {
            let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
            model.loss(t, &refs, &labels)
        }),
    }
}

fn p_typing_loss(rng: &mut Rng) -> Problem {
    let v = 9;
    let cfg = TyperConfig {
        embed_dim: rng.gen_range(1..3),
        hidden: rng.gen_range(1..3),
        attention_dim: rng.gen_range(1..3),
        head_hidden: [rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)],
        ..TyperConfig::default()
    };
    let n_types = rng.gen_range(1..4);
    let mut store = ParamStore::new();
    let model = TyperModel::new(&mut store, "et", v, n_types, &cfg, None, rng).expect("config");
    *store.value_mut(model.embed) = rand_tensor(rng, &[v, cfg.embed_dim], -1.0, 1.0);
    for l in &model.head.layers {
        *store.value_mut(l.b) = rand_tensor(rng, &[l.output], 0.2, 0.6);
    }
    let b = rng.gen_range(2..4);
    let batch: Vec<TypingInstance> = (0..b)
        .map(|_| {
            let n = rng.gen_range(1..6);
            let start = rng.gen_range(0..n);
            let end = rng.gen_range(start + 1..=n);
            let types = (0..n_types).filter(|_| rng.gen_bool(0.5)).collect();
            TypingInstance::new(random_seq(rng, v, n), start, end, types).expect("span")
        })
        .collect();
    Problem {
        store,
        loss: Box::new(move |t| {
            let refs: Vec<&TypingInstance> = batch.iter().collect();
            Ok(model.loss(t, &refs)?.0)
        }),
    }
}

fn p_lm_loss(rng: &mut Rng) -> Problem {
    let v = 8;
    let d = rng.gen_range(1..4);
    let cfg = LmConfig {
        embed_dim: d,
        hidden: if rng.gen_bool(0.3) { d } else { rng.gen_range(1..4) },
        ..LmConfig::default()
    };
    let cfg = LmConfig {
        tie_embeddings: cfg.hidden == d,
        ..cfg
    };
    let mut store = ParamStore::new();
    let model = LmModel::new(&mut store, "lm", v, &cfg, None, rng).expect("config");
    *store.value_mut(model.embed) = rand_tensor(rng, &[v, d], -1.0, 1.0);
    let sents: Vec<Vec<usize>> = (0..rng.gen_range(1..3))
        .map(|_| {
            let mut s = vec![BOS];
            let n = rng.gen_range(0..4);
            s.extend(random_seq(rng, v, n));
            s.push(EOS);
            s
        })
        .collect();
    Problem {
        store,
        loss: Box::new(move |t| {
            let refs: Vec<&[usize]> = sents.iter().map(Vec::as_slice).collect();
            model.nll(t, &refs)
        }),
    }
}

/// Every check in the suite.
pub fn suite() -> Vec<(&'static str, Builder)> {
    vec![
        ("matmul", p_matmul as Builder),
        ("add", p_add),
        ("add_bias", p_add_bias),
        ("mul", p_mul),
        ("scale_offset", p_scale),
        ("concat", p_concat),
        ("stack_row_row_sum", p_stack_row),
        ("slice", p_slice),
        ("embedding_lookup", p_embedding),
        ("sigmoid", p_sigmoid),
        ("tanh", p_tanh),
        ("relu", p_relu),
        ("ln", p_ln),
        ("clamp", p_clamp),
        ("softmax", p_softmax),
        ("log_softmax", p_log_softmax),
        ("sum_mean", p_reductions),
        ("row_sum", p_row_sum),
        ("dot", p_dot),
        ("gather", p_gather),
        ("transpose", p_transpose),
        ("batch_norm", p_batch_norm),
        ("recurrent_cell", p_lstm_step),
        ("sequence_encoder", p_encoder),
        ("attention", p_attention),
        ("feed_forward_head", p_feedforward),
        ("kge_loss", p_kge_loss),
        ("typing_hinge_loss", p_typing_loss),
        ("lm_nll", p_lm_loss),
    ]
}

/// Run one named check over `instances` random problems.
pub fn run_check(name: &str, build: Builder, instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = rng::stream(seed, name);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mut p = build(&mut rng);
        worst = worst.max(max_relative_error(&mut p)?);
    }
    Ok(CheckResult {
        name: name.into(),
        instances,
        max_rel_error: worst,
        passed: worst < TOLERANCE,
    })
}

pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    suite().into_iter().map(|(n, b)| run_check(n, b, instances, seed)).collect()
}
