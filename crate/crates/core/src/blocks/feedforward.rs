use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{xavier, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{BatchMoments, NormStats, Tape, Var};
use crate::tensor::Tensor;

/// Training uses batch statistics for batch norm; evaluation uses the
/// running averages and never mutates anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Fraction of the old running value kept at each update.
    pub momentum: f64,
}

pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

/// Stack of affine + ReLU layers, optionally with batch norm after one of
/// them.
#[derive(Debug, Clone)]
pub struct FeedForwardHead {
    pub layers: Vec<Dense>,
    /// Batch norm applied to the output of layer `.0` (0-based).
    pub norm: Option<(usize, BatchNormLayer)>,
}

impl FeedForwardHead {
    /// `widths = [input, h1, ..., output]`; layers are `{prefix}.l{k}`.
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        widths: &[usize],
        norm_after: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("{prefix}: invalid layer widths {widths:?}")));
        }
        let mut layers = Vec::new();
        for (k, pair) in widths.windows(2).enumerate() {
            let w = store.register(&format!("{prefix}.l{k}.w"), xavier(rng, pair[0], pair[1]), true)?;
            let b = store.register(&format!("{prefix}.l{k}.b"), Tensor::zeros(&[pair[1]]), true)?;
            layers.push(Dense {
                w,
                b,
                input: pair[0],
                output: pair[1],
            });
        }
        let norm = match norm_after {
            None => None,
            Some(k) if k + 1 < layers.len() => {
                let f = layers[k].output;
                let bn = BatchNormLayer {
                    gamma: store.register(&format!("{prefix}.bn.gamma"), Tensor::filled(&[f], R::one()), true)?,
                    beta: store.register(&format!("{prefix}.bn.beta"), Tensor::zeros(&[f]), true)?,
                    running_mean: store.register(&format!("{prefix}.bn.running_mean"), Tensor::zeros(&[f]), false)?,
                    running_var: store.register(
                        &format!("{prefix}.bn.running_var"),
                        Tensor::filled(&[f], R::one()),
                        false,
                    )?,
                    momentum: BATCH_NORM_MOMENTUM,
                };
                Some((k, bn))
            }
            Some(k) => {
                return Err(Error::Config(format!("{prefix}: batch norm after layer {k} has no following layer")));
            }
        };
        Ok(FeedForwardHead { layers, norm })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().output
    }

    /// Trainable parameters (running statistics excluded).
    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.layers.iter().flat_map(|l| [l.w, l.b]).collect();
        if let Some((_, bn)) = &self.norm {
            p.extend([bn.gamma, bn.beta]);
        }
        p
    }

    /// `z_l = ReLU(z_{l-1} W_l + b_l)` for every layer. `x` is `[B, F]` or a
    /// single vector `[F]`.
    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<'_, R>,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Option<BatchMoments<R>>)> {
        let mut z = x;
        let mut moments = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let (w, b) = (tape.param(layer.w), tape.param(layer.b));
            let a = tape.matmul(z, w)?;
            let a = tape.add_bias(a, b)?;
            z = tape.relu(a)?;
            if let Some((after, bn)) = &self.norm {
                if *after == k {
                    let (z2, m) = self.normalise(tape, z, bn, mode)?;
                    z = z2;
                    moments = m;
                }
            }
        }
        Ok((z, moments))
    }

    fn normalise<R: Real>(
        &self,
        tape: &mut Tape<'_, R>,
        z: Var,
        bn: &BatchNormLayer,
        mode: Mode,
    ) -> Result<(Var, Option<BatchMoments<R>>)> {
        let store = tape.store();
        let (gamma, beta) = (tape.param(bn.gamma), tape.param(bn.beta));
        let was_vector = !tape.value(z).is_matrix();
        let z = if was_vector { tape.stack(&[z])? } else { z };
        let stats = match mode {
            Mode::Train => NormStats::Batch,
            Mode::Eval => NormStats::Running {
                mean: store.value(bn.running_mean).data(),
                var: store.value(bn.running_var).data(),
            },
        };
        let (y, m) = tape.batch_norm(z, gamma, beta, stats)?;
        let y = if was_vector { tape.row(y, 0)? } else { y };
        Ok((y, m))
    }

    /// Fold a training batch's moments into the running statistics.
    pub fn update_running_stats<R: Real>(&self, store: &mut ParamStore<R>, moments: &BatchMoments<R>) {
        let Some((_, bn)) = &self.norm else { return };
        let keep = R::of(bn.momentum);
        let take = R::one() - keep;
        let unbias = if moments.batch > 1 {
            R::of(moments.batch as f64 / (moments.batch - 1) as f64)
        } else {
            R::one()
        };
        for (r, &m) in store.value_mut(bn.running_mean).data_mut().iter_mut().zip(&moments.mean) {
            *r = keep * *r + take * m;
        }
        for (r, &v) in store.value_mut(bn.running_var).data_mut().iter_mut().zip(&moments.var) {
            *r = keep * *r + take * v * unbias;
        }
    }
}
