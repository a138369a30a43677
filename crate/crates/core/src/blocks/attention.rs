use alloc::format;

use crate::error::Result;
use crate::params::{uniform, xavier, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// `a = softmax(w_s . tanh(C W_a))`, `C_rep = sum_i a_i C_i`.
///
/// One set of parameters scores every context position, whichever side of
/// the mention it came from.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub w_a: ParamId,
    pub w_s: ParamId,
    pub width: usize,
    pub dim: usize,
}

impl AttentionLayer {
    pub fn new<R: Real>(store: &mut ParamStore<R>, prefix: &str, width: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let w_a = store.register(&format!("{prefix}.w_a"), xavier(rng, width, dim), true)?;
        let a = libm::sqrt(6.0 / (dim + 1) as f64);
        let w_s = store.register(&format!("{prefix}.w_s"), uniform(rng, &[dim], a), true)?;
        Ok(AttentionLayer { w_a, w_s, width, dim })
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w_a, self.w_s]
    }

    /// Returns `(C_rep [width], weights [T])` for a `[T, width]` context.
    pub fn attend<R: Real>(&self, tape: &mut Tape<'_, R>, context: Var) -> Result<(Var, Var)> {
        let (w_a, w_s) = (tape.param(self.w_a), tape.param(self.w_s));
        let proj = tape.matmul(context, w_a)?;
        let act = tape.tanh(proj)?;
        let scores = tape.matmul(act, w_s)?;
        let weights = tape.softmax(scores)?;
        let rep = tape.matmul(weights, context)?;
        Ok((rep, weights))
    }
}
