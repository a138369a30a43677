//! SGD and Adam with L2 weight decay folded into the gradient.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<R> {
    m: Vec<R>,
    v: Vec<R>,
}

/// First-order optimizer with private per-parameter state.
///
/// Weight decay adds `weight_decay * theta` to each gradient before the
/// update, which is how the `lambda * ||theta||^2` term of the training
/// objectives is realised.
#[derive(Debug, Clone)]
pub struct Optimizer<R> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    state: BTreeMap<ParamId, Moments<R>>,
}

impl<R: Real> Optimizer<R> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(Error::Config(format!("weight decay must be non-negative, got {weight_decay}")));
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            state: BTreeMap::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, 0.0)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, 0.0)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Update `params` in place. Parameters the loss never reached, and
    /// frozen parameters, are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>, params: &[ParamId]) -> Result<()> {
        let reached: Vec<ParamId> = params
            .iter()
            .copied()
            .filter(|&id| store.is_trainable(id) && grads.param(id).is_some())
            .collect();
        if reached.is_empty() && params.iter().any(|&id| store.is_trainable(id)) {
            return Err(Error::Usage("optimizer step without gradients for any listed parameter".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let lr = self.learning_rate;
        let wd = R::of(self.weight_decay);
        for id in reached {
            let g = grads.param(id).expect("filtered above");
            let theta = store.value(id);
            if g.shape() != theta.shape() {
                return Err(Error::Usage(format!(
                    "gradient shape {:?} does not match {} {:?}",
                    g.shape(),
                    store.name(id),
                    theta.shape()
                )));
            }
            let grad: Vec<R> = g
                .data()
                .iter()
                .zip(theta.data())
                .map(|(&gv, &p)| gv + wd * p)
                .collect();
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = R::of(lr);
                    for (p, gv) in store.value_mut(id).data_mut().iter_mut().zip(&grad) {
                        *p -= lr * *gv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let n = grad.len();
                    let st = self.state.entry(id).or_insert_with(|| Moments {
                        m: vec![R::zero(); n],
                        v: vec![R::zero(); n],
                    });
                    let (b1, b2) = (R::of(beta1), R::of(beta2));
                    let c1 = R::of(1.0 - libm::pow(beta1, t));
                    let c2 = R::of(1.0 - libm::pow(beta2, t));
                    let (lr, eps) = (R::of(lr), R::of(eps));
                    let data = store.value_mut(id).data_mut();
                    for k in 0..n {
                        st.m[k] = b1 * st.m[k] + (R::one() - b1) * grad[k];
                        st.v[k] = b2 * st.v[k] + (R::one() - b2) * grad[k] * grad[k];
                        let m_hat = st.m[k] / c1;
                        let v_hat = st.v[k] / c2;
                        data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
