//! Straight-line scalar re-implementations used as test oracles.

use alloc::vec;
use alloc::vec::Vec;

use crate::blocks::{CellKind, FeedForwardHead, LstmCell, SequenceEncoder};
use crate::params::{ParamId, ParamStore};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn get(store: &ParamStore<f64>, id: ParamId) -> (&[f64], usize) {
    let t = store.value(id);
    let cols = if t.is_matrix() { t.cols() } else { t.len() };
    (t.data(), cols)
}

/// `x W` with `W` row-major `[len(x), cols]`.
pub fn vec_mat(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w[i * cols + j];
        }
    }
    out
}

pub fn cell_run(store: &ParamStore<f64>, cell: &LstmCell, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let (wx, gates) = get(store, cell.w_x);
    let (wh, _) = get(store, cell.w_h);
    let (b, _) = get(store, cell.b);
    let hd = cell.hidden;
    let n = xs.len();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut out = vec![Vec::new(); n];
    for k in 0..n {
        let t = if reverse { n - 1 - k } else { k };
        let a = vec_mat(&xs[t], wx, gates);
        let r = vec_mat(&h, wh, gates);
        let z: Vec<f64> = (0..gates).map(|j| a[j] + r[j] + b[j]).collect();
        match cell.kind {
            CellKind::SimpleRnn => h = z.iter().map(|v| v.tanh()).collect(),
            CellKind::Lstm => {
                for j in 0..hd {
                    let (i, f, g, o) = (sig(z[j]), sig(z[hd + j]), z[2 * hd + j].tanh(), sig(z[3 * hd + j]));
                    c[j] = f * c[j] + i * g;
                    h[j] = o * c[j].tanh();
                }
            }
        }
        out[t] = h.clone();
    }
    out
}

pub fn encoder_states(store: &ParamStore<f64>, enc: &SequenceEncoder, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f = cell_run(store, &enc.fwd, xs, false);
    match &enc.bwd {
        None => f,
        Some(cell) => {
            let b = cell_run(store, cell, xs, true);
            f.into_iter().zip(b).map(|(mut a, b)| {
                a.extend(b);
                a
            }).collect()
        }
    }
}

pub fn embed_rows(store: &ParamStore<f64>, table: ParamId, ids: &[usize]) -> Vec<Vec<f64>> {
    let t = store.value(table);
    ids.iter().map(|&i| t.row(i).to_vec()).collect()
}

/// Head without batch norm: ReLU after every affine layer.
pub fn head_forward(store: &ParamStore<f64>, head: &FeedForwardHead, x: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    for l in &head.layers {
        let (w, cols) = get(store, l.w);
        let (b, _) = get(store, l.b);
        z = vec_mat(&z, w, cols).iter().zip(b).map(|(a, b)| (a + b).max(0.0)).collect();
    }
    z
}
