use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{xavier, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Recurrence used inside a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    /// Gated LSTM: `c = f*c' + i*g`, `h = o*tanh(c)`.
    Lstm,
    /// Plain recurrence `h = tanh(W x + V h' + b)`, kept for ablations.
    SimpleRnn,
}

/// One recurrent cell. LSTM gate blocks are laid out `[i | f | g | o]`
/// along the columns of `w_x` (`[d, 4H]`), `w_h` (`[H, 4H]`) and `b`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
    pub kind: CellKind,
}

#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        input: usize,
        hidden: usize,
        kind: CellKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config(format!("{prefix}: cell sizes must be positive")));
        }
        let gates = match kind {
            CellKind::Lstm => 4 * hidden,
            CellKind::SimpleRnn => hidden,
        };
        let w_x = store.register(&format!("{prefix}.w_x"), xavier(rng, input, gates), true)?;
        let w_h = store.register(&format!("{prefix}.w_h"), xavier(rng, hidden, gates), true)?;
        let mut bias = vec![R::zero(); gates];
        if kind == CellKind::Lstm {
            bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = R::one());
        }
        let b = store.register(&format!("{prefix}.b"), Tensor::vector(bias), true)?;
        Ok(LstmCell {
            w_x,
            w_h,
            b,
            input,
            hidden,
            kind,
        })
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_x, self.w_h, self.b]
    }

    pub fn zero_state<R: Real>(&self, tape: &mut Tape<'_, R>) -> CellState {
        let h = tape.constant(Tensor::zeros(&[self.hidden]));
        let c = tape.constant(Tensor::zeros(&[self.hidden]));
        CellState { h, c }
    }

    /// Input projection `X W_x` for a whole sequence `[n, d]`.
    pub fn project_inputs<R: Real>(&self, tape: &mut Tape<'_, R>, xs: Var) -> Result<Var> {
        let w = tape.param(self.w_x);
        tape.matmul(xs, w)
    }

    /// One step given an already projected input `x W_x`.
    pub fn step_projected<R: Real>(&self, tape: &mut Tape<'_, R>, xw: Var, prev: CellState) -> Result<CellState> {
        let (w_h, b) = (tape.param(self.w_h), tape.param(self.b));
        let hw = tape.matmul(prev.h, w_h)?;
        let z = tape.add(xw, hw)?;
        let z = tape.add_bias(z, b)?;
        let hd = self.hidden;
        match self.kind {
            CellKind::SimpleRnn => {
                let h = tape.tanh(z)?;
                Ok(CellState { h, c: prev.c })
            }
            CellKind::Lstm => {
                let i = tape.slice(z, 0, hd)?;
                let i = tape.sigmoid(i)?;
                let f = tape.slice(z, hd, hd)?;
                let f = tape.sigmoid(f)?;
                let g = tape.slice(z, 2 * hd, hd)?;
                let g = tape.tanh(g)?;
                let o = tape.slice(z, 3 * hd, hd)?;
                let o = tape.sigmoid(o)?;
                let keep = tape.mul(f, prev.c)?;
                let write = tape.mul(i, g)?;
                let c = tape.add(keep, write)?;
                let tc = tape.tanh(c)?;
                let h = tape.mul(o, tc)?;
                Ok(CellState { h, c })
            }
        }
    }

    /// One step from a raw input vector `[d]`.
    pub fn step<R: Real>(&self, tape: &mut Tape<'_, R>, x: Var, prev: CellState) -> Result<CellState> {
        let w = tape.param(self.w_x);
        let xw = tape.matmul(x, w)?;
        self.step_projected(tape, xw, prev)
    }

    /// Hidden states over a `[n, d]` sequence, returned in position order.
    /// With `reverse` the recurrence runs from the last position to the first.
    pub fn run<R: Real>(&self, tape: &mut Tape<'_, R>, xs: Var, reverse: bool) -> Result<Vec<Var>> {
        let n = tape.value(xs).rows();
        let proj = self.project_inputs(tape, xs)?;
        let mut state = self.zero_state(tape);
        let mut hs = vec![state.h; n];
        for k in 0..n {
            let t = if reverse { n - 1 - k } else { k };
            let xw = tape.row(proj, t)?;
            state = self.step_projected(tape, xw, state)?;
            hs[t] = state.h;
        }
        Ok(hs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    BiLstm,
    /// Left-to-right cell only.
    ForwardLstm,
}

/// How the sequence summary is taken from the per-position states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalState {
    Rightmost,
    Mean,
}

#[derive(Debug, Clone)]
pub struct SequenceEncoder {
    pub fwd: LstmCell,
    pub bwd: Option<LstmCell>,
    pub final_state: FinalState,
}

/// Per-position states and the sequence summary.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Vec<Var>,
    pub c_final: Var,
}

impl SequenceEncoder {
    /// Cells are registered as `{prefix}.fwd.*` and `{prefix}.bwd.*`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        input: usize,
        hidden: usize,
        kind: EncoderKind,
        cell: CellKind,
        final_state: FinalState,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fwd = LstmCell::new(store, &format!("{prefix}.fwd"), input, hidden, cell, rng)?;
        let bwd = match kind {
            EncoderKind::BiLstm => Some(LstmCell::new(store, &format!("{prefix}.bwd"), input, hidden, cell, rng)?),
            EncoderKind::ForwardLstm => None,
        };
        Ok(SequenceEncoder { fwd, bwd, final_state })
    }

    /// State width: `2H` for a bi-LSTM, `H` otherwise.
    pub fn width(&self) -> usize {
        self.fwd.hidden * if self.bwd.is_some() { 2 } else { 1 }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fwd.params().to_vec();
        if let Some(b) = &self.bwd {
            p.extend(b.params());
        }
        p
    }

    /// Encode a `[n, d]` input matrix.
    pub fn encode<R: Real>(&self, tape: &mut Tape<'_, R>, xs: Var) -> Result<Encoded> {
        let n = tape.value(xs).rows();
        if !tape.value(xs).is_matrix() {
            return Err(Error::shape("encode_sequence", "inputs must be an [n, d] matrix"));
        }
        let f = self.fwd.run(tape, xs, false)?;
        let states = match &self.bwd {
            Some(cell) => {
                let b = cell.run(tape, xs, true)?;
                f.iter()
                    .zip(&b)
                    .map(|(&hf, &hb)| tape.concat(&[hf, hb]))
                    .collect::<Result<Vec<_>>>()?
            }
            None => f,
        };
        let c_final = match self.final_state {
            FinalState::Rightmost => states[n - 1],
            FinalState::Mean => {
                let m = tape.stack(&states)?;
                let w = tape.constant(Tensor::filled(&[n], R::one() / R::of(n as f64)));
                tape.matmul(w, m)?
            }
        };
        Ok(Encoded { states, c_final })
    }

    /// Look up `ids` in the embedding table and encode them.
    pub fn encode_ids<R: Real>(&self, tape: &mut Tape<'_, R>, table: Var, ids: &[usize]) -> Result<Encoded> {
        if ids.is_empty() {
            return Err(Error::Data("cannot encode an empty sequence".into()));
        }
        let xs = tape.embedding(table, ids)?;
        self.encode(tape, xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn zero_all(store: &mut ParamStore<f64>) {
        let ids: Vec<ParamId> = store.entries().map(|(id, _, _)| id).collect();
        for id in ids {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_cell_gives_zero_state() {
        let mut s = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut s, "c", 3, 4, CellKind::Lstm, &mut seeded(0)).unwrap();
        zero_all(&mut s);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::vector(vec![0.3, -2.0, 1.0]));
        let st = cell.zero_state(&mut t);
        let out = cell.step(&mut t, x, st).unwrap();
        assert!(t.value(out.h).data().iter().all(|&v| v == 0.0));
        assert!(t.value(out.c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut s = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut s, "c", 2, 3, CellKind::Lstm, &mut seeded(0)).unwrap();
        zero_all(&mut s);
        // forget block large, input gate strongly closed
        let b = s.value_mut(cell.b).data_mut();
        b[0..3].iter_mut().for_each(|v| *v = -40.0);
        b[3..6].iter_mut().for_each(|v| *v = 40.0);
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::zeros(&[2]));
        let h = t.constant(Tensor::zeros(&[3]));
        let c = t.constant(Tensor::vector(vec![0.7, -1.2, 3.0]));
        let out = cell.step(&mut t, x, CellState { h, c }).unwrap();
        for (a, b) in t.value(out.c).data().iter().zip([0.7, -1.2, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut s = ParamStore::<f32>::new();
        let cell = LstmCell::new(&mut s, "c", 2, 3, CellKind::Lstm, &mut seeded(0)).unwrap();
        assert_eq!(s.value(cell.b).data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn cell_rejects_wrong_input_width() {
        let mut s = ParamStore::<f64>::new();
        let cell = LstmCell::new(&mut s, "c", 3, 2, CellKind::Lstm, &mut seeded(0)).unwrap();
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::zeros(&[4]));
        let st = cell.zero_state(&mut t);
        assert!(matches!(cell.step(&mut t, x, st), Err(Error::Shape { .. })));
    }

    fn encoder(s: &mut ParamStore<f64>, kind: EncoderKind, fin: FinalState) -> SequenceEncoder {
        SequenceEncoder::new(s, "enc", 3, 4, kind, CellKind::Lstm, fin, &mut seeded(5)).unwrap()
    }

    fn inputs(n: usize) -> Tensor<f64> {
        Tensor::matrix(n, 3, (0..n * 3).map(|k| ((k * 7 % 11) as f64 - 5.0) * 0.2).collect()).unwrap()
    }

    #[test]
    fn single_step_final_is_first_state() {
        let mut s = ParamStore::new();
        let enc = encoder(&mut s, EncoderKind::BiLstm, FinalState::Rightmost);
        let mut t = Tape::new(&s);
        let xs = t.constant(inputs(1));
        let e = enc.encode(&mut t, xs).unwrap();
        assert_eq!(e.states.len(), 1);
        assert_eq!(t.value(e.c_final), t.value(e.states[0]));
        assert_eq!(t.value(e.c_final).len(), 8);
    }

    #[test]
    fn encoding_equals_manual_steps_exactly() {
        let mut s = ParamStore::new();
        let enc = encoder(&mut s, EncoderKind::BiLstm, FinalState::Rightmost);
        let x = inputs(5);
        let mut t = Tape::new(&s);
        let xs = t.constant(x.clone());
        let e = enc.encode(&mut t, xs).unwrap();

        let mut manual = Tape::new(&s);
        let rows: Vec<Var> = (0..5).map(|r| manual.constant(Tensor::vector(x.row(r).to_vec()))).collect();
        let mut st = enc.fwd.zero_state(&mut manual);
        let mut fwd = Vec::new();
        for &r in &rows {
            st = enc.fwd.step(&mut manual, r, st).unwrap();
            fwd.push(st.h);
        }
        let bwd_cell = enc.bwd.as_ref().unwrap();
        let mut st = bwd_cell.zero_state(&mut manual);
        let mut bwd = [st.h; 5];
        for k in (0..5).rev() {
            st = bwd_cell.step(&mut manual, rows[k], st).unwrap();
            bwd[k] = st.h;
        }
        for k in 0..5 {
            let mut expect = manual.value(fwd[k]).data().to_vec();
            expect.extend_from_slice(manual.value(bwd[k]).data());
            assert_eq!(t.value(e.states[k]).data(), &expect[..]);
        }
    }

    #[test]
    fn palindrome_with_mirrored_cells() {
        let mut s = ParamStore::new();
        let enc = encoder(&mut s, EncoderKind::BiLstm, FinalState::Rightmost);
        let bwd = enc.bwd.clone().unwrap();
        for (f, b) in enc.fwd.params().into_iter().zip(bwd.params()) {
            let v = s.value(f).clone();
            s.set(b, v).unwrap();
        }
        let base = inputs(3);
        let mut pal = base.data().to_vec();
        pal.extend_from_slice(base.row(1));
        pal.extend_from_slice(base.row(0));
        let x = Tensor::matrix(5, 3, pal).unwrap();
        let mut t = Tape::new(&s);
        let xs = t.constant(x);
        let e = enc.encode(&mut t, xs).unwrap();
        for k in 0..5 {
            let fk = &t.value(e.states[k]).data()[..4];
            let bk = &t.value(e.states[4 - k]).data()[4..];
            assert_eq!(fk, bk);
        }
    }

    #[test]
    fn mean_final_state_averages() {
        let mut s = ParamStore::new();
        let enc = encoder(&mut s, EncoderKind::ForwardLstm, FinalState::Mean);
        let mut t = Tape::new(&s);
        let xs = t.constant(inputs(4));
        let e = enc.encode(&mut t, xs).unwrap();
        for j in 0..4 {
            let m: f64 = e.states.iter().map(|&v| t.value(v).data()[j]).sum::<f64>() / 4.0;
            assert!((t.value(e.c_final).data()[j] - m).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut s = ParamStore::new();
        let enc = encoder(&mut s, EncoderKind::BiLstm, FinalState::Rightmost);
        zero_all(&mut s);
        let mut t = Tape::new(&s);
        let xs = t.constant(inputs(3));
        let e = enc.encode(&mut t, xs).unwrap();
        for v in e.states {
            assert!(t.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn empty_sequence_is_data_error() {
        let mut s = ParamStore::new();
        let enc = encoder(&mut s, EncoderKind::BiLstm, FinalState::Rightmost);
        let table = s.register("table", Tensor::zeros(&[5, 3]), true).unwrap();
        let mut t = Tape::new(&s);
        let tv = t.param(table);
        assert!(matches!(enc.encode_ids(&mut t, tv, &[]), Err(Error::Data(_))));
    }
}
