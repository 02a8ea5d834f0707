//! Embedding → recurrent stack → softmax model with truncated BPTT.

use crate::error::{Error, Result};
use crate::matrix::{kernels, DenseMatrix};
use crate::rnn::{self, RnnLayerWeights, RnnState, StepTrace};
use crate::train::cell::{step_backward, LayerGrads};

/// Token model used by the toy tasks. The embedding and output layers are
/// always dense; only the recurrent matrices carry compressed structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// `vocab x embed`; row `t` is the input vector of token `t`.
    pub embedding: DenseMatrix<f64>,
    pub layers: Vec<RnnLayerWeights<f64>>,
    /// `vocab x hidden`
    pub out_w: DenseMatrix<f64>,
    pub out_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embedding: DenseMatrix<f64>,
    pub layers: Vec<LayerGrads<f64>>,
    pub out_w: DenseMatrix<f64>,
    pub out_b: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(m: &Model) -> Self {
        Self {
            embedding: DenseMatrix::zeros(m.embedding.rows(), m.embedding.cols()),
            layers: m.layers.iter().map(LayerGrads::zeros_like).collect(),
            out_w: DenseMatrix::zeros(m.out_w.rows(), m.out_w.cols()),
            out_b: vec![0.0; m.out_b.len()],
        }
    }

    pub fn clear(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v = vec![self.embedding.data()];
        for l in &self.layers {
            v.extend(l.blocks());
        }
        v.push(self.out_w.data());
        v.push(&self.out_b);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.embedding.data_mut()];
        for l in &mut self.layers {
            v.extend(l.blocks_mut());
        }
        v.push(self.out_w.data_mut());
        v.push(&mut self.out_b);
        v
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Summed negative log-likelihood over the positions that carry a target.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossSum {
    pub nll: f64,
    pub count: usize,
}

impl LossSum {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.nll / self.count as f64
        }
    }

    pub fn add(&mut self, other: LossSum) {
        self.nll += other.nll;
        self.count += other.count;
    }
}

/// In-place log-softmax; returns nothing, leaves log-probabilities in `v`.
fn log_softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter_mut().for_each(|x| *x -= lse);
}

impl Model {
    pub fn vocab(&self) -> usize {
        self.out_w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.out_w.cols()
    }

    pub fn zero_states(&self) -> Vec<RnnState<f64>> {
        self.layers.iter().map(|l| l.zero_state()).collect()
    }

    /// Parameters of the recurrent layers (weights and biases).
    pub fn recurrent_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.embedding.data().len() + self.recurrent_param_count() + self.out_w.data().len() + self.out_b.len()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![self.embedding.data_mut()];
        for l in &mut self.layers {
            v.extend(l.w_in.param_blocks_mut());
            v.extend(l.w_rec.param_blocks_mut());
            v.push(&mut l.bias);
        }
        v.push(self.out_w.data_mut());
        v.push(&mut self.out_b);
        v
    }

    fn check_token(&self, t: usize) -> Result<()> {
        if t >= self.embedding.rows() {
            return Err(Error::Invalid(format!(
                "token {t} outside vocabulary of {}",
                self.embedding.rows()
            )));
        }
        Ok(())
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = self.out_b.clone();
        let mut wz = vec![0.0; self.vocab()];
        kernels::gemv(self.out_w.data(), self.hidden(), h, &mut wz);
        z.iter_mut().zip(&wz).for_each(|(a, b)| *a += b);
        z
    }

    /// Runs the inputs forward from `states` without recording anything.
    pub fn eval(
        &self,
        inputs: &[usize],
        targets: &[Option<usize>],
        states: &mut Vec<RnnState<f64>>,
    ) -> Result<LossSum> {
        let mut loss = LossSum::default();
        for (&tok, target) in inputs.iter().zip(targets) {
            self.check_token(tok)?;
            let mut x = self.embedding.row(tok).to_vec();
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                *state = rnn::step(layer, &x, state)?;
                x.clone_from(&state.h);
            }
            if let Some(t) = *target {
                let mut lp = self.logits(&x);
                log_softmax(&mut lp);
                loss.nll -= lp[t];
                loss.count += 1;
            }
        }
        Ok(loss)
    }

    /// Forward and backward over one window. Gradients of the mean loss over
    /// the window's targets are added to `grads`; `states` advance to the
    /// end of the window (truncating the gradient there).
    pub fn forward_backward(
        &self,
        inputs: &[usize],
        targets: &[Option<usize>],
        states: &mut Vec<RnnState<f64>>,
        grads: &mut ModelGrads,
    ) -> Result<LossSum> {
        let steps = inputs.len();
        let mut traces: Vec<Vec<StepTrace<f64>>> = Vec::with_capacity(steps);
        let mut tops: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut dlogits: Vec<Option<Vec<f64>>> = Vec::with_capacity(steps);
        let mut loss = LossSum::default();

        for (&tok, target) in inputs.iter().zip(targets) {
            self.check_token(tok)?;
            let mut x = self.embedding.row(tok).to_vec();
            let mut step_traces = Vec::with_capacity(self.layers.len());
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                let (next, trace) = rnn::step_traced(layer, &x, state)?;
                *state = next;
                step_traces.push(trace);
                x.clone_from(&state.h);
            }
            traces.push(step_traces);
            match *target {
                Some(t) => {
                    let mut lp = self.logits(&x);
                    log_softmax(&mut lp);
                    loss.nll -= lp[t];
                    loss.count += 1;
                    let mut p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                    p[t] -= 1.0;
                    dlogits.push(Some(p));
                }
                None => dlogits.push(None),
            }
            tops.push(x);
        }
        if loss.count == 0 {
            return Ok(loss);
        }
        let scale = 1.0 / loss.count as f64;

        let nl = self.layers.len();
        let mut dh_next: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.hidden()]).collect();
        let mut dc_next: Vec<Vec<f64>> = self
            .layers
            .iter()
            .zip(states.iter())
            .map(|(l, s)| vec![0.0; if s.c.is_empty() { 0 } else { l.hidden() }])
            .collect();

        for t in (0..steps).rev() {
            let mut d = std::mem::take(&mut dh_next[nl - 1]);
            if let Some(dl) = &mut dlogits[t] {
                dl.iter_mut().for_each(|v| *v *= scale);
                kernels::ger(grads.out_w.data_mut(), self.hidden(), 1.0, dl, &tops[t]);
                grads.out_b.iter_mut().zip(dl.iter()).for_each(|(g, v)| *g += v);
                for (row, dv) in self.out_w.data().chunks_exact(self.hidden()).zip(dl.iter()) {
                    kernels::axpy(*dv, row, &mut d);
                }
            }
            for l in (0..nl).rev() {
                if l < nl - 1 {
                    d.iter_mut().zip(&dh_next[l]).for_each(|(a, b)| *a += b);
                }
                let g = step_backward(&self.layers[l], &traces[t][l], &d, &dc_next[l], &mut grads.layers[l])?;
                dh_next[l] = g.dh_prev;
                dc_next[l] = g.dc_prev;
                d = g.dx;
            }
            let row = inputs[t] * self.embedding.cols();
            grads.embedding.data_mut()[row..row + self.embedding.cols()]
                .iter_mut()
                .zip(&d)
                .for_each(|(g, v)| *g += v);
        }
        Ok(loss)
    }
}
