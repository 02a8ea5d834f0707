//! Backward passes of single LSTM/GRU steps.

use crate::error::{shape_err, Error, Result};
use crate::matrix::CompressedMatrix;
use crate::rnn::{CellKind, RnnLayerWeights, StepTrace};
use crate::scalar::Scalar;
use crate::train::grad::matvec_grad_accumulate;

/// Gradient accumulators mirroring one layer's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub w_in: CompressedMatrix<T>,
    pub w_rec: CompressedMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerGrads<T> {
    pub fn zeros_like(w: &RnnLayerWeights<T>) -> Self {
        Self {
            w_in: w.w_in.zeros_like(),
            w_rec: w.w_rec.zeros_like(),
            bias: vec![T::ZERO; w.bias.len()],
        }
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        let mut v = self.w_in.param_blocks();
        v.extend(self.w_rec.param_blocks());
        v.push(&self.bias);
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.w_in.param_blocks_mut();
        v.extend(self.w_rec.param_blocks_mut());
        v.push(&mut self.bias);
        v
    }
}

/// Gradients flowing out of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInputGrads<T> {
    pub dx: Vec<T>,
    pub dh_prev: Vec<T>,
    /// Empty for GRU layers.
    pub dc_prev: Vec<T>,
}

/// Back-propagates `dh` (and `dc` for LSTM; pass an empty slice for GRU)
/// through the step recorded in `trace`, adding weight gradients to `grads`.
pub fn step_backward<T: Scalar>(
    w: &RnnLayerWeights<T>,
    trace: &StepTrace<T>,
    dh: &[T],
    dc: &[T],
    grads: &mut LayerGrads<T>,
) -> Result<StepInputGrads<T>> {
    let hd = w.hidden();
    if dh.len() != hd {
        return Err(shape_err("hidden gradient length", hd, dh.len()));
    }
    match (w.kind(), trace) {
        (
            CellKind::Lstm,
            StepTrace::Lstm {
                x,
                h_prev,
                gates,
                c_prev,
                tanh_c,
            },
        ) => {
            if dc.len() != hd {
                return Err(shape_err("cell gradient length", hd, dc.len()));
            }
            let (i, f, g, o) = (&gates[..hd], &gates[hd..2 * hd], &gates[2 * hd..3 * hd], &gates[3 * hd..]);
            let mut dpre = vec![T::ZERO; 4 * hd];
            let mut dc_prev = vec![T::ZERO; hd];
            for q in 0..hd {
                let d_o = dh[q] * tanh_c[q];
                let dct = dc[q] + dh[q] * o[q] * (T::ONE - tanh_c[q] * tanh_c[q]);
                dpre[q] = dct * g[q] * i[q] * (T::ONE - i[q]);
                dpre[hd + q] = dct * c_prev[q] * f[q] * (T::ONE - f[q]);
                dpre[2 * hd + q] = dct * i[q] * (T::ONE - g[q] * g[q]);
                dpre[3 * hd + q] = d_o * o[q] * (T::ONE - o[q]);
                dc_prev[q] = dct * f[q];
            }
            let mut dx = vec![T::ZERO; w.input_dim()];
            let mut dh_prev = vec![T::ZERO; hd];
            matvec_grad_accumulate(&w.w_in, x, &dpre, &mut grads.w_in, &mut dx)?;
            matvec_grad_accumulate(&w.w_rec, h_prev, &dpre, &mut grads.w_rec, &mut dh_prev)?;
            for (b, d) in grads.bias.iter_mut().zip(&dpre) {
                *b += *d;
            }
            Ok(StepInputGrads { dx, dh_prev, dc_prev })
        }
        (
            CellKind::Gru,
            StepTrace::Gru {
                x,
                gates,
                rec_n,
                h_prev,
            },
        ) => {
            let (z, r, n) = (&gates[..hd], &gates[hd..2 * hd], &gates[2 * hd..]);
            let mut d_in = vec![T::ZERO; 3 * hd];
            let mut d_rec = vec![T::ZERO; 3 * hd];
            let mut dh_prev = vec![T::ZERO; hd];
            for q in 0..hd {
                let dz = dh[q] * (h_prev[q] - n[q]);
                let dn = dh[q] * (T::ONE - z[q]);
                dh_prev[q] = dh[q] * z[q];
                let dpre_n = dn * (T::ONE - n[q] * n[q]);
                let dr = dpre_n * rec_n[q];
                let dpre_z = dz * z[q] * (T::ONE - z[q]);
                let dpre_r = dr * r[q] * (T::ONE - r[q]);
                d_in[q] = dpre_z;
                d_in[hd + q] = dpre_r;
                d_in[2 * hd + q] = dpre_n;
                d_rec[q] = dpre_z;
                d_rec[hd + q] = dpre_r;
                d_rec[2 * hd + q] = dpre_n * r[q];
            }
            let mut dx = vec![T::ZERO; w.input_dim()];
            matvec_grad_accumulate(&w.w_in, x, &d_in, &mut grads.w_in, &mut dx)?;
            matvec_grad_accumulate(&w.w_rec, h_prev, &d_rec, &mut grads.w_rec, &mut dh_prev)?;
            for (b, d) in grads.bias.iter_mut().zip(&d_in) {
                *b += *d;
            }
            Ok(StepInputGrads {
                dx,
                dh_prev,
                dc_prev: Vec::new(),
            })
        }
        _ => Err(Error::Shape("trace does not match the layer's cell kind".into())),
    }
}
