//! LSTM and GRU forward steps over weights in any representation.
//!
//! Gate blocks are stacked row-wise in the order `i, f, g, o` (LSTM) and
//! `z, r, n` (GRU). Each of the input and recurrent matrices is one
//! `gates * hidden` tall matrix, compressed as a single unit.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::CompressedMatrix;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            Self::Lstm => 4,
            Self::Gru => 3,
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lstm" => Ok(Self::Lstm),
            "gru" => Ok(Self::Gru),
            other => Err(Error::Invalid(format!("unknown cell kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Lstm => "lstm",
            Self::Gru => "gru",
        })
    }
}

/// Weights of one recurrent layer. The bias is always dense.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayerWeights<T> {
    kind: CellKind,
    hidden: usize,
    pub w_in: CompressedMatrix<T>,
    pub w_rec: CompressedMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> RnnLayerWeights<T> {
    pub fn new(
        kind: CellKind,
        w_in: CompressedMatrix<T>,
        w_rec: CompressedMatrix<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let hidden = w_rec.cols();
        let rows = kind.gates() * hidden;
        if hidden == 0 {
            return Err(Error::Shape("hidden size must be positive".into()));
        }
        if w_rec.rows() != rows {
            return Err(shape_err("recurrent matrix rows", rows, w_rec.rows()));
        }
        if w_in.rows() != rows {
            return Err(shape_err("input matrix rows", rows, w_in.rows()));
        }
        if bias.len() != rows {
            return Err(shape_err("bias length", rows, bias.len()));
        }
        Ok(Self {
            kind,
            hidden,
            w_in,
            w_rec,
            bias,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w_in.param_count() + self.w_rec.param_count() + self.bias.len()
    }

    pub fn zero_state(&self) -> RnnState<T> {
        RnnState::zeros(self.kind, self.hidden)
    }

    /// The same layer with both matrices replaced by their dense reconstructions.
    pub fn densified(&self) -> Self {
        Self {
            kind: self.kind,
            hidden: self.hidden,
            w_in: self.w_in.reconstruct().into(),
            w_rec: self.w_rec.reconstruct().into(),
            bias: self.bias.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> RnnLayerWeights<U> {
        RnnLayerWeights {
            kind: self.kind,
            hidden: self.hidden,
            w_in: self.w_in.cast(),
            w_rec: self.w_rec.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Hidden state, plus the cell state for LSTM layers (empty for GRU).
#[derive(Debug, Clone, PartialEq)]
pub struct RnnState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> RnnState<T> {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        Self {
            h: vec![T::ZERO; hidden],
            c: match kind {
                CellKind::Lstm => vec![T::ZERO; hidden],
                CellKind::Gru => Vec::new(),
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).all(|v| v.is_finite())
    }
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub enum StepTrace<T> {
    Lstm {
        x: Vec<T>,
        h_prev: Vec<T>,
        /// Activated gates `i, f, g, o` stacked.
        gates: Vec<T>,
        c_prev: Vec<T>,
        tanh_c: Vec<T>,
    },
    Gru {
        x: Vec<T>,
        /// Activated gates `z, r, n` stacked.
        gates: Vec<T>,
        /// Recurrent contribution to the candidate, `(W_rec h)[n]`.
        rec_n: Vec<T>,
        h_prev: Vec<T>,
    },
}

/// `(W_in x + bias, W_rec h)`, each `gates * hidden` long.
pub fn gate_preactivations<T: Scalar>(
    w: &RnnLayerWeights<T>,
    x: &[T],
    h: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    if h.len() != w.hidden {
        return Err(shape_err("hidden state length", w.hidden, h.len()));
    }
    let mut a = w.w_in.matvec(x)?;
    for (ai, bi) in a.iter_mut().zip(&w.bias) {
        *ai += *bi;
    }
    let u = w.w_rec.matvec(h)?;
    Ok((a, u))
}

fn check_kind<T: Scalar>(w: &RnnLayerWeights<T>, s: &RnnState<T>, kind: CellKind) -> Result<()> {
    if w.kind != kind {
        return Err(Error::Shape(format!("expected a {kind} layer, got {}", w.kind)));
    }
    if kind == CellKind::Lstm && s.c.len() != w.hidden {
        return Err(shape_err("cell state length", w.hidden, s.c.len()));
    }
    Ok(())
}

pub fn lstm_step_traced<T: Scalar>(
    w: &RnnLayerWeights<T>,
    x: &[T],
    s: &RnnState<T>,
) -> Result<(RnnState<T>, StepTrace<T>)> {
    check_kind(w, s, CellKind::Lstm)?;
    let hd = w.hidden;
    let (mut pre, u) = gate_preactivations(w, x, &s.h)?;
    for (p, ui) in pre.iter_mut().zip(&u) {
        *p += *ui;
    }
    for (idx, p) in pre.iter_mut().enumerate() {
        *p = if (2 * hd..3 * hd).contains(&idx) {
            p.tanh()
        } else {
            sigmoid(*p)
        };
    }
    let gates = pre;
    let (i, f, g, o) = (&gates[..hd], &gates[hd..2 * hd], &gates[2 * hd..3 * hd], &gates[3 * hd..]);
    let c: Vec<T> = (0..hd).map(|q| f[q] * s.c[q] + i[q] * g[q]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<T> = (0..hd).map(|q| o[q] * tanh_c[q]).collect();
    let trace = StepTrace::Lstm {
        x: x.to_vec(),
        h_prev: s.h.clone(),
        gates,
        c_prev: s.c.clone(),
        tanh_c,
    };
    Ok((RnnState { h, c }, trace))
}

pub fn gru_step_traced<T: Scalar>(
    w: &RnnLayerWeights<T>,
    x: &[T],
    s: &RnnState<T>,
) -> Result<(RnnState<T>, StepTrace<T>)> {
    check_kind(w, s, CellKind::Gru)?;
    let hd = w.hidden;
    let (a, u) = gate_preactivations(w, x, &s.h)?;
    let mut gates = vec![T::ZERO; 3 * hd];
    for q in 0..2 * hd {
        gates[q] = sigmoid(a[q] + u[q]);
    }
    let rec_n = u[2 * hd..].to_vec();
    for q in 0..hd {
        gates[2 * hd + q] = (a[2 * hd + q] + gates[hd + q] * rec_n[q]).tanh();
    }
    let (z, n) = (&gates[..hd], &gates[2 * hd..]);
    let h: Vec<T> = (0..hd)
        .map(|q| (T::ONE - z[q]) * n[q] + z[q] * s.h[q])
        .collect();
    let trace = StepTrace::Gru {
        x: x.to_vec(),
        gates,
        rec_n,
        h_prev: s.h.clone(),
    };
    Ok((RnnState { h, c: Vec::new() }, trace))
}

/// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`
pub fn lstm_step<T: Scalar>(w: &RnnLayerWeights<T>, x: &[T], s: &RnnState<T>) -> Result<RnnState<T>> {
    lstm_step_traced(w, x, s).map(|(s, _)| s)
}

/// `h' = (1 - z) ⊙ n + z ⊙ h` with `n = tanh(W_in x + b + r ⊙ W_rec h)` on the candidate block.
pub fn gru_step<T: Scalar>(w: &RnnLayerWeights<T>, x: &[T], s: &RnnState<T>) -> Result<RnnState<T>> {
    gru_step_traced(w, x, s).map(|(s, _)| s)
}

pub fn step<T: Scalar>(w: &RnnLayerWeights<T>, x: &[T], s: &RnnState<T>) -> Result<RnnState<T>> {
    match w.kind {
        CellKind::Lstm => lstm_step(w, x, s),
        CellKind::Gru => gru_step(w, x, s),
    }
}

pub fn step_traced<T: Scalar>(
    w: &RnnLayerWeights<T>,
    x: &[T],
    s: &RnnState<T>,
) -> Result<(RnnState<T>, StepTrace<T>)> {
    match w.kind {
        CellKind::Lstm => lstm_step_traced(w, x, s),
        CellKind::Gru => gru_step_traced(w, x, s),
    }
}

/// Result of unrolling a layer stack over a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun<T> {
    /// Top-layer hidden state after each input.
    pub outputs: Vec<Vec<T>>,
    /// Final state of each layer.
    pub states: Vec<RnnState<T>>,
}

/// Applies the stacked layers left to right over `xs`, starting from
/// `initial` (zeros when `None`).
pub fn run_sequence<T: Scalar>(
    layers: &[RnnLayerWeights<T>],
    xs: &[Vec<T>],
    initial: Option<&[RnnState<T>]>,
) -> Result<SequenceRun<T>> {
    for pair in layers.windows(2) {
        if pair[1].input_dim() != pair[0].hidden() {
            return Err(shape_err("stacked layer input", pair[0].hidden(), pair[1].input_dim()));
        }
    }
    let mut states: Vec<RnnState<T>> = match initial {
        Some(s) if s.len() != layers.len() => {
            return Err(shape_err("initial state count", layers.len(), s.len()))
        }
        Some(s) => s.to_vec(),
        None => layers.iter().map(|l| l.zero_state()).collect(),
    };
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        let mut input = x.clone();
        for (layer, state) in layers.iter().zip(states.iter_mut()) {
            *state = step(layer, &input, state)?;
            input.clone_from(&state.h);
        }
        outputs.push(input);
    }
    Ok(SequenceRun { outputs, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{gaussian, random_hmf, rng_from_seed};
    use crate::matrix::DenseMatrix;

    fn zero_layer(kind: CellKind, hidden: usize, input: usize) -> RnnLayerWeights<f64> {
        let g = kind.gates() * hidden;
        RnnLayerWeights::new(
            kind,
            DenseMatrix::zeros(g, input).into(),
            DenseMatrix::zeros(g, hidden).into(),
            vec![0.0; g],
        )
        .unwrap()
    }

    fn hmf_layer(kind: CellKind, hidden: usize, input: usize, seed: u64) -> RnnLayerWeights<f64> {
        let mut rng = rng_from_seed(seed);
        let g = kind.gates() * hidden;
        let scale = |r, c, rng: &mut _| {
            let mut m = gaussian::<f64, _>(r, c, rng);
            m.data_mut().iter_mut().for_each(|v| *v *= 0.3);
            m
        };
        let w_in = random_hmf(g, input, g / 2, 2, &mut rng, scale).unwrap();
        let w_rec = random_hmf(g, hidden, g / 3, 3, &mut rng, scale).unwrap();
        let bias = gaussian::<f64, _>(1, g, &mut rng).into_data();
        RnnLayerWeights::new(kind, w_in.into(), w_rec.into(), bias).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300) || (x - y).abs() < 1e-15)
    }

    #[test]
    fn all_zero_lstm_stays_zero() {
        let w = zero_layer(CellKind::Lstm, 5, 3);
        let s = lstm_step(&w, &[0.0; 3], &w.zero_state()).unwrap();
        assert_eq!(s.h, vec![0.0; 5]);
        assert_eq!(s.c, vec![0.0; 5]);
    }

    #[test]
    fn zero_gru_stays_zero() {
        let w = zero_layer(CellKind::Gru, 4, 2);
        let s = gru_step(&w, &[1.0, -1.0], &w.zero_state()).unwrap();
        assert_eq!(s.h, vec![0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_copies_state() {
        let mut w = hmf_layer(CellKind::Gru, 4, 3, 1);
        for b in &mut w.bias[..4] {
            *b = 1e3;
        }
        let s = RnnState {
            h: vec![0.5, -0.25, 0.125, 0.9],
            c: vec![],
        };
        let out = gru_step(&w, &[0.1, 0.2, 0.3], &s).unwrap();
        assert_eq!(out.h, s.h);
    }

    #[test]
    fn output_shapes() {
        let w = hmf_layer(CellKind::Lstm, 64, 32, 2);
        let s = lstm_step(&w, &[0.1; 32], &w.zero_state()).unwrap();
        assert_eq!((s.h.len(), s.c.len()), (64, 64));
    }

    #[test]
    fn hybrid_weights_match_reconstructed_dense() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            let w = hmf_layer(kind, 6, 5, 7);
            let d = w.densified();
            let x = [0.3, -0.7, 1.1, 0.0, 0.5];
            let s0 = RnnState {
                h: vec![0.1, -0.2, 0.3, -0.4, 0.5, -0.6],
                c: if kind == CellKind::Lstm { vec![0.2; 6] } else { vec![] },
            };
            let a = step(&w, &x, &s0).unwrap();
            let b = step(&d, &x, &s0).unwrap();
            assert!(close(&a.h, &b.h, 1e-9) && close(&a.c, &b.c, 1e-9));
        }
    }

    #[test]
    fn wrong_kind_and_shapes_are_rejected() {
        let w = zero_layer(CellKind::Lstm, 3, 2);
        assert!(gru_step(&w, &[0.0; 2], &w.zero_state()).is_err());
        assert!(lstm_step(&w, &[0.0; 3], &w.zero_state()).is_err());
        assert!(RnnLayerWeights::<f64>::new(
            CellKind::Lstm,
            DenseMatrix::zeros(12, 2).into(),
            DenseMatrix::zeros(11, 3).into(),
            vec![0.0; 12]
        )
        .is_err());
    }

    #[test]
    fn sequence_edge_cases() {
        let w = hmf_layer(CellKind::Lstm, 4, 3, 3);
        let layers = [w.clone()];
        let empty = run_sequence::<f64>(&layers, &[], None).unwrap();
        assert_eq!(empty.states, vec![w.zero_state()]);
        assert!(empty.outputs.is_empty());

        let x = vec![0.2, -0.1, 0.4];
        let one = run_sequence(&layers, &[x.clone()], None).unwrap();
        assert_eq!(one.states[0], lstm_step(&w, &x, &w.zero_state()).unwrap());
    }

    #[test]
    fn stacked_hybrid_matches_dense_over_two_layers() {
        let l0 = hmf_layer(CellKind::Lstm, 6, 4, 10);
        let l1 = hmf_layer(CellKind::Lstm, 6, 6, 11);
        let hybrid = [l0.clone(), l1.clone()];
        let dense = [l0.densified(), l1.densified()];
        let mut rng = rng_from_seed(99);
        let xs: Vec<Vec<f64>> = (0..20).map(|_| gaussian::<f64, _>(1, 4, &mut rng).into_data()).collect();
        let a = run_sequence(&hybrid, &xs, None).unwrap();
        let b = run_sequence(&dense, &xs, None).unwrap();
        for (p, q) in a.outputs.iter().zip(&b.outputs) {
            assert!(close(p, q, 1e-8));
        }
    }

    #[test]
    fn mismatched_stack_is_rejected() {
        let l0 = hmf_layer(CellKind::Lstm, 6, 4, 10);
        let l1 = hmf_layer(CellKind::Lstm, 5, 4, 11);
        assert!(run_sequence(&[l0, l1], &[vec![0.0; 4]], None).is_err());
    }
}
