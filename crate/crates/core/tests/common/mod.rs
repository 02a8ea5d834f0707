//! Random instances and oracle checks shared by the core test targets and
//! the acceptance suite.
#![allow(dead_code)]

use hmf::compress::{gaussian, magnitude_prune, random_hmf, rng_from_seed};
use hmf::rnn::{step, step_traced};
use hmf::train::{matvec_grad, step_backward, LayerGrads, Model, ModelGrads};
use hmf::{CellKind, CompressedMatrix, CsrMatrix, HmfMatrix, LmfMatrix, Representation, RnnLayerWeights, RnnState};
use hmf_oracle as oracle;
use rand::Rng;

/// Finite-difference step.
pub const FD_EPS: f64 = 1e-5;
/// Largest accepted relative gradient error.
pub const FD_TOL: f64 = 1e-5;
/// Denominator floor of the relative gradient error, so that entries that
/// are zero up to rounding are compared absolutely.
pub const FD_FLOOR: f64 = 1e-3;
/// Largest accepted relative error of a product against the oracle.
pub const ORACLE_TOL: f64 = 1e-9;

pub fn vector(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    gaussian::<f64, _>(1, len, rng).into_data()
}

pub fn hmf_instance(rng: &mut impl Rng, max_dim: usize) -> HmfMatrix<f64> {
    let m = rng.random_range(2..=max_dim);
    let n = rng.random_range(1..=max_dim);
    let j = rng.random_range(0..m);
    let k = rng.random_range(1..=(m - j).min(n));
    random_hmf(m, n, j, k, rng, |r, c, g| gaussian(r, c, g)).unwrap()
}

pub fn lmf_instance(rng: &mut impl Rng, max_dim: usize) -> LmfMatrix<f64> {
    let m = rng.random_range(1..=max_dim);
    let n = rng.random_range(1..=max_dim);
    let r = rng.random_range(1..=m.min(n));
    LmfMatrix::new(gaussian(m, r, rng), gaussian(r, n, rng)).unwrap()
}

pub fn csr_instance(rng: &mut impl Rng, max_dim: usize) -> CsrMatrix<f64> {
    let m = rng.random_range(1..=max_dim);
    let n = rng.random_range(1..=max_dim);
    let density: f64 = rng.random_range(0.0..1.0);
    let a = gaussian::<f64, _>(m, n, rng);
    let keep: Vec<bool> = (0..m * n).map(|_| rng.random_bool(density)).collect();
    CsrMatrix::from_dense_masked(&a, |i, j, _| keep[i * n + j]).unwrap()
}

pub fn instance(rep: Representation, rng: &mut impl Rng, max_dim: usize) -> CompressedMatrix<f64> {
    match rep {
        Representation::Dense => {
            let (m, n) = (rng.random_range(1..=max_dim), rng.random_range(1..=max_dim));
            gaussian(m, n, rng).into()
        }
        Representation::Hmf => hmf_instance(rng, max_dim).into(),
        Representation::Lmf => lmf_instance(rng, max_dim).into(),
        Representation::Csr => csr_instance(rng, max_dim).into(),
    }
}

pub fn any_instance(rng: &mut impl Rng, max_dim: usize) -> CompressedMatrix<f64> {
    let rep = Representation::ALL[rng.random_range(0..4)];
    instance(rep, rng, max_dim)
}

/// Dense form computed by the oracle from the raw blocks.
pub fn oracle_dense(a: &CompressedMatrix<f64>) -> Vec<f64> {
    match a {
        CompressedMatrix::Dense(d) => d.data().to_vec(),
        CompressedMatrix::Hmf(h) => {
            oracle::hybrid_dense(h.j(), h.cols(), h.top().data(), h.rows() - h.j(), h.k(), h.b().data(), h.c().data())
        }
        CompressedMatrix::Lmf(l) => oracle::matmul(l.rows(), l.rank(), l.cols(), l.u().data(), l.v().data()),
        CompressedMatrix::Csr(c) => oracle::csr_dense(c.rows(), c.cols(), c.row_offsets(), c.col_indices(), c.values()),
    }
}

/// Worst relative error of `a x` and of `reconstruct(a)` against the oracle.
pub fn oracle_error(a: &CompressedMatrix<f64>, rng: &mut impl Rng) -> f64 {
    let x = vector(a.cols(), rng);
    let dense = oracle_dense(a);
    let want = oracle::matvec(a.rows(), a.cols(), &dense, &x);
    let got = a.matvec(&x).unwrap();
    oracle::max_relative_error(&got, &want).max(oracle::max_relative_error(a.reconstruct().data(), &dense))
}

/// Expected multiply-accumulates of one product, from the closed forms.
pub fn formula_macs(a: &CompressedMatrix<f64>) -> u64 {
    let (m, n) = (a.rows() as u64, a.cols() as u64);
    match a {
        CompressedMatrix::Dense(_) => m * n,
        CompressedMatrix::Hmf(h) => oracle::hybrid_macs(m, n, h.j() as u64, h.k() as u64),
        CompressedMatrix::Lmf(l) => oracle::low_rank_macs(m, n, l.rank() as u64),
        CompressedMatrix::Csr(c) => c.nnz() as u64,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tracks the worst relative error and where it occurred.
#[derive(Debug, Default, Clone)]
pub struct Worst {
    pub error: f64,
    pub at: String,
    pub checked: usize,
}

impl Worst {
    fn add(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = oracle::relative_error(analytic, numeric, FD_FLOOR);
        self.checked += 1;
        if e > self.error {
            self.error = e;
            self.at = format!("{}: analytic {analytic} numeric {numeric}", what());
        }
    }

    pub fn merge(&mut self, other: Worst) {
        self.checked += other.checked;
        if other.error > self.error {
            self.error = other.error;
            self.at = other.at;
        }
    }
}

fn random_rep(rng: &mut impl Rng) -> Representation {
    Representation::ALL[rng.random_range(0..4)]
}

fn sized_instance(rep: Representation, m: usize, n: usize, rng: &mut impl Rng) -> CompressedMatrix<f64> {
    match rep {
        Representation::Dense => gaussian(m, n, rng).into(),
        Representation::Hmf => {
            let j = rng.random_range(0..m);
            let k = rng.random_range(1..=(m - j).min(n));
            random_hmf(m, n, j, k, rng, |r, c, g| gaussian(r, c, g)).unwrap().into()
        }
        Representation::Lmf => {
            let r = rng.random_range(1..=m.min(n));
            LmfMatrix::new(gaussian(m, r, rng), gaussian(r, n, rng)).unwrap().into()
        }
        Representation::Csr => magnitude_prune(&gaussian::<f64, _>(m, n, rng), 2.0).unwrap().into(),
    }
}

/// Gradients of `g . (A x)` with respect to every stored parameter of `A`
/// and to `x`, against central differences.
pub fn matvec_gradient_check(rep: Representation, seed: u64, instances: u64) -> Worst {
    let mut worst = Worst::default();
    for inst in 0..instances {
        let mut rng = rng_from_seed(seed + inst);
        let m = rng.random_range(2..9);
        let n = rng.random_range(1..9);
        let mut a = sized_instance(rep, m, n, &mut rng);
        let mut x = vector(n, &mut rng);
        let g = vector(m, &mut rng);
        let grads = matvec_grad(&a, &x, &g).unwrap();
        assert_eq!(grads.dweights.representation(), rep);
        let analytic: Vec<f64> = grads.dweights.param_blocks().concat();
        let mut idx = 0;
        for b in 0..a.param_blocks().len() {
            for i in 0..a.param_blocks()[b].len() {
                let mut block = a.param_blocks()[b].to_vec();
                let numeric = oracle::central_difference(&mut block, i, FD_EPS, |p| {
                    a.param_blocks_mut()[b].copy_from_slice(p);
                    dot(&g, &a.matvec(&x).unwrap())
                });
                a.param_blocks_mut()[b].copy_from_slice(&block);
                worst.add(|| format!("{rep} instance {inst} block {b} entry {i}"), analytic[idx], numeric);
                idx += 1;
            }
        }
        for i in 0..n {
            let numeric = oracle::central_difference(&mut x, i, FD_EPS, |x| dot(&g, &a.matvec(x).unwrap()));
            worst.add(|| format!("{rep} instance {inst} dx {i}"), grads.dx[i], numeric);
        }
    }
    worst
}

fn random_layer(kind: CellKind, rng: &mut impl Rng) -> RnnLayerWeights<f64> {
    let hidden = rng.random_range(1..5);
    let input = rng.random_range(1..5);
    let g = kind.gates() * hidden;
    let rep_in = random_rep(rng);
    let w_in = sized_instance(rep_in, g, input, rng);
    let rep_rec = random_rep(rng);
    let w_rec = sized_instance(rep_rec, g, hidden, rng);
    let mut w = RnnLayerWeights::new(kind, w_in, w_rec, vector(g, rng)).unwrap();
    // Keep pre-activations away from saturation.
    for m in [&mut w.w_in, &mut w.w_rec] {
        for block in m.param_blocks_mut() {
            block.iter_mut().for_each(|v| *v *= 0.5);
        }
    }
    w
}

/// Scalar probe `dh . h' + dc . c'` of one step.
fn probe(w: &RnnLayerWeights<f64>, x: &[f64], s: &RnnState<f64>, dh: &[f64], dc: &[f64]) -> f64 {
    let out = step(w, x, s).unwrap();
    dot(dh, &out.h) + dot(dc, &out.c)
}

/// Parameter block `b` of a layer in the same order as `LayerGrads::blocks`.
fn layer_block(w: &mut RnnLayerWeights<f64>, b: usize) -> &mut [f64] {
    let n_in = w.w_in.param_blocks().len();
    let n_rec = w.w_rec.param_blocks().len();
    if b < n_in {
        w.w_in.param_blocks_mut().swap_remove(b)
    } else if b < n_in + n_rec {
        w.w_rec.param_blocks_mut().swap_remove(b - n_in)
    } else {
        &mut w.bias
    }
}

/// Gradients of one full LSTM/GRU step (weights of every representation,
/// input, previous state) against central differences.
pub fn cell_gradient_check(kind: CellKind, seed: u64, instances: u64) -> Worst {
    let mut worst = Worst::default();
    for inst in 0..instances {
        let mut rng = rng_from_seed(seed + inst);
        let w = random_layer(kind, &mut rng);
        let hd = w.hidden();
        let lstm = kind == CellKind::Lstm;
        let mut x = vector(w.input_dim(), &mut rng);
        let s = RnnState {
            h: vector(hd, &mut rng),
            c: if lstm { vector(hd, &mut rng) } else { Vec::new() },
        };
        let dh = vector(hd, &mut rng);
        let dc = if lstm { vector(hd, &mut rng) } else { Vec::new() };

        let (_, trace) = step_traced(&w, &x, &s).unwrap();
        let mut grads = LayerGrads::zeros_like(&w);
        let inputs = step_backward(&w, &trace, &dh, &dc, &mut grads).unwrap();
        let analytic: Vec<f64> = grads.blocks().concat();

        let mut idx = 0;
        for b in 0..grads.blocks().len() {
            for i in 0..grads.blocks()[b].len() {
                let mut wp = w.clone();
                let mut block = layer_block(&mut wp, b).to_vec();
                let numeric = oracle::central_difference(&mut block, i, FD_EPS, |p| {
                    layer_block(&mut wp, b).copy_from_slice(p);
                    probe(&wp, &x, &s, &dh, &dc)
                });
                worst.add(|| format!("{kind} instance {inst} weight block {b} entry {i}"), analytic[idx], numeric);
                idx += 1;
            }
        }
        for i in 0..x.len() {
            let numeric = oracle::central_difference(&mut x, i, FD_EPS, |x| probe(&w, x, &s, &dh, &dc));
            worst.add(|| format!("{kind} instance {inst} dx {i}"), inputs.dx[i], numeric);
        }
        for i in 0..hd {
            let mut h = s.h.clone();
            let numeric = oracle::central_difference(&mut h, i, FD_EPS, |h| {
                let s = RnnState { h: h.to_vec(), c: s.c.clone() };
                probe(&w, &x, &s, &dh, &dc)
            });
            worst.add(|| format!("{kind} instance {inst} dh_prev {i}"), inputs.dh_prev[i], numeric);
            if lstm {
                let mut c = s.c.clone();
                let numeric = oracle::central_difference(&mut c, i, FD_EPS, |c| {
                    let s = RnnState { h: s.h.clone(), c: c.to_vec() };
                    probe(&w, &x, &s, &dh, &dc)
                });
                worst.add(|| format!("{kind} instance {inst} dc_prev {i}"), inputs.dc_prev[i], numeric);
            }
        }
    }
    worst
}

fn tiny_model(kind: CellKind, layers: usize, rng: &mut impl Rng) -> Model {
    let (vocab, embed, hidden) = (5, 3, 3);
    let g = kind.gates() * hidden;
    let layers = (0..layers)
        .map(|l| {
            let input = if l == 0 { embed } else { hidden };
            let rep_in = random_rep(rng);
            let w_in = sized_instance(rep_in, g, input, rng);
            let rep_rec = random_rep(rng);
            let w_rec = sized_instance(rep_rec, g, hidden, rng);
            RnnLayerWeights::new(kind, w_in, w_rec, vector(g, rng)).unwrap()
        })
        .collect();
    Model {
        embedding: gaussian(vocab, embed, rng),
        layers,
        out_w: gaussian(vocab, hidden, rng),
        out_b: vector(vocab, rng),
    }
}

/// Gradient of the mean next-token loss over one window, for every model
/// parameter, against central differences.
pub fn model_gradient_check(seed: u64, instances: u64) -> Worst {
    let mut worst = Worst::default();
    for inst in 0..instances {
        let mut rng = rng_from_seed(seed + inst);
        let kind = if inst % 2 == 0 { CellKind::Lstm } else { CellKind::Gru };
        let model = tiny_model(kind, 1 + (inst as usize / 2) % 2, &mut rng);
        let inputs: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
        let targets: Vec<Option<usize>> = (0..6).map(|t| (t % 3 != 1).then(|| rng.random_range(0..5))).collect();
        let start = model.zero_states();

        let mut grads = ModelGrads::zeros_like(&model);
        model.forward_backward(&inputs, &targets, &mut start.clone(), &mut grads).unwrap();
        let analytic: Vec<f64> = grads.blocks().concat();

        let loss = |m: &Model| m.eval(&inputs, &targets, &mut start.clone()).unwrap().mean();
        let mut idx = 0;
        for b in 0..grads.blocks().len() {
            for i in 0..grads.blocks()[b].len() {
                let mut mp = model.clone();
                let mut block = mp.blocks_mut()[b].to_vec();
                let numeric = oracle::central_difference(&mut block, i, FD_EPS, |p| {
                    mp.blocks_mut()[b].copy_from_slice(p);
                    loss(&mp)
                });
                worst.add(|| format!("{kind} model {inst} block {b} entry {i}"), analytic[idx], numeric);
                idx += 1;
            }
        }
    }
    worst
}
