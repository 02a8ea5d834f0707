//! Manual-gradient training of small recurrent models on toy tasks.
//!
//! Every model is embedding → recurrent stack → softmax. Only the recurrent
//! input/recurrent matrices are compressed, so runs under different schemes
//! differ only in those matrices. Optimization is plain SGD with global
//! gradient-norm clipping and a step decay of the learning rate.

pub mod cell;
pub mod grad;
pub mod model;
pub mod tasks;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compress::{self, rng_from_seed, uniform_scaled, InitScheme, InitSpec};
use crate::error::{Error, Result};
use crate::format;
use crate::matrix::{CompressedMatrix, DenseMatrix};
use crate::planner::{self, StructurePlan};
use crate::rnn::{CellKind, RnnLayerWeights};

pub use cell::{step_backward, LayerGrads, StepInputGrads};
pub use grad::{
    csr_matvec_grad, dense_matvec_grad, hmf_matvec_grad, lmf_matvec_grad, matvec_grad,
    matvec_grad_accumulate, GradBundle,
};
pub use model::{LossSum, Model, ModelGrads};
pub use tasks::{bundled_corpus, generate_corpus, CharCorpus, CopyTask, Sequence};

/// Compression applied to one recurrent weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatrixScheme {
    Dense,
    Hmf { cf: f64, k: usize },
    Lmf { cf: f64 },
    /// Trained dense, pruned once by magnitude part-way, then fine-tuned sparse.
    Pruned { cf: f64 },
}

impl MatrixScheme {
    /// Plan for an `m x n` matrix. Pruned matrices start dense.
    fn initial_plan(&self, m: usize, n: usize) -> Result<StructurePlan> {
        match *self {
            Self::Dense | Self::Pruned { .. } => Ok(planner::dense_plan(m, n)),
            Self::Hmf { cf, k } => planner::solve_j_given_k(m, n, cf, k),
            Self::Lmf { cf } => planner::solve_lmf_rank(m, n, cf),
        }
    }
}

/// Whole-model compression choice, as compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelScheme {
    Dense,
    Hmf { cf: f64, k: usize },
    Lmf { cf: f64 },
    Pruned { cf: f64 },
    /// Uncompressed model with its hidden size shrunk to the compressed budget.
    Small { cf: f64 },
}

impl ModelScheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Hmf { .. } => "hmf",
            Self::Lmf { .. } => "lmf",
            Self::Pruned { .. } => "pruned",
            Self::Small { .. } => "small",
        }
    }

    pub fn cf(&self) -> f64 {
        match *self {
            Self::Dense => 1.0,
            Self::Hmf { cf, .. } | Self::Lmf { cf } | Self::Pruned { cf } | Self::Small { cf } => cf,
        }
    }

    pub fn parse(name: &str, cf: f64, k: usize) -> Result<Self> {
        Ok(match name.trim().to_ascii_lowercase().as_str() {
            "dense" => Self::Dense,
            "hmf" | "hlf" => Self::Hmf { cf, k },
            "lmf" => Self::Lmf { cf },
            "pruned" | "prune" | "csr" => Self::Pruned { cf },
            "small" | "sb" | "small-baseline" => Self::Small { cf },
            other => return Err(Error::Invalid(format!("unknown scheme `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    /// Next-character prediction. `corpus = None` uses the bundled text.
    CharLm {
        corpus: Option<PathBuf>,
        train_chars: usize,
        val_chars: usize,
    },
    /// Reproduce `length` symbols after a delimiter.
    Copy {
        alphabet: usize,
        length: usize,
        train_seqs: usize,
        val_seqs: usize,
    },
}

impl Task {
    pub fn char_lm() -> Self {
        Self::CharLm {
            corpus: None,
            train_chars: 20_000,
            val_chars: 5_000,
        }
    }

    pub fn copy() -> Self {
        Self::Copy {
            alphabet: 8,
            length: 5,
            train_seqs: 400,
            val_seqs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub task: Task,
    pub cell: CellKind,
    pub hidden: usize,
    pub embed: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate is divided by this factor each epoch once `decay_after`
    /// epochs have passed.
    pub lr_decay: f64,
    pub decay_after: usize,
    pub clip: f64,
    pub bptt: usize,
    pub seed: u64,
    pub w_in: MatrixScheme,
    pub w_rec: MatrixScheme,
    /// Initialization of the compressed recurrent matrices.
    pub init: InitScheme,
    /// The whole-model scheme this spec was built from, for reporting.
    pub scheme: ModelScheme,
}

impl TrainSpec {
    /// Defaults for `task`: the copy task uses a smaller learning rate and
    /// more epochs than character modelling.
    pub fn new(task: Task, seed: u64) -> Self {
        let copy = matches!(task, Task::Copy { .. });
        Self {
            task,
            cell: CellKind::Lstm,
            hidden: 64,
            embed: 64,
            layers: 1,
            epochs: if copy { 50 } else { 15 },
            lr: if copy { 0.3 } else { 1.0 },
            lr_decay: 1.2,
            decay_after: if copy { 30 } else { 4 },
            clip: 5.0,
            bptt: 32,
            seed,
            w_in: MatrixScheme::Dense,
            w_rec: MatrixScheme::Dense,
            init: InitScheme::UniformScaled,
            scheme: ModelScheme::Dense,
        }
    }

    /// Applies `scheme` to both recurrent matrices of every layer. A small
    /// baseline instead shrinks `hidden` to the compressed budget.
    pub fn with_scheme(mut self, scheme: ModelScheme) -> Result<Self> {
        let (w_in, w_rec) = match scheme {
            ModelScheme::Dense => (MatrixScheme::Dense, MatrixScheme::Dense),
            ModelScheme::Hmf { cf, k } => (MatrixScheme::Hmf { cf, k }, MatrixScheme::Hmf { cf, k }),
            ModelScheme::Lmf { cf } => (MatrixScheme::Lmf { cf }, MatrixScheme::Lmf { cf }),
            ModelScheme::Pruned { cf } => (MatrixScheme::Pruned { cf }, MatrixScheme::Pruned { cf }),
            ModelScheme::Small { cf } => {
                self.hidden =
                    planner::solve_small_baseline(self.cell, self.hidden, self.embed, self.layers, cf)?;
                (MatrixScheme::Dense, MatrixScheme::Dense)
            }
        };
        self.w_in = w_in;
        self.w_rec = w_rec;
        self.scheme = scheme;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 || self.layers == 0 || self.bptt == 0 {
            return Err(Error::Invalid("hidden, embed, layers and bptt must be positive".into()));
        }
        if !(self.lr > 0.0 && self.clip > 0.0 && self.lr_decay >= 1.0) {
            return Err(Error::Invalid("lr and clip must be positive, lr_decay >= 1".into()));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        self.lr / self.lr_decay.powi(epoch.saturating_sub(self.decay_after) as i32)
    }

    /// Recurrent parameters of the model this spec trains (after pruning
    /// for pruned schemes).
    pub fn recurrent_params(&self) -> Result<usize> {
        let count = |scheme: &MatrixScheme, m: usize, n: usize| -> Result<usize> {
            Ok(match *scheme {
                MatrixScheme::Pruned { cf } => planner::solve_csr_nnz(m, n, cf)?.param_count(),
                ref other => other.initial_plan(m, n)?.param_count(),
            })
        };
        let g = self.cell.gates() * self.hidden;
        (0..self.layers).try_fold(0, |acc, l| {
            let input = if l == 0 { self.embed } else { self.hidden };
            Ok(acc + count(&self.w_in, g, input)? + count(&self.w_rec, g, self.hidden)? + g)
        })
    }

    /// Epoch (0-based) at whose start pruned matrices are sparsified.
    pub fn prune_epoch(&self) -> usize {
        self.epochs / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub spec: TrainSpec,
    /// Row 0 holds the losses of the untrained model.
    pub history: Vec<EpochRecord>,
    pub model: Model,
    /// Character vocabulary of char-LM runs.
    pub vocab: Option<Vec<char>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub val_loss: f64,
    pub perplexity: f64,
}

/// `exp(mean NLL)`
pub fn perplexity(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

pub fn evaluate(run: &TrainRun) -> Metrics {
    let last = run.history.last().expect("history always has the initial row");
    Metrics {
        val_loss: last.val_loss,
        perplexity: last.perplexity,
    }
}

enum Data {
    Text { train: Vec<usize>, val: Vec<usize> },
    Copy { task: CopyTask, train_seqs: usize, val: Vec<Sequence> },
}

fn load_data(spec: &TrainSpec) -> Result<(Data, usize, Option<Vec<char>>)> {
    match &spec.task {
        Task::CharLm {
            corpus,
            train_chars,
            val_chars,
        } => {
            let owned;
            let text = match corpus {
                Some(p) => {
                    owned = std::fs::read_to_string(p)?;
                    owned.as_str()
                }
                None => bundled_corpus(),
            };
            let c = CharCorpus::from_text(text)?;
            let split = c.tokens.len() * 9 / 10;
            let (tr, va) = c.tokens.split_at(split);
            if tr.len() < 2 || va.len() < 2 {
                return Err(Error::Invalid("corpus too short to split".into()));
            }
            let train = tr[..(*train_chars + 1).min(tr.len())].to_vec();
            let val = va[..(*val_chars + 1).min(va.len())].to_vec();
            let vocab = c.vocab.len();
            Ok((Data::Text { train, val }, vocab, Some(c.vocab)))
        }
        Task::Copy {
            alphabet,
            length,
            train_seqs,
            val_seqs,
        } => {
            if *alphabet == 0 || *length == 0 {
                return Err(Error::Invalid("copy task needs a non-empty alphabet and length".into()));
            }
            let task = CopyTask {
                alphabet: *alphabet,
                length: *length,
            };
            let val = task.dataset(*val_seqs, spec.seed ^ 0xC0FF_EE00);
            Ok((
                Data::Copy {
                    task,
                    train_seqs: *train_seqs,
                    val,
                },
                task.vocab_size(),
                None,
            ))
        }
    }
}

fn init_matrix(
    scheme: &MatrixScheme,
    init: InitScheme,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<CompressedMatrix<f64>> {
    let plan = scheme.initial_plan(m, n)?;
    compress::init_from_plan(&plan, InitSpec { scheme: init, seed })
}

/// Builds the untrained model described by `spec` for a vocabulary of `vocab` tokens.
pub fn init_model(spec: &TrainSpec, vocab: usize) -> Result<Model> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let embedding = uniform_scaled(vocab, spec.embed, &mut rng);
    let g = spec.cell.gates() * spec.hidden;
    let mut layers = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        let input = if l == 0 { spec.embed } else { spec.hidden };
        let s = spec.seed.wrapping_add(1000 * (l as u64 + 1));
        let w_in = init_matrix(&spec.w_in, spec.init, g, input, s)?;
        let w_rec = init_matrix(&spec.w_rec, spec.init, g, spec.hidden, s + 1)?;
        let mut bias = vec![0.0; g];
        if spec.cell == CellKind::Lstm {
            bias[spec.hidden..2 * spec.hidden].iter_mut().for_each(|b| *b = 1.0);
        }
        layers.push(RnnLayerWeights::new(spec.cell, w_in, w_rec, bias)?);
    }
    let out_w = uniform_scaled(vocab, spec.hidden, &mut rng);
    Ok(Model {
        embedding,
        layers,
        out_w,
        out_b: vec![0.0; vocab],
    })
}

fn prune_layers(model: &mut Model, spec: &TrainSpec) -> Result<()> {
    for layer in &mut model.layers {
        for (w, scheme) in [(&mut layer.w_in, &spec.w_in), (&mut layer.w_rec, &spec.w_rec)] {
            if let (MatrixScheme::Pruned { cf }, CompressedMatrix::Dense(d)) = (scheme, &*w) {
                *w = compress::magnitude_prune(d, *cf)?.into();
            }
        }
    }
    Ok(())
}

fn sgd_step(model: &mut Model, grads: &ModelGrads, lr: f64, clip: f64) {
    let norm = grads.norm();
    let scale = if norm > clip { clip / norm } else { 1.0 };
    for (p, g) in model.blocks_mut().into_iter().zip(grads.blocks()) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * scale * gv;
        }
    }
}

fn diverged(epoch: usize, what: &str, v: f64) -> Error {
    Error::Divergence {
        epoch,
        detail: format!("{what} loss became {v}"),
    }
}

fn eval_split(model: &Model, data: &Data, train_side: bool, bptt: usize) -> Result<f64> {
    let mut total = LossSum::default();
    match data {
        Data::Text { train, val } => {
            let toks = if train_side { train } else { val };
            let mut states = model.zero_states();
            for start in (0..toks.len() - 1).step_by(bptt) {
                let end = (start + bptt).min(toks.len() - 1);
                let targets: Vec<Option<usize>> = toks[start + 1..end + 1].iter().map(|&t| Some(t)).collect();
                total.add(model.eval(&toks[start..end], &targets, &mut states)?);
            }
        }
        Data::Copy { val, .. } => {
            for seq in val {
                let mut states = model.zero_states();
                total.add(model.eval(&seq.inputs, &seq.targets, &mut states)?);
            }
        }
    }
    Ok(total.mean())
}

fn train_epoch(model: &mut Model, data: &Data, spec: &TrainSpec, epoch: usize) -> Result<f64> {
    let lr = spec.lr_at(epoch);
    let mut grads = ModelGrads::zeros_like(model);
    let mut total = LossSum::default();
    let mut update = |model: &mut Model, inputs: &[usize], targets: &[Option<usize>], states: &mut Vec<_>| {
        grads.clear();
        let loss = model.forward_backward(inputs, targets, states, &mut grads)?;
        if !loss.nll.is_finite() || !grads.norm().is_finite() {
            return Err(diverged(epoch + 1, "training", loss.nll));
        }
        sgd_step(model, &grads, lr, spec.clip);
        total.add(loss);
        Ok(())
    };
    match data {
        Data::Text { train, .. } => {
            let mut states = model.zero_states();
            for start in (0..train.len() - 1).step_by(spec.bptt) {
                let end = (start + spec.bptt).min(train.len() - 1);
                let targets: Vec<Option<usize>> = train[start + 1..end + 1].iter().map(|&t| Some(t)).collect();
                update(model, &train[start..end], &targets, &mut states)?;
            }
        }
        Data::Copy { task, train_seqs, .. } => {
            let mut rng = rng_from_seed(spec.seed.wrapping_mul(31).wrapping_add(epoch as u64 + 1));
            for _ in 0..*train_seqs {
                let seq = task.sample(&mut rng);
                let mut states = model.zero_states();
                update(model, &seq.inputs, &seq.targets, &mut states)?;
            }
        }
    }
    Ok(total.mean())
}

/// Trains the model described by `spec`. Deterministic for a given spec.
pub fn train_toy(spec: &TrainSpec) -> Result<TrainRun> {
    spec.validate()?;
    let (data, vocab_size, vocab) = load_data(spec)?;
    let mut model = init_model(spec, vocab_size)?;
    if spec.epochs == 0 {
        prune_layers(&mut model, spec)?;
    }
    let record = |epoch, train_loss: f64, model: &Model| -> Result<EpochRecord> {
        let val_loss = eval_split(model, &data, false, spec.bptt)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, "validation", val_loss));
        }
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            perplexity: perplexity(val_loss),
        })
    };
    let initial_train = eval_split(&model, &data, true, spec.bptt)?;
    let mut history = vec![record(0, initial_train, &model)?];
    for epoch in 0..spec.epochs {
        if epoch == spec.prune_epoch() {
            prune_layers(&mut model, spec)?;
        }
        let train_loss = train_epoch(&mut model, &data, spec, epoch)?;
        history.push(record(epoch + 1, train_loss, &model)?);
    }
    Ok(TrainRun {
        spec: spec.clone(),
        history,
        model,
        vocab,
    })
}

/// Fails unless the recurrent parameter counts of `a` and `b` differ by
/// less than `tolerance` (a fraction of the larger count).
pub fn check_iso_parameters(a: &TrainSpec, b: &TrainSpec, tolerance: f64) -> Result<()> {
    planner::check_iso_parameters(a.recurrent_params()?, b.recurrent_params()?, tolerance)
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,perplexity";

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// File names of one layer's weight blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub w_in: String,
    pub w_rec: String,
    pub bias: String,
}

/// Written next to `train.csv`; references the CMX1 weight blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scheme: String,
    pub cf: f64,
    pub seed: u64,
    pub cell: CellKind,
    pub recurrent_params: usize,
    pub total_params: usize,
    pub final_val_loss: f64,
    pub final_perplexity: f64,
    pub vocab: Option<String>,
    pub embedding: String,
    pub layers: Vec<LayerManifest>,
    pub out_w: String,
    pub out_b: String,
    pub spec: TrainSpec,
}

fn vector_blob(v: &[f64]) -> CompressedMatrix<f64> {
    CompressedMatrix::Dense(DenseMatrix::new(1, v.len(), v.to_vec()).expect("finite vector"))
}

impl TrainRun {
    /// Writes `train.csv`, `manifest.json` and the weight blobs into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<RunManifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_history_csv(dir.join("train.csv"), &self.history)?;
        let blob = |name: String, m: &CompressedMatrix<f64>| -> Result<String> {
            format::write_file(dir.join(&name), m)?;
            Ok(name)
        };
        let layers = self
            .model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(LayerManifest {
                    w_in: blob(format!("layer{i}.w_in.cmx"), &l.w_in)?,
                    w_rec: blob(format!("layer{i}.w_rec.cmx"), &l.w_rec)?,
                    bias: blob(format!("layer{i}.bias.cmx"), &vector_blob(&l.bias))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = evaluate(self);
        let manifest = RunManifest {
            scheme: self.spec.scheme.name().into(),
            cf: self.spec.scheme.cf(),
            seed: self.spec.seed,
            cell: self.spec.cell,
            recurrent_params: self.model.recurrent_param_count(),
            total_params: self.model.param_count(),
            final_val_loss: m.val_loss,
            final_perplexity: m.perplexity,
            vocab: self.vocab.as_ref().map(|v| v.iter().collect()),
            embedding: blob("embedding.cmx".into(), &self.model.embedding.clone().into())?,
            layers,
            out_w: blob("out_w.cmx".into(), &self.model.out_w.clone().into())?,
            out_b: blob("out_b.cmx".into(), &vector_blob(&self.model.out_b))?,
            spec: self.spec.clone(),
        };
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<RunManifest> {
    let f = std::fs::File::open(dir.as_ref().join("manifest.json"))?;
    Ok(serde_json::from_reader(f)?)
}

/// Rebuilds the trained model from a saved run directory.
pub fn load_model(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let man = read_manifest(dir)?;
    let load = |name: &str| -> Result<CompressedMatrix<f64>> { Ok(format::read_file(dir.join(name))?.to_f64()) };
    let dense = |name: &str| -> Result<DenseMatrix<f64>> {
        match load(name)? {
            CompressedMatrix::Dense(d) => Ok(d),
            other => Err(Error::Format(format!("{name}: expected dense, got {}", other.representation()))),
        }
    };
    let layers = man
        .layers
        .iter()
        .map(|l| {
            RnnLayerWeights::new(man.cell, load(&l.w_in)?, load(&l.w_rec)?, dense(&l.bias)?.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model {
        embedding: dense(&man.embedding)?,
        layers,
        out_w: dense(&man.out_w)?,
        out_b: dense(&man.out_b)?.into_data(),
    })
}
