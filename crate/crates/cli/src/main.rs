use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hmf::bench::{self, BenchSpec, Kernel};
use hmf::compress::{self, InitScheme};
use hmf::format::{self, AnyMatrix};
use hmf::planner::{self, Scheme};
use hmf::train::{self, ModelScheme, Task, TrainSpec};
use hmf::{CellKind, CompressedMatrix, Representation};

mod config;
mod report;

/// Plan, build, verify, benchmark and train hybrid-factorized matrices.
#[derive(Parser, Debug)]
#[command(name = "hmf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rank reachable by low-rank and hybrid structures at given compression factors.
    Plan(PlanArgs),
    /// Compress a dense matrix (or a random one) into a CMX1 file.
    Factorize(FactorizeArgs),
    /// Compare a representation's product against its reconstructed dense matrix.
    Check(CheckArgs),
    /// Measure batch-1 latency and write bench.csv.
    Bench(BenchArgs),
    /// Train a small recurrent model under one compression scheme.
    Train(TrainArgs),
    /// Join benchmark speedups with training losses.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct PlanArgs {
    /// Flat `key = value` file of defaults for these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Compression factors; fractions such as 5/3 are accepted.
    #[arg(long, value_delimiter = ',', default_value = "5/4,5/3,5/2,5")]
    cf: Vec<String>,
    /// Inner rank of the hybrid plan in the `k` columns.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Also write the table as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct FactorizeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dense CMX1 matrix to compress. Without it a scaled-uniform random
    /// `m x n` matrix is drawn from `--seed`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// hmf, lmf or csr.
    #[arg(long, default_value = "hmf")]
    scheme: Representation,
    #[arg(long, default_value = "2.5")]
    cf: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Store single-precision values.
    #[arg(long)]
    f32: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct CheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CMX1 file to check. Without it a random instance is generated.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "hmf")]
    scheme: Representation,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value = "2.5")]
    cf: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random input vectors to try.
    #[arg(long, default_value_t = 10)]
    trials: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sizes as `n` (square) or `MxN`.
    #[arg(long, value_delimiter = ',', default_value = "512,1024")]
    dims: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2.5,5")]
    cf: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "dense,hmf,lmf,csr")]
    repr: Vec<Representation>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// matvec, or lstm for a full LSTM step with hidden size `n`.
    #[arg(long, default_value = "matvec")]
    kernel: Kernel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Do not request CPU affinity.
    #[arg(long)]
    no_pin: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// char-lm or copy.
    #[arg(long, default_value = "char-lm")]
    task: String,
    /// dense, hmf, lmf, pruned or small.
    #[arg(long, default_value = "dense")]
    scheme: String,
    #[arg(long, default_value = "2.5")]
    cf: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden size of the uncompressed reference model.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    cell: Option<CellKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    decay_after: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    bptt: Option<usize>,
    /// uniform-scaled or svd-split.
    #[arg(long)]
    init: Option<String>,
    /// Text file to model instead of the bundled corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train_chars: Option<usize>,
    #[arg(long)]
    val_chars: Option<usize>,
    #[arg(long)]
    alphabet: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    train_seqs: Option<usize>,
    #[arg(long)]
    val_seqs: Option<usize>,
    #[arg(long, default_value = "train-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// bench.csv written by `hmf bench`.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Run directories, or directories containing them.
    #[arg(long, value_delimiter = ',', required = true)]
    runs: Vec<PathBuf>,
    /// Also write the report CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_cfs(list: &[String]) -> Result<Vec<f64>> {
    list.iter().map(|s| Ok(planner::parse_cf(s)?)).collect()
}

fn print_effective_config(matches: &clap::ArgMatches) {
    let Some((name, sub)) = matches.subcommand() else {
        return;
    };
    let cmd = Cli::command();
    let Some(sub_cmd) = cmd.find_subcommand(name) else {
        return;
    };
    println!("# hmf {name}");
    for arg in sub_cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if id == "config" || id == "help" {
            continue;
        }
        if let Ok(Some(raw)) = sub.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            if !vals.is_empty() {
                println!("# {} = {}", id.replace('_', "-"), vals.join(","));
            }
        }
    }
}

fn cmd_plan(a: &PlanArgs) -> Result<u8> {
    let cfs = parse_cfs(&a.cf)?;
    let rows = planner::rank_range_table(a.m, a.n, &cfs, a.k)?;
    let hj = |p: &planner::StructurePlan| match p.scheme {
        Scheme::Hmf { j, k } => (j, k),
        _ => unreachable!("hybrid plan"),
    };
    let lr = |p: &planner::StructurePlan| match p.scheme {
        Scheme::Lmf { r } => r,
        _ => unreachable!("low-rank plan"),
    };
    println!(
        "{:>8} {:>6} {:>9} {:>9} {:>7} {:>9} {:>12}",
        "cf",
        "lmf_r",
        "hmf_max_j",
        "max_rank",
        format!("j(k={})", a.k),
        format!("rank(k={})", a.k),
        "min_rank"
    );
    let mut csv = String::from(
        "cf,lmf_r,lmf_cf,hmf_max_j,hmf_max_rank,hmf_max_cf,k,hmf_j,hmf_rank,hmf_cf,hmf_min_j,hmf_min_k,hmf_min_rank\n",
    );
    for row in &rows {
        let (mj, _) = hj(&row.hmf_max);
        let (cj, ck) = hj(&row.hmf_chosen);
        let (nj, nk) = hj(&row.hmf_min);
        println!(
            "{:>8.4} {:>6} {:>9} {:>9} {:>7} {:>9} {:>12}",
            row.cf,
            lr(&row.lmf),
            mj,
            row.hmf_max.max_rank,
            cj,
            row.hmf_chosen.max_rank,
            format!("{} ({nj},{nk})", row.hmf_min.max_rank)
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.cf,
            lr(&row.lmf),
            row.lmf.achieved_cf,
            mj,
            row.hmf_max.max_rank,
            row.hmf_max.achieved_cf,
            ck,
            cj,
            row.hmf_chosen.max_rank,
            row.hmf_chosen.achieved_cf,
            nj,
            nk,
            row.hmf_min.max_rank
        ));
    }
    println!(
        "# min_rank: smallest j+k over the sweep k = 1, 2, ... (largest feasible j per k), \
         counting only splits with j >= 1; j = 0 is plain low rank, reported as lmf_r"
    );
    println!();
    print!("{csv}");
    if let Some(p) = &a.csv {
        std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(0)
}

fn cmd_factorize(a: &FactorizeArgs) -> Result<u8> {
    let cf = planner::parse_cf(&a.cf)?;
    let dense = match &a.input {
        Some(p) => match format::read_file(p)?.to_f64() {
            CompressedMatrix::Dense(d) => d,
            other => bail!("{} holds a {} matrix; factorize expects dense input", p.display(), other.representation()),
        },
        None => compress::uniform_scaled(a.m, a.n, &mut compress::rng_from_seed(a.seed)),
    };
    let (m, n) = (dense.rows(), dense.cols());
    let out: CompressedMatrix<f64> = match a.scheme {
        Representation::Hmf => {
            let plan = planner::solve_j_given_k(m, n, cf, a.k)?;
            let Scheme::Hmf { j, k } = plan.scheme else { unreachable!() };
            compress::split_hmf_from_dense(&dense, j, k)?.into()
        }
        Representation::Lmf => {
            let plan = planner::solve_lmf_rank(m, n, cf)?;
            let Scheme::Lmf { r } = plan.scheme else { unreachable!() };
            compress::factorize_lmf_svd(&dense, r)?.into()
        }
        Representation::Csr => compress::magnitude_prune(&dense, cf)?.into(),
        Representation::Dense => dense.clone().into(),
    };
    let recon = out.reconstruct();
    let err = recon.data().iter().zip(dense.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        / dense.frobenius().max(f64::MIN_POSITIVE);
    if a.f32 {
        format::write_file(&a.out, &out.cast::<f32>())?;
    } else {
        format::write_file(&a.out, &out)?;
    }
    println!("representation = {}", out.representation());
    println!("shape = {m}x{n}");
    println!("params = {}", out.param_count());
    println!("achieved_cf = {:.6}", out.compression_factor());
    println!("relative_frobenius_error = {err:.6e}");
    println!("wrote {}", a.out.display());
    Ok(0)
}

const CHECK_TOL: f64 = 1e-8;

fn cmd_check(a: &CheckArgs) -> Result<u8> {
    let m: CompressedMatrix<f64> = match &a.input {
        Some(p) => {
            let any = format::read_file(p)?;
            if let AnyMatrix::F32(_) = any {
                println!("# single-precision file; values are widened to f64");
            }
            any.to_f64()
        }
        None => {
            let cf = planner::parse_cf(&a.cf)?;
            let plan = match a.scheme {
                Representation::Dense => planner::dense_plan(a.m, a.n),
                Representation::Hmf => planner::solve_j_given_k(a.m, a.n, cf, a.k)?,
                Representation::Lmf => planner::solve_lmf_rank(a.m, a.n, cf)?,
                Representation::Csr => planner::solve_csr_nnz(a.m, a.n, cf)?,
            };
            compress::init_from_plan(&plan, compress::InitSpec::uniform(a.seed))?
        }
    };
    let dense = m.reconstruct();
    let mut rng = compress::rng_from_seed(a.seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..a.trials.max(1) {
        let x = compress::gaussian::<f64, _>(1, m.cols(), &mut rng).into_data();
        let got = m.matvec(&x)?;
        let want = dense.matvec(&x)?;
        let scale = want.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let diff = got.iter().zip(&want).fold(0.0f64, |s, (g, w)| s.max((g - w).abs()));
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    println!("representation = {}", m.representation());
    println!("shape = {}x{}", m.rows(), m.cols());
    println!("max_relative_error = {worst:e}");
    if worst <= CHECK_TOL {
        println!("ok (tolerance {CHECK_TOL:e})");
        Ok(0)
    } else {
        println!("FAILED (tolerance {CHECK_TOL:e})");
        Ok(1)
    }
}

fn parse_dims(list: &[String]) -> Result<Vec<(usize, usize)>> {
    list.iter()
        .map(|s| {
            let s = s.trim();
            let (m, n) = s.split_once(['x', 'X']).unwrap_or((s, s));
            let m: usize = m.trim().parse().with_context(|| format!("bad dims `{s}`"))?;
            let n: usize = n.trim().parse().with_context(|| format!("bad dims `{s}`"))?;
            Ok((m, n))
        })
        .collect()
}

fn cmd_bench(a: &BenchArgs) -> Result<u8> {
    let spec = BenchSpec {
        dims: parse_dims(&a.dims)?,
        cfs: parse_cfs(&a.cf)?,
        ks: a.k.clone(),
        representations: a.repr.clone(),
        warmup: a.warmup,
        reps: a.reps,
        seed: a.seed,
        kernel: a.kernel,
        pin: !a.no_pin,
    };
    let outcome = bench::run_bench(&spec)?;
    println!(
        "{:>6} {:>6} {:>6} {:>6} {:>14} {:>12} {:>12} {:>8}",
        "repr", "m", "n", "cf", "structure", "median_ns", "p90_ns", "speedup"
    );
    for r in &outcome.records {
        let structure = match (r.j, r.k, r.r, r.nnz) {
            (Some(j), Some(k), _, _) => format!("j={j},k={k}"),
            (_, _, Some(r), _) => format!("r={r}"),
            (_, _, _, Some(nnz)) => format!("nnz={nnz}"),
            _ => "-".into(),
        };
        println!(
            "{:>6} {:>6} {:>6} {:>6} {:>14} {:>12.1} {:>12.1} {:>8.3}",
            r.representation.name(),
            r.m,
            r.n,
            r.cf,
            structure,
            r.median_ns,
            r.p90_ns,
            r.speedup
        );
    }
    println!("checksum = {:.6e}", outcome.checksum);
    println!("timer_resolution_ns = {}", outcome.timer_resolution.as_nanos());
    println!("pinned = {}", outcome.pinned);
    for path in bench::emit_results(&a.out, &outcome.records)? {
        println!("wrote {}", path.display());
    }
    if outcome.is_reliable() {
        Ok(0)
    } else {
        for w in &outcome.unreliable {
            eprintln!("unreliable: {w}");
        }
        Err(hmf::Error::Measurement(format!(
            "{} configuration(s) below the timer reliability threshold",
            outcome.unreliable.len()
        ))
        .into())
    }
}

fn build_train_spec(a: &TrainArgs) -> Result<TrainSpec> {
    let task = match a.task.trim().to_ascii_lowercase().as_str() {
        "char-lm" | "charlm" | "lm" => {
            let Task::CharLm { train_chars, val_chars, .. } = Task::char_lm() else { unreachable!() };
            Task::CharLm {
                corpus: a.corpus.clone(),
                train_chars: a.train_chars.unwrap_or(train_chars),
                val_chars: a.val_chars.unwrap_or(val_chars),
            }
        }
        "copy" => {
            let Task::Copy { alphabet, length, train_seqs, val_seqs } = Task::copy() else { unreachable!() };
            Task::Copy {
                alphabet: a.alphabet.unwrap_or(alphabet),
                length: a.length.unwrap_or(length),
                train_seqs: a.train_seqs.unwrap_or(train_seqs),
                val_seqs: a.val_seqs.unwrap_or(val_seqs),
            }
        }
        other => bail!("unknown task `{other}` (expected char-lm or copy)"),
    };
    let mut spec = TrainSpec::new(task, a.seed);
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { spec.$field = v; } )* };
    }
    set!(epochs, hidden, embed, layers, cell, lr, lr_decay, decay_after, clip, bptt);
    if let Some(init) = &a.init {
        spec.init = match init.as_str() {
            "uniform-scaled" | "uniform" => InitScheme::UniformScaled,
            "svd-split" | "svd" => InitScheme::SvdSplit,
            other => bail!("unknown init `{other}`"),
        };
    }
    let cf = planner::parse_cf(&a.cf)?;
    Ok(spec.with_scheme(ModelScheme::parse(&a.scheme, cf, a.k)?)?)
}

fn cmd_train(a: &TrainArgs) -> Result<u8> {
    let spec = build_train_spec(a)?;
    println!("# hidden = {} (effective)", spec.hidden);
    println!("# recurrent_params = {}", spec.recurrent_params()?);
    let run = train::train_toy(&spec)?;
    println!("{:>5} {:>12} {:>12} {:>12}", "epoch", "train_loss", "val_loss", "perplexity");
    for r in &run.history {
        println!("{:>5} {:>12.6} {:>12.6} {:>12.4}", r.epoch, r.train_loss, r.val_loss, r.perplexity);
    }
    let man = run.save(&a.out)?;
    println!("final_val_loss = {:.6}", man.final_val_loss);
    println!("final_perplexity = {:.6}", man.final_perplexity);
    println!("wrote {}", a.out.display());
    Ok(0)
}

fn cmd_report(a: &ReportArgs) -> Result<u8> {
    let bench = match &a.bench {
        Some(p) => bench::parse_bench_csv(p)?,
        None => Vec::new(),
    };
    let dirs = report::find_runs(&a.runs)?;
    if dirs.is_empty() {
        bail!("no training runs (manifest.json) found");
    }
    let runs = dirs.iter().map(|d| report::load_run(d)).collect::<Result<Vec<_>>>()?;
    let csv = report::report_csv(&report::build_report(&runs, &bench));
    print!("{csv}");
    if let Some(p) = &a.out {
        std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hmf::Error>() {
            return match e {
                hmf::Error::Measurement(_) => 2,
                hmf::Error::Planning(_) => 3,
                hmf::Error::Format(_) => 4,
                hmf::Error::Divergence { .. } => 5,
                _ => 1,
            };
        }
    }
    1
}

fn run(args: Vec<OsString>) -> Result<u8> {
    let cmd = Cli::command();
    let args = config::expand_args(&cmd, args)?;
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return Ok(code);
        }
    };
    let cli = Cli::from_arg_matches(&matches)?;
    print_effective_config(&matches);
    match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Factorize(a) => cmd_factorize(a),
        Command::Check(a) => cmd_check(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Train(a) => cmd_train(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    // Exit quietly when stdout is a closed pipe (e.g. `hmf plan | head`).
    #[cfg(unix)]
    // SAFETY: installing the default disposition for SIGPIPE before any
    // other thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(std::env::args_os().collect()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
