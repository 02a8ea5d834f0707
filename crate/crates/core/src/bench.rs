//! Batch-1 latency measurement of matrix-vector products and recurrent steps.
//!
//! Each configuration is timed in samples of a fixed number of back-to-back
//! calls; the per-call latency of a sample is its elapsed time divided by
//! that count. Medians and the 10th/90th percentiles are reported.

use std::hint::black_box;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::compress::{magnitude_prune, rng_from_seed, uniform_scaled, InitSpec};
use crate::error::{Error, Result};
use crate::matrix::{CompressedMatrix, DenseMatrix, Representation};
use crate::planner::{self, Scheme};
use crate::rnn::{self, CellKind, RnnLayerWeights, RnnState};

pub const BENCH_HEADER: &str = "representation,m,n,cf,j,k,r,nnz,median_ns,p10_ns,p90_ns,speedup";
pub const MIN_TIMED_REPS: usize = 30;
pub const MIN_WARMUP_REPS: usize = 5;
/// Roughly this many dense multiply-accumulates go into one timed sample.
const SAMPLE_WORK: usize = 1 << 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// One matrix-vector product with an `m x n` matrix.
    Matvec,
    /// One LSTM step with hidden and input size `n`; every gate matrix
    /// (`4n x n`) uses the representation under test.
    Lstm,
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "matvec" => Ok(Self::Matvec),
            "lstm" => Ok(Self::Lstm),
            other => Err(Error::Invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    /// `(m, n)` pairs. For the LSTM kernel only `n` is used.
    pub dims: Vec<(usize, usize)>,
    pub cfs: Vec<f64>,
    pub ks: Vec<usize>,
    /// Dense is always measured as the speedup reference.
    pub representations: Vec<Representation>,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
    pub kernel: Kernel,
    /// Pin the process to the CPU it starts on.
    pub pin: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            dims: vec![(512, 512), (1024, 1024)],
            cfs: vec![2.5, 5.0],
            ks: vec![1],
            representations: Representation::ALL.to_vec(),
            warmup: 10,
            reps: 50,
            seed: 0,
            kernel: Kernel::Matvec,
            pin: true,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_TIMED_REPS {
            return Err(Error::Invalid(format!(
                "timed reps must be at least {MIN_TIMED_REPS}, got {}",
                self.reps
            )));
        }
        if self.warmup < MIN_WARMUP_REPS {
            return Err(Error::Invalid(format!(
                "warmup reps must be at least {MIN_WARMUP_REPS}, got {}",
                self.warmup
            )));
        }
        if self.dims.is_empty() || self.dims.iter().any(|&(m, n)| m == 0 || n == 0) {
            return Err(Error::Invalid("dims must be a non-empty list of positive sizes".into()));
        }
        let compressed = self.representations.iter().any(|&r| r != Representation::Dense);
        if compressed && self.cfs.is_empty() {
            return Err(Error::Invalid("compressed representations need at least one cf".into()));
        }
        if self.representations.contains(&Representation::Hmf) && self.ks.is_empty() {
            return Err(Error::Invalid("hmf needs at least one k".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub representation: Representation,
    pub m: usize,
    pub n: usize,
    pub cf: f64,
    pub j: Option<usize>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub nnz: Option<usize>,
    pub median_ns: f64,
    pub p10_ns: f64,
    pub p90_ns: f64,
    /// Dense median over this median, for the same dims.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    /// Sum of every timed output; identical across runs with one seed.
    pub checksum: f64,
    /// Smallest observable step of the monotonic clock.
    pub timer_resolution: Duration,
    /// Configurations whose sample time was under 100 timer steps.
    pub unreliable: Vec<String>,
    pub pinned: bool,
}

impl BenchOutcome {
    pub fn is_reliable(&self) -> bool {
        self.unreliable.is_empty()
    }
}

/// Median of the samples; the mean of the two middle values for even counts.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        (s[mid - 1] + s[mid]) / 2.0
    }
}

/// Percentile `p` in `[0, 100]` by linear interpolation between order statistics.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    assert!(!samples.is_empty(), "percentile of no samples");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Smallest positive difference between consecutive clock readings.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Requests that the process stay on the CPU it is currently running on.
#[cfg(target_os = "linux")]
pub fn pin_to_current_cpu() -> bool {
    // SAFETY: sched_getcpu has no preconditions; the cpu_set_t is zeroed
    // before use and only passed by pointer with its exact size.
    unsafe {
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return false;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_to_current_cpu() -> bool {
    false
}

/// Calls per timed sample for an `m x n` configuration.
pub fn inner_iterations(m: usize, n: usize) -> usize {
    SAMPLE_WORK.div_ceil(m * n).max(1)
}

struct Timing {
    samples_ns: Vec<f64>,
    checksum: f64,
}

fn time_samples(warmup: usize, reps: usize, inner: usize, mut call: impl FnMut() -> f32) -> Timing {
    for _ in 0..warmup {
        for _ in 0..inner {
            black_box(call());
        }
    }
    let mut samples_ns = Vec::with_capacity(reps);
    let mut checksum = 0.0;
    for _ in 0..reps {
        let mut out = 0.0f32;
        let start = Instant::now();
        for _ in 0..inner {
            out = black_box(call());
        }
        samples_ns.push(start.elapsed().as_nanos() as f64);
        checksum += out as f64;
    }
    Timing { samples_ns, checksum }
}

/// Structure of one candidate, before timing.
struct Variant {
    representation: Representation,
    cf: f64,
    j: Option<usize>,
    k: Option<usize>,
    r: Option<usize>,
    nnz: Option<usize>,
}

fn build_variant(
    dense: &DenseMatrix<f32>,
    variant: &Variant,
    seed: u64,
) -> Result<CompressedMatrix<f32>> {
    let (m, n) = (dense.rows(), dense.cols());
    let plan_of = |scheme| planner::StructurePlan {
        m,
        n,
        scheme,
        target_cf: variant.cf,
        achieved_cf: variant.cf,
        max_rank: 0,
    };
    let init = InitSpec::uniform(seed);
    Ok(match variant.representation {
        Representation::Dense => dense.clone().into(),
        Representation::Hmf => crate::compress::init_from_plan(
            &plan_of(Scheme::Hmf {
                j: variant.j.unwrap_or(0),
                k: variant.k.unwrap_or(0),
            }),
            init,
        )?,
        Representation::Lmf => crate::compress::init_from_plan(
            &plan_of(Scheme::Lmf {
                r: variant.r.unwrap_or(0),
            }),
            init,
        )?,
        Representation::Csr => magnitude_prune(dense, variant.cf)?.into(),
    })
}

fn variants_for(spec: &BenchSpec, m: usize, n: usize) -> Result<Vec<Variant>> {
    let mut out = vec![Variant {
        representation: Representation::Dense,
        cf: 1.0,
        j: None,
        k: None,
        r: None,
        nnz: None,
    }];
    for &cf in &spec.cfs {
        for &rep in &spec.representations {
            match rep {
                Representation::Dense => {}
                Representation::Hmf => {
                    for &k in &spec.ks {
                        let p = planner::solve_j_given_k(m, n, cf, k)?;
                        let Scheme::Hmf { j, k } = p.scheme else { unreachable!() };
                        out.push(Variant {
                            representation: rep,
                            cf,
                            j: Some(j),
                            k: Some(k),
                            r: None,
                            nnz: None,
                        });
                    }
                }
                Representation::Lmf => {
                    let p = planner::solve_lmf_rank(m, n, cf)?;
                    let Scheme::Lmf { r } = p.scheme else { unreachable!() };
                    out.push(Variant {
                        representation: rep,
                        cf,
                        j: None,
                        k: None,
                        r: Some(r),
                        nnz: None,
                    });
                }
                Representation::Csr => {
                    let p = planner::solve_csr_nnz(m, n, cf)?;
                    let Scheme::Csr { nnz } = p.scheme else { unreachable!() };
                    out.push(Variant {
                        representation: rep,
                        cf,
                        j: None,
                        k: None,
                        r: None,
                        nnz: Some(nnz),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn time_variant(
    spec: &BenchSpec,
    variant: &Variant,
    dense: &[DenseMatrix<f32>; 2],
    x: &[f32],
    inner: usize,
) -> Result<Timing> {
    let seed = spec.seed.wrapping_add(17);
    match spec.kernel {
        Kernel::Matvec => {
            let a = build_variant(&dense[0], variant, seed)?;
            let mut y = vec![0.0f32; a.rows()];
            Ok(time_samples(spec.warmup, spec.reps, inner, || {
                a.matvec_into(black_box(x), &mut y).expect("dims checked");
                y.iter().sum()
            }))
        }
        Kernel::Lstm => {
            let hidden = dense[0].cols();
            let w_in = build_variant(&dense[0], variant, seed)?;
            let w_rec = build_variant(&dense[1], variant, seed.wrapping_add(1))?;
            let w = RnnLayerWeights::new(CellKind::Lstm, w_in, w_rec, vec![0.0f32; 4 * hidden])?;
            let state = RnnState {
                h: x.to_vec(),
                c: x.to_vec(),
            };
            Ok(time_samples(spec.warmup, spec.reps, inner, || {
                let next = rnn::lstm_step(&w, black_box(x), black_box(&state)).expect("dims checked");
                next.h.iter().sum()
            }))
        }
    }
}

/// Runs every configuration of `spec` single-threaded.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchOutcome> {
    spec.validate()?;
    let pinned = spec.pin && pin_to_current_cpu();
    let resolution = timer_resolution();
    let mut records = Vec::new();
    let mut checksum = 0.0;
    let mut unreliable = Vec::new();
    for (di, &(m, n)) in spec.dims.iter().enumerate() {
        let (m, n) = match spec.kernel {
            Kernel::Matvec => (m, n),
            Kernel::Lstm => (4 * n, n),
        };
        let mut rng = rng_from_seed(spec.seed.wrapping_add(di as u64));
        let dense = [uniform_scaled::<f32, _>(m, n, &mut rng), uniform_scaled::<f32, _>(m, n, &mut rng)];
        let x: Vec<f32> = uniform_scaled::<f32, _>(1, n, &mut rng).into_data();
        let inner = inner_iterations(m, n);
        let mut dense_median = f64::NAN;
        for variant in variants_for(spec, m, n)? {
            let t = time_variant(spec, &variant, &dense, &x, inner)?;
            checksum += t.checksum;
            let sample_median = median(&t.samples_ns);
            if resolution.as_nanos() as f64 > 0.01 * sample_median {
                unreliable.push(format!(
                    "{} {m}x{n} cf {}: timer step {:?} exceeds 1% of the {sample_median:.0} ns sample",
                    variant.representation, variant.cf, resolution
                ));
            }
            let per_call: Vec<f64> = t.samples_ns.iter().map(|s| s / inner as f64).collect();
            let med = median(&per_call);
            if variant.representation == Representation::Dense {
                dense_median = med;
            }
            if variant.representation == Representation::Dense
                && !spec.representations.contains(&Representation::Dense)
            {
                continue;
            }
            records.push(BenchRecord {
                representation: variant.representation,
                m,
                n,
                cf: variant.cf,
                j: variant.j,
                k: variant.k,
                r: variant.r,
                nnz: variant.nnz,
                median_ns: med,
                p10_ns: percentile(&per_call, 10.0),
                p90_ns: percentile(&per_call, 90.0),
                speedup: dense_median / med,
            });
        }
    }
    Ok(BenchOutcome {
        records,
        checksum,
        timer_resolution: resolution,
        unreliable,
        pinned,
    })
}

/// Writes `bench.csv` and one `speedup_<representation>.dat` per
/// representation into `dir`, returning the paths written.
pub fn emit_results(dir: impl AsRef<Path>, records: &[BenchRecord]) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Invalid("no benchmark records to write".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join("bench.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut written = vec![csv_path];
    for rep in Representation::ALL {
        let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.representation == rep).collect();
        if rows.is_empty() {
            continue;
        }
        let path = dir.join(format!("speedup_{rep}.dat"));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        let mut last: Option<(usize, usize, Option<usize>)> = None;
        for r in rows {
            let key = (r.m, r.n, r.k);
            if last != Some(key) {
                if last.is_some() {
                    writeln!(f, "\n")?;
                }
                let k = r.k.map(|k| format!(" k={k}")).unwrap_or_default();
                writeln!(f, "# {rep} m={} n={}{k}\n# cf speedup", r.m, r.n)?;
                last = Some(key);
            }
            writeln!(f, "{} {}", r.cf, r.speedup)?;
        }
        f.flush()?;
        written.push(path);
    }
    Ok(written)
}

pub fn parse_bench_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != BENCH_HEADER {
        return Err(Error::Format(format!("unexpected bench.csv header `{header}`")));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}
