//! Acceptance suite. Prints one `PASS`, `FAIL` or `FLAG` line per criterion
//! followed by indented details, and exits non-zero if any criterion fails.
//! `FLAG` marks a timing result that the benchmark itself reported as
//! unreliable; it is not counted as a failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    cell_gradient_check, hmf_instance, instance, matvec_gradient_check, oracle_error, FD_TOL, ORACLE_TOL,
};
use hmf::bench::{parse_bench_csv, BenchRecord};
use hmf::compress::{gaussian, random_hmf, rng_from_seed};
use hmf::format;
use hmf::matrix::DEFAULT_RANK_TOL;
use hmf::planner;
use hmf::train::{self, ModelScheme, Task, TrainSpec};
use hmf::{numerical_rank, CellKind, CompressedMatrix, Representation};
use hmf_oracle as oracle;
use rand::Rng;

const TABLE_TIME_LIMIT: Duration = Duration::from_secs(1);
const MAC_TIME_LIMIT: Duration = Duration::from_secs(10);
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(30);
const GRADIENT_TIME_LIMIT: Duration = Duration::from_secs(60);
const TRAINING_TIME_LIMIT: Duration = Duration::from_secs(30 * 60);
const MAC_TUPLES: u64 = 200;
const ORACLE_INSTANCES: u64 = 1000;
const RANK_INSTANCES: u64 = 100;
const GRADIENT_INSTANCES: u64 = 50;
const ROUND_TRIP_INSTANCES: u64 = 500;
const ISO_TOLERANCE: f64 = 0.02;
const COPY_LOSS_TARGET: f64 = 0.05;
const COPY_EPOCH_LIMIT: usize = 50;

enum Verdict {
    Pass,
    Fail,
    Flag,
}

struct Outcome {
    verdict: Verdict,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            verdict: Verdict::Pass,
            details: Vec::new(),
        }
    }

    /// Records a sub-check; any false check fails the criterion.
    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        let mark = if ok { "ok  " } else { "FAIL" };
        self.details.push(format!("{mark} {}", detail.into()));
        if !ok {
            self.verdict = Verdict::Fail;
        }
    }

    fn note(&mut self, detail: impl Into<String>) {
        self.details.push(format!("     {}", detail.into()));
    }

    fn flag(&mut self, detail: impl Into<String>) {
        self.details.push(format!("FLAG {}", detail.into()));
        if matches!(self.verdict, Verdict::Pass) {
            self.verdict = Verdict::Flag;
        }
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("wall time {:.2?} (limit {:.0?})", t, limit))
}

fn table_reproduction() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_hmf"))
        .args(["plan", "--m", "256", "--n", "256", "--cf", "5/4,5/3,5/2,5", "--k", "1"])
        .output()
        .expect("hmf binary runs");
    let elapsed = start.elapsed();
    o.check(out.status.success(), format!("plan exit status {:?}", out.status.code()));
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<Vec<usize>> = text
        .lines()
        .skip_while(|l| !l.starts_with("cf,lmf_r"))
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap_or(f64::NAN) as usize).collect())
        .collect();
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
    let (lmf, hmf_max, hmf_min) = (col(1), col(4), col(12));
    o.check(lmf == [102, 76, 51, 25], format!("LMF ranks {lmf:?}, expected [102, 76, 51, 25]"));
    o.check(
        hmf_max == [204, 153, 101, 50],
        format!("HMF max ranks (k=1) {hmf_max:?}, expected [204, 153, 101, 50]"),
    );
    o.check(
        hmf_min == [103, 78, 52, 26],
        format!("HMF lower bounds from the (j,k) sweep {hmf_min:?}, expected [103, 78, 52, 26]"),
    );
    o.check(
        text.contains("# min_rank:"),
        "lower-bound convention note printed with the table",
    );
    o.check(elapsed < TABLE_TIME_LIMIT, format!("plan wall time {elapsed:.2?} (limit 1s)"));
    o
}

fn mac_exactness() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let mut mismatches = 0;
    for t in 0..MAC_TUPLES {
        let mut rng = rng_from_seed(0xAC00 + t);
        let m = rng.random_range(2..=300);
        let n = rng.random_range(1..=300);
        let j = rng.random_range(0..m);
        let k = rng.random_range(1..=(m - j).min(n));
        let h = random_hmf(m, n, j, k, &mut rng, |r, c, g| gaussian::<f64, _>(r, c, g)).unwrap();
        let x = common::vector(n, &mut rng);
        let mut macs = 0;
        h.matvec_counted(&x, &mut macs).unwrap();
        let (mu, nu, ju, ku) = (m as u64, n as u64, j as u64, k as u64);
        let want_macs = oracle::hybrid_macs(mu, nu, ju, ku);
        let want_params = oracle::hybrid_params(mu, nu, ju, ku);
        let plan_params = hmf::planner::StructurePlan {
            m,
            n,
            scheme: hmf::Scheme::Hmf { j, k },
            target_cf: 1.0,
            achieved_cf: 1.0,
            max_rank: 0,
        }
        .param_count() as u64;
        let cf = CompressedMatrix::from(h.clone()).compression_factor();
        if macs != want_macs
            || h.op_count().ops != want_macs
            || h.param_count() as u64 != want_params
            || plan_params != want_params
            || cf != (mu * nu) as f64 / want_params as f64
        {
            mismatches += 1;
            o.note(format!("mismatch at m={m} n={n} j={j} k={k}: counted {macs}, formula {want_macs}"));
        }
    }
    o.check(
        mismatches == 0,
        format!("{MAC_TUPLES} random (m,n,j,k): counted MACs, op counts, parameter counts and cf equal the closed forms ({mismatches} mismatches)"),
    );
    let (ok, msg) = within(MAC_TIME_LIMIT, start);
    o.check(ok, msg);
    o
}

fn oracle_equivalence() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    for (ri, rep) in Representation::ALL.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..ORACLE_INSTANCES {
            let mut rng = rng_from_seed(0x0AC1E + 1_000_000 * ri as u64 + i);
            let a = instance(rep, &mut rng, 64);
            worst = worst.max(oracle_error(&a, &mut rng));
        }
        o.check(
            worst <= ORACLE_TOL,
            format!("{rep}: {ORACLE_INSTANCES} instances, worst relative error {worst:.3e} (limit {ORACLE_TOL:e})"),
        );
    }
    let (ok, msg) = within(ORACLE_TIME_LIMIT, start);
    o.check(ok, msg);
    o
}

fn rank_property() -> Outcome {
    let mut o = Outcome::new();
    let mut bad = 0;
    for i in 0..RANK_INSTANCES {
        let mut rng = rng_from_seed(0x4A4C + i);
        let h = hmf_instance(&mut rng, 64);
        let want = (h.j() + h.k()).min(h.rows()).min(h.cols());
        let dense = h.reconstruct();
        let svd_rank = numerical_rank(&dense, DEFAULT_RANK_TOL).unwrap();
        let elim_rank = oracle::rank_by_elimination(dense.rows(), dense.cols(), dense.data(), 1e-10);
        if svd_rank != want || elim_rank != want {
            bad += 1;
            o.note(format!(
                "{}x{} j={} k={}: svd rank {svd_rank}, elimination rank {elim_rank}, expected {want}",
                h.rows(),
                h.cols(),
                h.j(),
                h.k()
            ));
        }
    }
    o.check(
        bad == 0,
        format!("{RANK_INSTANCES} Gaussian HMF instances (dims <= 64): rank = min(j+k, m, n) by SVD and by elimination ({bad} mismatches)"),
    );
    let mut violations = 0;
    let mut cases = 0;
    let mut tightest = i64::MAX;
    for m in [64, 128, 256, 512] {
        for step in 0..=60 {
            let cf = 1.25 + step as f64 * (5.0 - 1.25) / 60.0;
            let lmf = planner::solve_lmf_rank(m, m, cf).unwrap();
            let hmf = planner::solve_j_given_k(m, m, cf, 1).unwrap();
            cases += 1;
            let slack = hmf.max_rank as i64 - (2 * lmf.max_rank as i64 - 2);
            tightest = tightest.min(slack);
            if slack < 0 {
                violations += 1;
                o.note(format!("m=n={m} cf={cf:.4}: hmf {} < 2*{} - 2", hmf.max_rank, lmf.max_rank));
            }
        }
    }
    o.check(
        violations == 0,
        format!("max_rank(HMF, k=1) >= 2 r(LMF) - 2 on {cases} grid points, m=n in {{64,128,256,512}}, cf in [1.25, 5] (smallest slack {tightest})"),
    );
    o
}

fn gradient_suite() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let runs = [
        ("hmf matvec", matvec_gradient_check(Representation::Hmf, 0x6_0000, GRADIENT_INSTANCES)),
        ("lmf matvec", matvec_gradient_check(Representation::Lmf, 0x6_1000, GRADIENT_INSTANCES)),
        ("dense matvec", matvec_gradient_check(Representation::Dense, 0x6_2000, GRADIENT_INSTANCES)),
        ("csr matvec", matvec_gradient_check(Representation::Csr, 0x6_3000, GRADIENT_INSTANCES)),
        ("lstm step", cell_gradient_check(CellKind::Lstm, 0x6_4000, GRADIENT_INSTANCES)),
        ("gru step", cell_gradient_check(CellKind::Gru, 0x6_5000, GRADIENT_INSTANCES)),
    ];
    for (name, w) in runs {
        o.check(
            w.error < FD_TOL && w.checked > 0,
            format!(
                "{name}: {GRADIENT_INSTANCES} instances, {} partials, worst relative error {:.2e} (limit {FD_TOL:e}){}",
                w.checked,
                w.error,
                if w.error < FD_TOL { String::new() } else { format!(" at {}", w.at) }
            ),
        );
    }
    let (ok, msg) = within(GRADIENT_TIME_LIMIT, start);
    o.check(ok, msg);
    o
}

fn runtime_ordering() -> Outcome {
    let mut o = Outcome::new();
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hmf"))
        .args(["bench", "--dims", "512,1024", "--cf", "2.5,5", "--k", "1", "--reps", "50", "--warmup", "10"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .expect("hmf binary runs");
    let status = out.status.code();
    if !matches!(status, Some(0) | Some(2)) {
        o.check(false, format!("bench exit status {status:?}: {}", String::from_utf8_lossy(&out.stderr)));
        return o;
    }
    let records = parse_bench_csv(dir.path().join("bench.csv")).unwrap();
    let find = |rep: Representation, m: usize, cf: f64| -> Option<&BenchRecord> {
        records.iter().find(|r| r.representation == rep && r.m == m && (r.cf - cf).abs() < 1e-9)
    };
    let mut ordering_ok = true;
    for m in [512, 1024] {
        for cf in [2.5, 5.0] {
            let (Some(h), Some(c)) = (find(Representation::Hmf, m, cf), find(Representation::Csr, m, cf)) else {
                o.check(false, format!("missing rows for m=n={m} cf={cf}"));
                continue;
            };
            let ok = h.median_ns < c.median_ns && h.speedup > 1.0;
            ordering_ok &= ok;
            let line = format!(
                "m=n={m} cf={cf}: hmf median {:.0} ns, csr median {:.0} ns, hmf speedup over dense {:.2}",
                h.median_ns, c.median_ns, h.speedup
            );
            if status == Some(2) {
                o.note(line);
            } else {
                o.check(ok, line);
            }
        }
    }
    if status == Some(2) {
        o.flag(format!(
            "timer reliability check tripped (exit 2); ordering {} but not asserted",
            if ordering_ok { "held" } else { "did not hold" }
        ));
    }
    o.note("absolute speedups are machine-specific; only the ordering is asserted");
    o
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn toy_training() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let seeds = [1u64, 2, 3];
    for cf in [2.5, 5.0] {
        let base = TrainSpec::new(Task::char_lm(), 0);
        let specs = [
            base.clone().with_scheme(ModelScheme::Hmf { cf, k: 1 }).unwrap(),
            base.clone().with_scheme(ModelScheme::Lmf { cf }).unwrap(),
            base.clone().with_scheme(ModelScheme::Small { cf }).unwrap(),
        ];
        let params: Vec<usize> = specs.iter().map(|s| s.recurrent_params().unwrap()).collect();
        let hl_gap = planner::iso_parameter_gap(params[0], params[1]);
        o.check(
            hl_gap < ISO_TOLERANCE,
            format!("cf={cf}: recurrent params hmf {} / lmf {} differ by {:.2}%", params[0], params[1], hl_gap * 100.0),
        );
        o.note(format!(
            "cf={cf}: small baseline hidden {} with {} recurrent params ({:.2}% from hmf; integer hidden sizes)",
            specs[2].hidden,
            params[2],
            planner::iso_parameter_gap(params[0], params[2]) * 100.0
        ));
        let mut medians = Vec::new();
        for spec in &specs {
            let losses: Vec<f64> = seeds
                .iter()
                .map(|&seed| {
                    let mut s = spec.clone();
                    s.seed = seed;
                    let run = train::train_toy(&s).unwrap();
                    train::evaluate(&run).val_loss
                })
                .collect();
            o.note(format!("cf={cf} {}: final validation losses {:.4?}", spec.scheme.name(), losses));
            medians.push(median(losses));
        }
        o.check(
            medians[0] <= medians[1],
            format!("cf={cf}: median validation loss hmf {:.4} <= lmf {:.4}", medians[0], medians[1]),
        );
        o.check(
            medians[0] <= medians[2],
            format!("cf={cf}: median validation loss hmf {:.4} <= small baseline {:.4}", medians[0], medians[2]),
        );
    }
    let mut copy = TrainSpec::new(Task::copy(), 1);
    copy.epochs = COPY_EPOCH_LIMIT;
    let run = train::train_toy(&copy).unwrap();
    let first = run.history.iter().find(|r| r.val_loss < COPY_LOSS_TARGET);
    o.check(
        first.is_some(),
        match first {
            Some(r) => format!(
                "dense copy task (hidden {}) reaches validation loss {:.4} < {COPY_LOSS_TARGET} at epoch {} (limit {COPY_EPOCH_LIMIT})",
                copy.hidden, r.val_loss, r.epoch
            ),
            None => format!(
                "dense copy task (hidden {}) best validation loss {:.4} within {COPY_EPOCH_LIMIT} epochs",
                copy.hidden,
                run.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min)
            ),
        },
    );
    let (ok, msg) = within(TRAINING_TIME_LIMIT, start);
    o.check(ok, msg);
    o
}

fn format_round_trip() -> Outcome {
    let mut o = Outcome::new();
    let mut bad = Vec::new();
    let mut per_rep = [0usize; 4];
    for i in 0..ROUND_TRIP_INSTANCES {
        let mut rng = rng_from_seed(0xF0F0 + i);
        let rep = Representation::ALL[(i % 4) as usize];
        per_rep[(i % 4) as usize] += 1;
        let a = instance(rep, &mut rng, 32);
        let ok = if rng.random_bool(0.5) {
            let a = a.cast::<f32>();
            let bytes = format::encode(&a);
            format::decode::<f32>(&bytes).is_ok_and(|b| b == a && format::encode(&b) == bytes)
        } else {
            let bytes = format::encode(&a);
            format::decode::<f64>(&bytes).is_ok_and(|b| b == a && format::encode(&b) == bytes)
        };
        if !ok {
            bad.push(i);
        }
    }
    o.check(
        bad.is_empty(),
        format!(
            "{ROUND_TRIP_INSTANCES} random instances ({} dense, {} lmf, {} hmf, {} csr; f32 and f64): decode(encode(x)) == x and re-encoding is byte-identical (failures: {bad:?})",
            per_rep[0], per_rep[1], per_rep[2], per_rep[3]
        ),
    );
    o
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("rank table reproduction (m=n=256)", table_reproduction),
        ("parameter and MAC count exactness", mac_exactness),
        ("oracle equivalence of all representations", oracle_equivalence),
        ("rank property and doubling inequality", rank_property),
        ("gradient suite vs finite differences", gradient_suite),
        ("runtime ordering hmf < csr, hmf > dense", runtime_ordering),
        ("toy-training ordinal comparison", toy_training),
        ("CMX1 round trip", format_round_trip),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Flag => "FLAG",
        };
        println!("{tag} {name} ({:.1?})", start.elapsed());
        for d in &outcome.details {
            println!("    {d}");
        }
    }
    println!("acceptance: {} of {} criteria failed", failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
