//! Joins benchmark speedups with training results into one point per
//! scheme and compression factor.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hmf::bench::BenchRecord;
use hmf::train::{read_history_csv, read_manifest, ModelScheme, RunManifest};
use hmf::Representation;

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub scheme: String,
    pub cf: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub val_loss: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportPoint {
    pub scheme: String,
    pub cf: f64,
    pub k: Option<usize>,
    pub seeds: usize,
    /// Median over seeds.
    pub val_loss: f64,
    pub perplexity: f64,
    /// Median speedup of the matching benchmark rows, if any.
    pub speedup: Option<f64>,
    /// No other point with a speedup is at least as fast and at least as
    /// accurate while strictly better in one of the two.
    pub pareto: Option<bool>,
}

/// Collects every directory under `roots` (inclusive) holding a `manifest.json`.
pub fn find_runs(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack: Vec<PathBuf> = roots.to_vec();
    while let Some(dir) = stack.pop() {
        if dir.join("manifest.json").is_file() {
            out.push(dir);
            continue;
        }
        let entries = std::fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))?;
        for e in entries {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_run(dir: &Path) -> Result<RunResult> {
    let man: RunManifest = read_manifest(dir)?;
    let history = read_history_csv(dir.join("train.csv"))?;
    let Some(last) = history.last() else {
        bail!("{}: empty train.csv", dir.display());
    };
    let k = match man.spec.scheme {
        ModelScheme::Hmf { k, .. } => Some(k),
        _ => None,
    };
    Ok(RunResult {
        scheme: man.scheme,
        cf: man.cf,
        k,
        seed: man.seed,
        val_loss: last.val_loss,
        perplexity: last.perplexity,
    })
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

fn bench_representation(scheme: &str) -> Option<Representation> {
    match scheme {
        "dense" => Some(Representation::Dense),
        "hmf" => Some(Representation::Hmf),
        "lmf" => Some(Representation::Lmf),
        "pruned" => Some(Representation::Csr),
        _ => None,
    }
}

fn same_cf(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

pub fn build_report(runs: &[RunResult], bench: &[BenchRecord]) -> Vec<ReportPoint> {
    let mut keys: Vec<(String, f64, Option<usize>)> = Vec::new();
    for r in runs {
        if !keys.iter().any(|(s, cf, k)| *s == r.scheme && same_cf(*cf, r.cf) && *k == r.k) {
            keys.push((r.scheme.clone(), r.cf, r.k));
        }
    }
    let mut points: Vec<ReportPoint> = keys
        .into_iter()
        .map(|(scheme, cf, k)| {
            let group: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.scheme == scheme && same_cf(r.cf, cf) && r.k == k)
                .collect();
            let speedups: Vec<f64> = bench_representation(&scheme)
                .map(|rep| {
                    bench
                        .iter()
                        .filter(|b| {
                            b.representation == rep
                                && (rep == Representation::Dense || same_cf(b.cf, cf))
                                && (rep != Representation::Hmf || b.k == k)
                        })
                        .map(|b| b.speedup)
                        .collect()
                })
                .unwrap_or_default();
            ReportPoint {
                seeds: group.len(),
                val_loss: median(group.iter().map(|r| r.val_loss).collect()),
                perplexity: median(group.iter().map(|r| r.perplexity).collect()),
                speedup: (!speedups.is_empty()).then(|| median(speedups)),
                pareto: None,
                scheme,
                cf,
                k,
            }
        })
        .collect();
    let timed: Vec<(f64, f64)> = points.iter().filter_map(|p| p.speedup.map(|s| (s, p.val_loss))).collect();
    for p in &mut points {
        if let Some(s) = p.speedup {
            let dominated = timed
                .iter()
                .any(|&(os, ol)| os >= s && ol <= p.val_loss && (os > s || ol < p.val_loss));
            p.pareto = Some(!dominated);
        }
    }
    points.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.cf.total_cmp(&b.cf)).then(a.k.cmp(&b.k)));
    points
}

pub const REPORT_HEADER: &str = "scheme,cf,k,seeds,val_loss,perplexity,speedup,pareto";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn report_csv(points: &[ReportPoint]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.scheme,
            p.cf,
            opt(p.k),
            p.seeds,
            p.val_loss,
            p.perplexity,
            opt(p.speedup),
            opt(p.pareto)
        ));
    }
    out
}
