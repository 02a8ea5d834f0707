//! Structure planning: pick `j`, `k`, `r`, `nnz` or a hidden size that meets a
//! target compression factor.
//!
//! Every solver floors, so the achieved factor never falls short of the target.

use crate::error::{Error, Result};
use crate::rnn::CellKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Dense,
    Hmf { j: usize, k: usize },
    Lmf { r: usize },
    Csr { nnz: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructurePlan {
    pub m: usize,
    pub n: usize,
    pub scheme: Scheme,
    pub target_cf: f64,
    pub achieved_cf: f64,
    pub max_rank: usize,
}

impl StructurePlan {
    pub fn param_count(&self) -> usize {
        scheme_params(self.m, self.n, self.scheme)
    }
}

fn scheme_params(m: usize, n: usize, scheme: Scheme) -> usize {
    match scheme {
        Scheme::Dense => m * n,
        Scheme::Hmf { j, k } => j * n + k * (m - j + n),
        Scheme::Lmf { r } => r * (m + n),
        Scheme::Csr { nnz } => nnz,
    }
}

fn cf_of(m: usize, n: usize, params: usize) -> f64 {
    (m * n) as f64 / params as f64
}

fn check_inputs(m: usize, n: usize, target_cf: f64) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::Planning(format!("matrix dimensions must be positive, got {m}x{n}")));
    }
    if !target_cf.is_finite() || target_cf < 1.0 {
        return Err(Error::Planning(format!(
            "compression factor must be a finite value >= 1, got {target_cf}"
        )));
    }
    Ok(())
}

/// Uncompressed plan.
pub fn dense_plan(m: usize, n: usize) -> StructurePlan {
    StructurePlan {
        m,
        n,
        scheme: Scheme::Dense,
        target_cf: 1.0,
        achieved_cf: 1.0,
        max_rank: m.min(n),
    }
}

/// Largest `j` whose hybrid split with inner rank `k` reaches `target_cf`:
/// `j = floor((m n / cf - k (m + n)) / (n - k))`.
pub fn solve_j_given_k(m: usize, n: usize, target_cf: f64, k: usize) -> Result<StructurePlan> {
    check_inputs(m, n, target_cf)?;
    if k == 0 {
        return Err(Error::Planning("k must be at least 1".into()));
    }
    if k >= n || k >= m {
        return Err(Error::Planning(format!(
            "k = {k} must be below both m = {m} and n = {n}"
        )));
    }
    let budget = (m * n) as f64 / target_cf;
    let low_rank_cost = k * (m + n);
    let numerator = budget - low_rank_cost as f64;
    if numerator < 0.0 {
        return Err(Error::Planning(format!(
            "low-rank block alone needs k(m+n) = {low_rank_cost} parameters, \
             above the budget m*n/cf = {budget:.2}"
        )));
    }
    let max_j = m - k;
    let params = |j: usize| scheme_params(m, n, Scheme::Hmf { j, k });
    let mut j = ((numerator / (n - k) as f64).floor() as usize).min(max_j);
    // Settle float rounding at exact boundaries against the same expression
    // that reports achieved_cf.
    while j > 0 && cf_of(m, n, params(j)) < target_cf {
        j -= 1;
    }
    while j < max_j && cf_of(m, n, params(j + 1)) >= target_cf {
        j += 1;
    }
    let achieved_cf = cf_of(m, n, params(j));
    if achieved_cf < target_cf {
        return Err(Error::Planning(format!(
            "no j >= 0 reaches cf {target_cf} with k = {k}"
        )));
    }
    Ok(StructurePlan {
        m,
        n,
        scheme: Scheme::Hmf { j, k },
        target_cf,
        achieved_cf,
        max_rank: (j + k).min(m).min(n),
    })
}

/// Largest rank `r = floor(m n / (cf (m + n)))` that reaches `target_cf`.
pub fn solve_lmf_rank(m: usize, n: usize, target_cf: f64) -> Result<StructurePlan> {
    check_inputs(m, n, target_cf)?;
    let params = |r: usize| scheme_params(m, n, Scheme::Lmf { r });
    let mut r = ((m * n) as f64 / (target_cf * (m + n) as f64)).floor() as usize;
    while r > 0 && cf_of(m, n, params(r)) < target_cf {
        r -= 1;
    }
    while cf_of(m, n, params(r + 1)) >= target_cf {
        r += 1;
    }
    if r == 0 {
        return Err(Error::Planning(format!(
            "cf {target_cf} leaves less than one rank for a {m}x{n} factorization"
        )));
    }
    if r > m.min(n) {
        return Err(Error::Planning(format!(
            "cf {target_cf} is below the smallest factorizable ratio {:.4}: rank {r} exceeds min(m, n)",
            (m * n) as f64 / (m.min(n) * (m + n)) as f64
        )));
    }
    Ok(StructurePlan {
        m,
        n,
        scheme: Scheme::Lmf { r },
        target_cf,
        achieved_cf: cf_of(m, n, params(r)),
        max_rank: r,
    })
}

/// Number of entries magnitude pruning keeps: `floor(m n / cf)`.
pub fn solve_csr_nnz(m: usize, n: usize, target_cf: f64) -> Result<StructurePlan> {
    check_inputs(m, n, target_cf)?;
    let mut nnz = ((m * n) as f64 / target_cf).floor() as usize;
    while nnz > 0 && cf_of(m, n, nnz) < target_cf {
        nnz -= 1;
    }
    if nnz == 0 {
        return Err(Error::Planning(format!("cf {target_cf} keeps no entries of a {m}x{n} matrix")));
    }
    Ok(StructurePlan {
        m,
        n,
        scheme: Scheme::Csr { nnz },
        target_cf,
        achieved_cf: cf_of(m, n, nnz),
        max_rank: m.min(n).min(nnz),
    })
}

/// One row of the rank comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub cf: f64,
    pub lmf: StructurePlan,
    /// Hybrid plan with `k = 1`; its rank is the largest reachable.
    pub hmf_max: StructurePlan,
    /// Hybrid plan with the caller's `k`.
    pub hmf_chosen: StructurePlan,
    /// Smallest `j + k` over the sweep of feasible `(j, k)` with `j >= 1`.
    pub hmf_min: StructurePlan,
}

/// Sweeps `k = 1, 2, ...`, pairing each with its largest feasible `j`, and
/// returns the plan of smallest rank among those with `j >= 1`.
pub fn hmf_min_rank_plan(m: usize, n: usize, target_cf: f64) -> Result<StructurePlan> {
    let mut best: Option<StructurePlan> = None;
    for k in 1..m.min(n) {
        let Ok(plan) = solve_j_given_k(m, n, target_cf, k) else {
            break;
        };
        if matches!(plan.scheme, Scheme::Hmf { j, .. } if j >= 1)
            && best.is_none_or(|b| plan.max_rank < b.max_rank)
        {
            best = Some(plan);
        }
    }
    best.ok_or_else(|| Error::Planning(format!("no feasible (j >= 1, k) pair for cf {target_cf}")))
}

pub fn rank_range_table(m: usize, n: usize, cfs: &[f64], k: usize) -> Result<Vec<RankRow>> {
    cfs.iter()
        .map(|&cf| {
            Ok(RankRow {
                cf,
                lmf: solve_lmf_rank(m, n, cf)?,
                hmf_max: solve_j_given_k(m, n, cf, 1)?,
                hmf_chosen: solve_j_given_k(m, n, cf, k)?,
                hmf_min: hmf_min_rank_plan(m, n, cf)?,
            })
        })
        .collect()
}

/// Trainable parameters of a stack of recurrent layers (input, recurrent and
/// bias terms of every gate).
pub fn recurrent_param_count(cell: CellKind, hidden: usize, input: usize, layers: usize) -> usize {
    let g = cell.gates();
    (0..layers)
        .map(|l| {
            let inp = if l == 0 { input } else { hidden };
            g * (hidden * (hidden + inp) + hidden)
        })
        .sum()
}

/// Largest hidden size whose uncompressed stack fits the compressed budget
/// of the `hidden`-sized baseline.
pub fn solve_small_baseline(
    cell: CellKind,
    hidden: usize,
    input: usize,
    layers: usize,
    target_cf: f64,
) -> Result<usize> {
    if hidden == 0 || layers == 0 {
        return Err(Error::Planning("hidden size and layer count must be positive".into()));
    }
    if !target_cf.is_finite() || target_cf < 1.0 {
        return Err(Error::Planning(format!(
            "compression factor must be a finite value >= 1, got {target_cf}"
        )));
    }
    let budget = recurrent_param_count(cell, hidden, input, layers) as f64 / target_cf;
    let fits = |h: usize| recurrent_param_count(cell, h, input, layers) as f64 <= budget;
    let (mut lo, mut hi) = (0usize, hidden);
    // largest h in [0, hidden] with fits(h); fits is monotone in h
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if lo == 0 {
        return Err(Error::Planning(format!(
            "cf {target_cf} leaves no room for even one hidden unit"
        )));
    }
    Ok(lo)
}

/// Relative difference `|a - b| / max(a, b)` between two parameter counts.
pub fn iso_parameter_gap(a: usize, b: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    a.abs_diff(b) as f64 / a.max(b) as f64
}

/// Fails when two models meant to be compared at equal budgets differ by
/// `tolerance` or more.
pub fn check_iso_parameters(a: usize, b: usize, tolerance: f64) -> Result<()> {
    let gap = iso_parameter_gap(a, b);
    if gap >= tolerance {
        return Err(Error::Planning(format!(
            "parameter counts {a} and {b} differ by {:.2}%, limit {:.2}%",
            gap * 100.0,
            tolerance * 100.0
        )));
    }
    Ok(())
}

/// Parses a compression factor given as a decimal (`2.5`) or a fraction (`5/2`).
pub fn parse_cf(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Planning(format!("cannot parse compression factor `{s}`"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if !v.is_finite() {
        return Err(bad());
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hmf_j(p: &StructurePlan) -> usize {
        match p.scheme {
            Scheme::Hmf { j, .. } => j,
            _ => unreachable!(),
        }
    }

    fn lmf_r(p: &StructurePlan) -> usize {
        match p.scheme {
            Scheme::Lmf { r } => r,
            _ => unreachable!(),
        }
    }

    #[test]
    fn j_for_table_rows() {
        for (cf, j, rank) in [(5.0, 49, 50), (5.0 / 4.0, 203, 204), (5.0 / 3.0, 152, 153)] {
            let p = solve_j_given_k(256, 256, cf, 1).unwrap();
            assert_eq!(hmf_j(&p), j);
            assert_eq!(p.max_rank, rank);
            assert!(p.achieved_cf >= cf);
        }
    }

    #[test]
    fn lmf_ranks_for_table_rows() {
        for (cf, r) in [(5.0 / 4.0, 102), (5.0, 25), (5.0 / 2.0, 51), (1.0, 128)] {
            assert_eq!(lmf_r(&solve_lmf_rank(256, 256, cf).unwrap()), r);
        }
        assert!(matches!(solve_lmf_rank(2, 2, 2.0), Err(Error::Planning(_))));
    }

    #[test]
    fn infeasible_budget_names_the_low_rank_cost() {
        let err = solve_j_given_k(16, 16, 20.0, 1).unwrap_err().to_string();
        assert!(err.contains("k(m+n)"), "{err}");
        assert!(solve_j_given_k(256, 256, 0.5, 1).is_err());
        assert!(solve_j_given_k(256, 256, 2.0, 0).is_err());
    }

    #[test]
    fn min_rank_sweep_for_table_rows() {
        for (cf, lo) in [(5.0 / 4.0, 103), (5.0 / 3.0, 78), (5.0 / 2.0, 52), (5.0, 26)] {
            assert_eq!(hmf_min_rank_plan(256, 256, cf).unwrap().max_rank, lo);
        }
    }

    #[test]
    fn small_baseline_sizes() {
        // brute force: largest h with 4(h(h+64)+h) <= 33024/4
        let budget = 4 * (64 * 128 + 64) / 4;
        let oracle = (1..=64).filter(|h| 4 * (h * (h + 64) + h) <= budget).max().unwrap();
        assert_eq!(oracle, 23);
        assert_eq!(solve_small_baseline(CellKind::Lstm, 64, 64, 1, 4.0).unwrap(), oracle);
        assert_eq!(solve_small_baseline(CellKind::Lstm, 64, 64, 1, 1.0).unwrap(), 64);
        assert!(solve_small_baseline(CellKind::Lstm, 64, 64, 1, 1e9).is_err());
    }

    #[test]
    fn fractions_parse() {
        assert_eq!(parse_cf("5/4").unwrap(), 1.25);
        assert_eq!(parse_cf(" 2.5 ").unwrap(), 2.5);
        assert!(parse_cf("five").is_err());
        assert!(parse_cf("1/0").is_err());
    }

    #[test]
    fn iso_gap() {
        assert_eq!(iso_parameter_gap(100, 100), 0.0);
        assert!((iso_parameter_gap(98, 100) - 0.02).abs() < 1e-12);
        assert!(check_iso_parameters(99, 100, 0.02).is_ok());
        assert!(check_iso_parameters(97, 100, 0.02).is_err());
    }
}
