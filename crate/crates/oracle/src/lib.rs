//! Deliberately naive reference implementations. Nothing here shares code
//! with the `hmf` crate; everything works on row-major `f64` slices.

/// `y = A x` for a row-major `rows x cols` matrix, one row at a time.
pub fn matvec(rows: usize, cols: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(x.len(), cols);
    (0..rows)
        .map(|i| (0..cols).map(|j| a[i * cols + j] * x[j]).sum())
        .collect()
}

/// Row-major product of `a (m x p)` and `b (p x n)`.
pub fn matmul(m: usize, p: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..p).map(|t| a[i * p + t] * b[t * n + j]).sum();
        }
    }
    out
}

/// Dense form of the hybrid matrix `[top; B C]`.
pub fn hybrid_dense(j: usize, n: usize, top: &[f64], m_minus_j: usize, k: usize, b: &[f64], c: &[f64]) -> Vec<f64> {
    let mut out = top[..j * n].to_vec();
    out.extend(matmul(m_minus_j, k, n, b, c));
    out
}

/// Dense form of a CSR matrix.
pub fn csr_dense(rows: usize, cols: usize, offsets: &[usize], indices: &[usize], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for p in offsets[i]..offsets[i + 1] {
            out[i * cols + indices[p]] += values[p];
        }
    }
    out
}

/// Rank by Gaussian elimination with full pivoting. A pivot counts when it
/// exceeds `rel_tol` times the largest absolute entry of the input.
pub fn rank_by_elimination(rows: usize, cols: usize, a: &[f64], rel_tol: f64) -> usize {
    let mut w = a.to_vec();
    let scale = w.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    loop {
        let mut best = (0.0, 0, 0);
        for i in (0..rows).filter(|&i| !row_used[i]) {
            for j in (0..cols).filter(|&j| !col_used[j]) {
                let v = w[i * cols + j].abs();
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (piv, pi, pj) = best;
        if piv <= rel_tol * scale {
            return rank;
        }
        rank += 1;
        row_used[pi] = true;
        col_used[pj] = true;
        for i in (0..rows).filter(|&i| !row_used[i]) {
            let f = w[i * cols + pj] / w[pi * cols + pj];
            for j in 0..cols {
                w[i * cols + j] -= f * w[pi * cols + j];
            }
        }
    }
}

/// Stored values of the hybrid structure: dense rows plus both factors.
pub fn hybrid_params(m: u64, n: u64, j: u64, k: u64) -> u64 {
    j * n + k * (m - j) + k * n
}

/// MACs of the hybrid product: dense top, then `C x`, then `B (C x)`.
pub fn hybrid_macs(m: u64, n: u64, j: u64, k: u64) -> u64 {
    j * n + k * n + k * (m - j)
}

pub fn low_rank_macs(m: u64, n: u64, r: u64) -> u64 {
    r * n + m * r
}

/// Central difference `(f(p + eps) - f(p - eps)) / 2 eps` in coordinate `i`.
pub fn central_difference(params: &mut [f64], i: usize, eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = params[i];
    params[i] = orig + eps;
    let up = f(params);
    params[i] = orig - eps;
    let down = f(params);
    params[i] = orig;
    (up - down) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest `|a_i - b_i|` divided by the largest `|b_i|`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |s, (x, y)| s.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn lstm_params(hidden: usize, input: usize) -> usize {
    4 * (hidden * (hidden + input) + hidden)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_small_matrices() {
        assert_eq!(rank_by_elimination(2, 2, &[1.0, 2.0, 2.0, 4.0], 1e-12), 1);
        assert_eq!(rank_by_elimination(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 1e-12), 2);
        assert_eq!(rank_by_elimination(3, 3, &[0.0; 9], 1e-12), 0);
    }

    #[test]
    fn central_difference_of_square() {
        let mut p = [3.0];
        let d = central_difference(&mut p, 0, 1e-5, |p| p[0] * p[0]);
        assert!((d - 6.0).abs() < 1e-8);
        assert_eq!(p[0], 3.0);
    }

    #[test]
    fn hybrid_macs_of_square_example() {
        assert_eq!(hybrid_macs(256, 256, 100, 1), 100 * 256 + 256 + 156);
    }
}
