//! Small dense symmetric solves shared by the tuner and the AR baseline.

/// Cholesky factor (lower triangular, row-major) of a symmetric positive
/// definite matrix. Returns `None` when a pivot collapses.
pub(crate) fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L L^T x = b given the Cholesky factor.
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    // Forward substitution: L y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    // Back substitution: L^T x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Solve a symmetric system with escalating diagonal jitter. The jitter is
/// relative to the mean diagonal magnitude; returns the jitter level used.
pub(crate) fn solve_spd_jittered(
    a: &[f64],
    n: usize,
    b: &[f64],
    max_rel_jitter: f64,
) -> Option<(Vec<f64>, f64)> {
    let diag_scale = (0..n).map(|i| a[i * n + i].abs()).sum::<f64>() / n.max(1) as f64;
    if diag_scale == 0.0 || !diag_scale.is_finite() {
        return None;
    }
    let mut rel = 0.0;
    loop {
        let mut work = a.to_vec();
        let jitter = rel * diag_scale;
        for i in 0..n {
            work[i * n + i] += jitter;
        }
        if let Some(l) = cholesky(&work, n) {
            return Some((cholesky_solve(&l, n, b), jitter));
        }
        rel = if rel == 0.0 { 1e-12 } else { rel * 100.0 };
        if rel > max_rel_jitter {
            return None;
        }
    }
}
