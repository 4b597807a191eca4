//! Small dense linear-algebra helpers shared by the design routines.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_RTOL: f64 = 1e-10;

/// Singular values of `m` above `max(rows, cols) * sigma_max * 1e-10`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let cutoff = rank_cutoff(m.nrows(), m.ncols(), sv.max());
    sv.iter().filter(|&&s| s > cutoff).count()
}

fn rank_cutoff(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * RANK_RTOL
}

/// Minimum-norm least-squares solution of `a * w = b` together with the
/// numerical rank of `a`. Refined with a few correction steps, each
/// solving for the remaining residual, while they shrink it.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return (DVector::zeros(cols), 0);
    }
    let svd = a.clone().svd(true, true);
    let cutoff = rank_cutoff(rows, cols, svd.singular_values.max());
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let solve = |rhs: &DVector<f64>| {
        let mut w = DVector::zeros(cols);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= cutoff || s == 0.0 {
                continue;
            }
            let coeff = u.column(k).dot(rhs) / s;
            w.axpy(coeff, &v_t.row(k).transpose(), 1.0);
        }
        w
    };
    let mut w = solve(b);
    let mut r = b - a * &w;
    for _ in 0..3 {
        let candidate = &w + solve(&r);
        let next = b - a * &candidate;
        if next.norm() >= r.norm() {
            break;
        }
        w = candidate;
        r = next;
    }
    (w, rank)
}

/// Maximum absolute entry (the vector infinity norm, or the entrywise max
/// for matrices).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Induced infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
