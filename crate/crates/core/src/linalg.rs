//! Small dense vector kernels on `f64` slices.

use crate::store::Norm;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

#[inline]
pub fn norm(kind: Norm, v: &[f64]) -> f64 {
    match kind {
        Norm::L1 => l1_norm(v),
        Norm::L2 => l2_norm(v),
    }
}

#[inline]
pub fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `sign` with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `out = M x` for a row-major `rows x cols` matrix.
#[inline]
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[i * cols..(i + 1) * cols], x);
    }
}

/// `out += alpha * M^T y` for a row-major `rows x cols` matrix.
#[inline]
pub fn mat_t_vec_acc(m: &[f64], rows: usize, cols: usize, alpha: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        axpy(alpha * y[i], &m[i * cols..(i + 1) * cols], out);
    }
}

/// Gradient of `norm(v)` with respect to `v`, written into `out`. The L2
/// gradient at the origin is taken as zero.
#[inline]
pub fn norm_gradient(kind: Norm, v: &[f64], out: &mut [f64]) {
    match kind {
        Norm::L1 => {
            for (o, x) in out.iter_mut().zip(v) {
                *o = sign(*x);
            }
        }
        Norm::L2 => {
            let n = l2_norm(v);
            if n > 0.0 {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = x / n;
                }
            } else {
                out.iter_mut().for_each(|o| *o = 0.0);
            }
        }
    }
}
