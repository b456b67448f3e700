//! Raw slice kernels shared by the forward and backward passes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `out += op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `ta` set, `a` is stored as `k×m`; with `tb` set, `b` is stored as
/// `n×k`. Each output element accumulates over `k` in ascending order, so a
/// row's result does not depend on how many other rows are computed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            if tb {
                for (j, o) in out_row.iter_mut().enumerate() {
                    *o += av * b[j * k + p];
                }
            } else {
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every flat output index of `permute(input, perm)`, the flat input index.
pub fn permute_source_indices(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides(in_shape);
    let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = Vec::with_capacity(total);
    for _ in 0..total {
        src.push(idx.iter().zip(&mapped).map(|(i, s)| i * s).sum());
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    src
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `log Σ exp(row)`; the max term is split off so that `ln_1p` keeps
/// precision when the remaining terms are tiny.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let (max, rest) = split_max(row);
    max + rest.ln_1p()
}

/// `log Σ exp(row) − row[target]`, evaluated without adding and subtracting
/// the max so confident rows keep full relative precision.
pub fn neg_log_softmax(row: &[f64], target: usize) -> f64 {
    let (max, rest) = split_max(row);
    (max - row[target]) + rest.ln_1p()
}

/// Returns the row max and `Σ exp(x − max)` over all other entries.
fn split_max(row: &[f64]) -> (f64, f64) {
    let (argmax, max) = row
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != argmax)
        .map(|(_, x)| (x - max).exp())
        .sum();
    (max, rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transpose_flags_agree() {
        // a: 2x3, b: 3x2
        let a = [1., 2., 3., 4., 5., 6.];
        let b = [7., 8., 9., 10., 11., 12.];
        let mut plain = [0.0; 4];
        gemm(&a, &b, &mut plain, 2, 3, 2, false, false);
        assert_eq!(plain, [58., 64., 139., 154.]);

        let at = [1., 4., 2., 5., 3., 6.];
        let bt = [7., 9., 11., 8., 10., 12.];
        let mut both = [0.0; 4];
        gemm(&at, &bt, &mut both, 2, 3, 2, true, true);
        assert_eq!(both, plain);
    }

    #[test]
    fn permute_indices_transpose() {
        // [2,3] -> [3,2]
        assert_eq!(permute_source_indices(&[2, 3], &[1, 0]), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn phi_of_one() {
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }
}
