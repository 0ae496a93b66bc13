//! Slice-level kernels shared by the graph ops and usable on their own.

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn ensure_finite<F: Real>(xs: &[F], op: &'static str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// Max-shifted softmax of one vector.
pub fn softmax<F: Real>(x: &[F]) -> Result<Vec<F>> {
    ensure_finite(x, "softmax")?;
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax over the last axis of a tensor.
pub fn softmax_rows<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
    ensure_finite(x.data(), "softmax")?;
    let mut out = x.clone();
    let (r, _) = out.dims2();
    for i in 0..r {
        softmax_in_place(out.row_mut(i));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<F: Real>(x: &mut [F]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// `log(sum(exp(x)))` with max subtraction.
pub fn log_sum_exp<F: Real>(x: &[F]) -> F {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = x.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes `x` to zero mean and unit population variance, then applies
/// `gamma * x + beta`.
pub fn layer_norm<F: Real>(x: &[F], gamma: &[F], beta: &[F], eps: F) -> Result<Vec<F>> {
    if x.len() != gamma.len() || x.len() != beta.len() {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "x has {} values, gamma {}, beta {}",
                x.len(),
                gamma.len(),
                beta.len()
            ),
        ));
    }
    ensure_finite(x, "layer_norm")?;
    let mut out = vec![F::zero(); x.len()];
    layer_norm_row(x, gamma, beta, eps, &mut out);
    Ok(out)
}

/// Returns `(mean, rstd)` and writes the normalized, affine-transformed row.
pub(crate) fn layer_norm_row<F: Real>(
    x: &[F],
    gamma: &[F],
    beta: &[F],
    eps: F,
    out: &mut [F],
) -> (F, F) {
    let n = F::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let rstd = F::one() / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = gamma[i] * ((x[i] - mean) * rstd) + beta[i];
    }
    (mean, rstd)
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy<F: Real>(logits: &[F], label: usize) -> Result<F> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    ensure_finite(logits, "cross_entropy")?;
    let loss = log_sum_exp(logits) - logits[label];
    // Rounding can push a saturated loss a hair below zero.
    Ok(loss.max(F::zero()))
}

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of GELU.
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::lit(SQRT_2_OVER_PI);
    let k = F::lit(GELU_C);
    let half = F::lit(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::lit(SQRT_2_OVER_PI);
    let k = F::lit(GELU_C);
    let half = F::lit(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::lit(3.0) * k * x * x)
}

/// `out (n x m) = a (n x k) * b (k x m)`.
pub fn matmul<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out (n x m) = a (n x k) * b^T` where `b` is `m x k`.
pub fn matmul_bt<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize) -> Vec<F> {
    let mut out = vec![F::zero(); n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            out[i * m + j] = dot(arow, brow);
        }
    }
    out
}

/// `out (k x m) = a^T * b` where `a` is `n x k` and `b` is `n x m`.
pub fn matmul_at<F: Real>(a: &[F], b: &[F], n: usize, k: usize, m: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * m];
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    // Four accumulators let the f32 path vectorize without reassociating
    // across calls; the order is fixed so results stay deterministic.
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            softmax(&[f32::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = [1.0f64; 3];
        let zeros = [0.0f64; 3];
        let y = layer_norm(&[4.2, 4.2, 4.2], &ones, &zeros, 1e-5).unwrap();
        for v in y {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
        let y = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], -1.0, epsilon = 1e-15);
        let y = layer_norm(&[3.0, -7.0, 0.5], &zeros, &[0.25; 3], 1e-5).unwrap();
        assert_eq!(y, vec![0.25; 3]);
    }

    #[test]
    fn layer_norm_length_mismatch() {
        let err = layer_norm(&[1.0f64, 2.0], &[1.0], &[0.0, 0.0], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(
            cross_entropy(&[0.0f64, 0.0], 0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cross_entropy(&[0.3f64; 4], 2).unwrap(),
            4f64.ln(),
            epsilon = 1e-15
        );
        assert!(cross_entropy(&[50.0f64, 0.0], 0).unwrap() < 1e-12);
        assert!(matches!(
            cross_entropy(&[0.0f64, 0.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn matmul_variants_agree() {
        // a: 2x3, b: 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
        // b^T stored as 2x3
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(matmul_bt(&a, &bt, 2, 3, 2), c);
        // a^T (3x2) * c (2x2)
        let at_c = matmul_at(&a, &c, 2, 3, 2);
        assert_eq!(
            at_c,
            vec![
                1.0 * 58.0 + 4.0 * 139.0,
                1.0 * 64.0 + 4.0 * 154.0,
                2.0 * 58.0 + 5.0 * 139.0,
                2.0 * 64.0 + 5.0 * 154.0,
                3.0 * 58.0 + 6.0 * 139.0,
                3.0 * 64.0 + 6.0 * 154.0
            ]
        );
    }
}
