//! Floating point abstraction shared by every numeric kernel in the crate.
//!
//! The diffusion arithmetic and the network substrate are written once over
//! [`Scalar`]; training and inference run in `f32`, gradient checks in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable by the image, diffusion, and network code.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Storage width in bits.
    const BITS: u32;

    /// Converts an `f64` coefficient, rounding to nearest.
    fn of(v: f64) -> Self;

    /// Widens to `f64` for reductions and reporting.
    fn f64(self) -> f64;

    /// `c = beta * c + a * b` for row-major logical shapes `a: [m, k]`,
    /// `b: [k, n]`, `c: [m, n]`. `trans_a` means `a` is stored as `[k, m]`,
    /// `trans_b` means `b` is stored as `[n, k]`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

/// `c[0, :] = beta * c[0, :] + a[0, :] * b` for a single-row `a`.
fn row_vector_gemm<T: Float>(k: usize, n: usize, a: &[T], b: &[T], trans_b: bool, beta: T, c: &mut [T]) {
    let c = &mut c[..n];
    if beta == T::zero() {
        c.fill(T::zero());
    } else if beta != T::one() {
        c.iter_mut().for_each(|v| *v = *v * beta);
    }
    if trans_b {
        for (j, out) in c.iter_mut().enumerate() {
            let row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (x, y) in a[..k].iter().zip(row) {
                acc = acc + *x * *y;
            }
            *out = *out + acc;
        }
    } else {
        for (p, &ap) in a[..k].iter().enumerate() {
            let row = &b[p * n..(p + 1) * n];
            for (out, &bv) in c.iter_mut().zip(row) {
                *out = *out + ap * bv;
            }
        }
    }
}

macro_rules! impl_scalar {
    ($t:ty, $bits:expr, $kernel:path) => {
        impl Scalar for $t {
            const BITS: u32 = $bits;

            #[inline(always)]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline(always)]
            fn f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                if m == 1 {
                    // Row-vector products are bandwidth bound; the packed
                    // kernel is slow for them.
                    row_vector_gemm(k, n, a, b, trans_b, beta, c);
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the asserts above bound every index the kernel
                // touches for the given shapes and strides.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, 32, matrixmultiply::sgemm);
impl_scalar!(f64, 64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = x[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_layouts() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = vec![0.0; m * n];
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            f64::gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_row_path_matches_naive() {
        let (k, n) = (7, 5);
        let a: Vec<f64> = (0..k).map(|i| i as f64 - 2.5).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sqrt()).collect();
        let want = naive(1, k, n, &a, &b);
        let mut c = vec![0.0; n];
        f64::gemm(1, k, n, &a, false, &b, false, 0.0, &mut c);
        let mut ct = vec![0.0; n];
        f64::gemm(1, k, n, &a, false, &transpose(k, n, &b), true, 0.0, &mut ct);
        for i in 0..n {
            assert!((c[i] - want[i]).abs() < 1e-12 && (ct[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_accumulates_with_beta_one() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 4.0];
        let mut c = [10.0f32];
        f32::gemm(1, 2, 1, &a, false, &b, false, 1.0, &mut c);
        assert_eq!(c[0], 21.0);
    }
}
