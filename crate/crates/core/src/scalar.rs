//! Floating-point abstraction used by the network, the bound calculators
//! and the certification helpers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the generic numerics are written against.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to scalar")
    }

    /// Lossy conversion to `f64`.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Conversion from a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count converts to scalar")
    }

    /// `C <- alpha * A B + beta * C` on strided row-major buffers.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: (isize, isize),
        b: &[Self],
        sb: (isize, isize),
        beta: Self,
        c: &mut [Self],
        sc: (isize, isize),
    );
}

/// Largest linear offset touched by an `r x c` view.
fn extent(r: usize, c: usize, rs: isize, cs: isize) -> usize {
    if r == 0 || c == 0 {
        return 0;
    }
    ((r - 1) as isize * rs + (c - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (isize, isize),
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= extent(m, k, rsa, csa));
                assert!(b.len() >= extent(k, n, rsb, csb));
                assert!(c.len() >= extent(m, n, rsc, csc));
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index the kernel touches lies inside the slices,
                // as checked by the extent assertions above.
                unsafe {
                    $f(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `Y (rows x out) <- X (rows x inp) W^T + beta Y` for a row-major `W (out x inp)`.
pub fn linear_fwd<S: Scalar>(x: &[S], w: &[S], rows: usize, inp: usize, out: usize, beta: S, y: &mut [S]) {
    S::gemm_raw(rows, inp, out, S::one(), x, (inp as isize, 1), w, (1, inp as isize), beta, y, (out as isize, 1));
}

/// `dX (rows x inp) += dY W`.
pub fn linear_bwd_input<S: Scalar>(dy: &[S], w: &[S], rows: usize, inp: usize, out: usize, dx: &mut [S]) {
    S::gemm_raw(rows, out, inp, S::one(), dy, (out as isize, 1), w, (inp as isize, 1), S::one(), dx, (inp as isize, 1));
}

/// `dW (out x inp) += dY^T X`.
pub fn linear_bwd_weight<S: Scalar>(dy: &[S], x: &[S], rows: usize, inp: usize, out: usize, dw: &mut [S]) {
    S::gemm_raw(out, rows, inp, S::one(), dy, (1, out as isize), x, (inp as isize, 1), S::one(), dw, (inp as isize, 1));
}
