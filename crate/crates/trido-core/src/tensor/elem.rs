//! Scalar element abstraction: f32 for training, f64 for verification.

use std::cell::RefCell;
use std::fmt;

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

/// Scalar type the tensor engine is generic over.
///
/// Training runs at f32; gradient checking runs at f64. The trait routes
/// the two hot primitives (dense matrix multiply and 1D FFT) to the
/// matching `matrixmultiply` / `rustfft` kernels.
pub trait Elem:
    rustfft::FftNum
    + num_traits::Float
    + num_traits::NumAssignOps
    + std::iter::Sum
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Dtype code used by the tensor file format (0 = f32, 1 = f64).
    const DTYPE_CODE: u8;

    fn elem(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Strided C = alpha * A(m,k) * B(k,n) + beta * C(m,n).
    ///
    /// # Safety
    /// Pointers must cover the strided extents of the three operands.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// In-place unnormalized FFT; `inverse` selects the e^{+i2pi/N} kernel.
    fn fft_inplace(buf: &mut [Complex<Self>], inverse: bool);
}

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

impl Elem for f32 {
    const DTYPE_CODE: u8 = 0;

    #[inline]
    fn elem(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn fft_inplace(buf: &mut [Complex<Self>], inverse: bool) {
        let dir = if inverse {
            FftDirection::Inverse
        } else {
            FftDirection::Forward
        };
        PLANNER_F32.with(|p| {
            let fft = p.borrow_mut().plan_fft(buf.len(), dir);
            fft.process(buf);
        });
    }
}

impl Elem for f64 {
    const DTYPE_CODE: u8 = 1;

    #[inline]
    fn elem(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn fft_inplace(buf: &mut [Complex<Self>], inverse: bool) {
        let dir = if inverse {
            FftDirection::Inverse
        } else {
            FftDirection::Forward
        };
        PLANNER_F64.with(|p| {
            let fft = p.borrow_mut().plan_fft(buf.len(), dir);
            fft.process(buf);
        });
    }
}
