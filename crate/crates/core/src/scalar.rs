//! Scalar abstraction shared by every numerical kernel in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};

/// Real floating-point type usable by the solvers.
///
/// Implemented for `f32` and `f64`. Linear algebra is delegated to
/// nalgebra, so the bound is `RealField`; conversions go through num-traits.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Unit roundoff of the type.
    fn machine_epsilon() -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// LAPACK `?gesvd` for this precision.
    ///
    /// # Safety
    /// Arguments follow the Fortran calling convention of `?gesvd`.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gesvd(
        jobu: u8,
        jobvt: u8,
        m: i32,
        n: i32,
        a: *mut Self,
        lda: i32,
        s: *mut Self,
        u: *mut Self,
        ldu: i32,
        vt: *mut Self,
        ldvt: i32,
        work: *mut Self,
        lwork: i32,
        info: &mut i32,
    );

    /// LAPACK `?geqrf`.
    ///
    /// # Safety
    /// Fortran calling convention of `?geqrf`.
    #[doc(hidden)]
    unsafe fn geqrf(m: i32, n: i32, a: *mut Self, lda: i32, tau: *mut Self, work: *mut Self, lwork: i32, info: &mut i32);

    /// LAPACK `?ormqr`.
    ///
    /// # Safety
    /// Fortran calling convention of `?ormqr`.
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn ormqr(
        side: u8,
        trans: u8,
        m: i32,
        n: i32,
        k: i32,
        a: *const Self,
        lda: i32,
        tau: *const Self,
        c: *mut Self,
        ldc: i32,
        work: *mut Self,
        lwork: i32,
        info: &mut i32,
    );
}

macro_rules! lapack_scalar {
    ($t:ty, $eps:expr, $gesvd:path, $geqrf:path, $ormqr:path) => {
        impl Scalar for $t {
            #[inline]
            fn machine_epsilon() -> Self {
                $eps
            }

            unsafe fn gesvd(
                jobu: u8,
                jobvt: u8,
                m: i32,
                n: i32,
                a: *mut Self,
                lda: i32,
                s: *mut Self,
                u: *mut Self,
                ldu: i32,
                vt: *mut Self,
                ldvt: i32,
                work: *mut Self,
                lwork: i32,
                info: &mut i32,
            ) {
                let (ju, jv) = (jobu as std::ffi::c_char, jobvt as std::ffi::c_char);
                $gesvd(&ju, &jv, &m, &n, a, &lda, s, u, &ldu, vt, &ldvt, work, &lwork, info);
            }

            unsafe fn geqrf(m: i32, n: i32, a: *mut Self, lda: i32, tau: *mut Self, work: *mut Self, lwork: i32, info: &mut i32) {
                $geqrf(&m, &n, a, &lda, tau, work, &lwork, info);
            }

            unsafe fn ormqr(
                side: u8,
                trans: u8,
                m: i32,
                n: i32,
                k: i32,
                a: *const Self,
                lda: i32,
                tau: *const Self,
                c: *mut Self,
                ldc: i32,
                work: *mut Self,
                lwork: i32,
                info: &mut i32,
            ) {
                let (sd, tr) = (side as std::ffi::c_char, trans as std::ffi::c_char);
                $ormqr(&sd, &tr, &m, &n, &k, a, &lda, tau, c, &ldc, work, &lwork, info);
            }
        }
    };
}

lapack_scalar!(f32, f32::EPSILON, lapack_sys::sgesvd_, lapack_sys::sgeqrf_, lapack_sys::sormqr_);
lapack_scalar!(f64, f64::EPSILON, lapack_sys::dgesvd_, lapack_sys::dgeqrf_, lapack_sys::dormqr_);

/// Euclidean norm with a scaled accumulation so `f32` does not overflow on
/// large planes.
pub fn norm2<T: Scalar>(x: &[T]) -> T {
    let scale = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let ss = x.iter().fold(T::zero(), |acc, v| {
        let s = *v / scale;
        acc + s * s
    });
    scale * ss.sqrt()
}

pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (a, b)| acc + *a * *b)
}
