//! Small dense kernels shared by the dense cyclic-reduction path and the
//! dense leaves of hierarchical matrices.

use crate::scalar::Scalar;
use nalgebra::DMatrix;

/// Failure to invert a dense block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    /// 1-norm condition estimate; infinite for an exactly singular pivot.
    pub condition: f64,
}

/// Default cap on the 1-norm condition number of an invertible block.
pub fn default_condition_cap<T: Scalar>() -> T {
    T::one() / (T::of(16.0) * T::machine_epsilon())
}

pub fn norm1<T: Scalar>(m: &DMatrix<T>) -> T {
    m.column_iter()
        .map(|c| c.iter().fold(T::zero(), |a, v| a + v.abs()))
        .fold(T::zero(), |a, b| a.max(b))
}

/// Partially pivoted LU inverse with a condition check.
pub fn invert<T: Scalar>(m: &DMatrix<T>, condition_cap: T) -> Result<DMatrix<T>, Singular> {
    assert!(m.is_square(), "only square blocks are inverted");
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let inv = m.clone().lu().try_inverse().ok_or(Singular {
        condition: f64::INFINITY,
    })?;
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > condition_cap {
        return Err(Singular {
            condition: cond.as_f64(),
        });
    }
    Ok(inv)
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, `s` descending.
#[derive(Debug, Clone)]
pub struct Svd<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<T>,
    pub v_t: DMatrix<T>,
}

/// Thin SVD through LAPACK `?gesvd`.
///
/// Panics if the QR iteration fails to converge, which LAPACK reports only
/// for inputs containing NaN or infinity.
pub fn svd<T: Scalar>(mut a: DMatrix<T>) -> Svd<T> {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(m, 0),
            s: Vec::new(),
            v_t: DMatrix::zeros(0, n),
        };
    }
    let dim = |v: usize| i32::try_from(v).expect("matrix dimension fits in i32");
    let (mi, ni, ki) = (dim(m), dim(n), dim(k));
    let mut s = vec![T::zero(); k];
    let mut u = DMatrix::zeros(m, k);
    let mut v_t = DMatrix::zeros(k, n);
    let mut info = 0;
    // documented minimum plus room for blocked reductions
    let lwork = (3 * k + m.max(n)).max(5 * k) + 64 * (m + n);
    let mut work = vec![T::zero(); lwork];
    // SAFETY: column-major buffers sized as LAPACK expects for jobu = jobvt = 'S'.
    unsafe {
        T::gesvd(
            b'S', b'S', mi, ni, a.as_mut_ptr(), mi, s.as_mut_ptr(), u.as_mut_ptr(), mi,
            v_t.as_mut_ptr(), ki, work.as_mut_ptr(), dim(lwork), &mut info,
        );
    }
    assert!(info == 0, "gesvd failed with info = {info}");
    Svd { u, s, v_t }
}

/// Householder QR of a tall matrix, kept in LAPACK's compact form.
#[derive(Debug, Clone)]
pub struct CompactQr<T: Scalar> {
    qr: DMatrix<T>,
    tau: Vec<T>,
}

fn block_work<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n.max(1) * 64]
}

impl<T: Scalar> CompactQr<T> {
    /// Factors `a` (`m × k`, `m ≥ k`) through `?geqrf`.
    pub fn new(mut a: DMatrix<T>) -> Self {
        let (m, k) = a.shape();
        assert!(m >= k, "compact QR needs a tall matrix");
        let mut tau = vec![T::zero(); k];
        if k > 0 {
            let mut work = block_work::<T>(k);
            let mut info = 0;
            // SAFETY: column-major m × k buffer, tau of length k, work of the stated length.
            unsafe {
                T::geqrf(m as i32, k as i32, a.as_mut_ptr(), m as i32, tau.as_mut_ptr(), work.as_mut_ptr(), work.len() as i32, &mut info);
            }
            assert!(info == 0, "geqrf failed with info = {info}");
        }
        Self { qr: a, tau }
    }

    /// The `k × k` upper-triangular factor.
    pub fn r(&self) -> DMatrix<T> {
        let k = self.tau.len();
        DMatrix::from_fn(k, k, |i, j| if i <= j { self.qr[(i, j)] } else { T::zero() })
    }

    /// `Q [c; 0]` for a `k × p` matrix `c`, without forming `Q`.
    pub fn q_mul(&self, c: &DMatrix<T>) -> DMatrix<T> {
        let (m, k) = self.qr.shape();
        assert_eq!(c.nrows(), k);
        let p = c.ncols();
        let mut out = DMatrix::zeros(m, p);
        out.view_mut((0, 0), (k, p)).copy_from(c);
        if k == 0 || p == 0 {
            return out;
        }
        let mut work = block_work::<T>(p);
        let mut info = 0;
        // SAFETY: reflectors from geqrf, out is column-major m × p.
        unsafe {
            T::ormqr(
                b'L', b'N', m as i32, p as i32, k as i32, self.qr.as_ptr(), m as i32, self.tau.as_ptr(),
                out.as_mut_ptr(), m as i32, work.as_mut_ptr(), work.len() as i32, &mut info,
            );
        }
        assert!(info == 0, "ormqr failed with info = {info}");
        out
    }
}
