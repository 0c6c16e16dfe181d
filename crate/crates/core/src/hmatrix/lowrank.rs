//! Outer-product blocks `U Vᵀ` and their truncation.

use crate::dense::{svd, CompactQr};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DMatrixView};

/// `U Vᵀ` with `U: m × k`, `V: n × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank<T: Scalar> {
    pub u: DMatrix<T>,
    pub v: DMatrix<T>,
}

impl<T: Scalar> LowRank<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            u: DMatrix::zeros(m, 0),
            v: DMatrix::zeros(n, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        if self.rank() == 0 {
            return DMatrix::zeros(self.nrows(), self.ncols());
        }
        &self.u * self.v.transpose()
    }

    pub fn bytes(&self) -> usize {
        (self.nrows() + self.ncols()) * self.rank() * std::mem::size_of::<T>()
    }

    /// Truncated SVD of a dense block: keeps `σ_i > eps · σ_1`.
    pub fn from_dense(m: DMatrixView<'_, T>, eps: T) -> Self {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Self::zeros(rows, cols);
        }
        let svd = svd(m.clone_owned());
        let keep = kept_rank(&svd.s, eps);
        let mut uu = svd.u.columns(0, keep).into_owned();
        for (c, &s) in svd.s.iter().take(keep).enumerate() {
            uu.column_mut(c).scale_mut(s);
        }
        let vv = svd.v_t.rows(0, keep).transpose();
        Self { u: uu, v: vv }
    }

    /// Recompress `self` to relative tolerance `eps`.
    pub fn truncate(self, eps: T) -> Self {
        truncate_factors(self.u, self.v, eps)
    }
}

/// Number of singular values (sorted descending) with `σ_i > eps · σ_1`.
fn kept_rank<T: Scalar>(sv: &[T], eps: T) -> usize {
    match sv.first() {
        Some(&s1) if s1 > T::zero() => sv.iter().take_while(|&&s| s > eps * s1).count(),
        _ => 0,
    }
}

/// Truncated recompression of `U Vᵀ` via thin QR of both factors and an SVD
/// of the small core `R_u R_vᵀ`.
pub fn truncate_factors<T: Scalar>(u: DMatrix<T>, v: DMatrix<T>, eps: T) -> LowRank<T> {
    let (m, k) = u.shape();
    let n = v.nrows();
    if k == 0 || m == 0 || n == 0 {
        return LowRank::zeros(m, n);
    }
    if k >= m.min(n) {
        // factors are not thin: compress the product directly
        let dense = &u * v.transpose();
        return LowRank::from_dense(dense.as_view(), eps);
    }
    let qr_u = CompactQr::new(u);
    let qr_v = CompactQr::new(v);
    let core = svd(qr_u.r() * qr_v.r().transpose());
    let keep = kept_rank(&core.s, eps);
    if keep == 0 {
        return LowRank::zeros(m, n);
    }
    let mut ws = core.u.columns(0, keep).into_owned();
    for (c, &s) in core.s.iter().take(keep).enumerate() {
        ws.column_mut(c).scale_mut(s);
    }
    let zs = core.v_t.rows(0, keep).transpose();
    LowRank {
        u: qr_u.q_mul(&ws),
        v: qr_v.q_mul(&zs),
    }
}

/// Horizontal concatenation `[a b]` of two factor matrices with equal rows.
pub fn hcat<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}
