//! Block tridiagonal systems stored plane by plane.
//!
//! A system on an `n × n × n` grid has `n` diagonal plane blocks `D_j`,
//! `n - 1` sub-diagonal blocks `E_j` (coupling plane `j` to `j - 1`) and
//! `n - 1` super-diagonal blocks `F_j` (coupling plane `j` to `j + 1`).
//! Vectors are kept as one [`PlaneVector`] per plane so elimination levels can
//! pick planes without copying a flat vector around.

use crate::scalar::{norm2, Scalar};
use nalgebra::DMatrix;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("grid needs at least {min} points per axis, got {n}")]
    GridTooSmall { n: usize, min: usize },
    #[error("entry ({row}, {col}) out of range for a block of dimension {dim}")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },
    #[error("block has dimension {dim} but {coords} coordinates")]
    CoordinateCount { dim: usize, coords: usize },
    #[error("plane {plane}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        plane: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} planes, found {found}")]
    PlaneCount { expected: usize, found: usize },
    #[error("relative residual is undefined for a zero right-hand side")]
    ZeroRightHandSide,
}

/// Uniform grid on the unit cube with `n` interior points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self, SystemError> {
        if n < 2 {
            return Err(SystemError::GridTooSmall { n, min: 2 });
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh spacing `1 / (n + 1)`.
    pub fn h<T: Scalar>(&self) -> T {
        T::one() / T::of((self.n + 1) as f64)
    }

    pub fn plane_count(&self) -> usize {
        self.n
    }

    pub fn plane_size(&self) -> usize {
        self.n * self.n
    }

    /// Local index of node `(i, j)` within a plane, `x` fastest.
    #[inline]
    pub fn local_index(&self, i: usize, j: usize) -> usize {
        i + self.n * j
    }

    /// In-plane coordinates of every node, in local index order.
    pub fn plane_coords<T: Scalar>(&self) -> Arc<Vec<[T; 2]>> {
        let h = self.h::<T>();
        let mut coords = Vec::with_capacity(self.plane_size());
        for j in 0..self.n {
            for i in 0..self.n {
                coords.push([h * T::of((i + 1) as f64), h * T::of((j + 1) as f64)]);
            }
        }
        Arc::new(coords)
    }
}

/// Square sparse plane block in sorted coordinate form.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneBlock<T: Scalar> {
    dim: usize,
    entries: Vec<(usize, usize, T)>,
    coords: Arc<Vec<[T; 2]>>,
}

impl<T: Scalar> PlaneBlock<T> {
    /// Builds a block from unsorted triplets. Duplicates are summed and exact
    /// zeros dropped.
    pub fn from_triplets(
        dim: usize,
        mut triplets: Vec<(usize, usize, T)>,
        coords: Arc<Vec<[T; 2]>>,
    ) -> Result<Self, SystemError> {
        if coords.len() != dim {
            return Err(SystemError::CoordinateCount {
                dim,
                coords: coords.len(),
            });
        }
        if let Some(&(row, col, _)) = triplets.iter().find(|(r, c, _)| *r >= dim || *c >= dim) {
            return Err(SystemError::IndexOutOfRange { row, col, dim });
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut entries: Vec<(usize, usize, T)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != T::zero());
        Ok(Self {
            dim,
            entries,
            coords,
        })
    }

    pub fn zeros(dim: usize, coords: Arc<Vec<[T; 2]>>) -> Result<Self, SystemError> {
        Self::from_triplets(dim, Vec::new(), coords)
    }

    pub fn scaled_identity(dim: usize, value: T, coords: Arc<Vec<[T; 2]>>) -> Result<Self, SystemError> {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, value)).collect(), coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn coords(&self) -> &Arc<Vec<[T; 2]>> {
        &self.coords
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `y += alpha * B x`
    pub fn mul_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        for &(r, c, v) in &self.entries {
            y[r] += alpha * v * x[c];
        }
    }

    /// `y += alpha * Bᵀ x`
    pub fn mul_transpose_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        for &(r, c, v) in &self.entries {
            y[c] += alpha * v * x[r];
        }
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.dim, triplets, self.coords.clone()).expect("transpose keeps indices valid")
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> T {
        let vals: Vec<T> = self.entries.iter().map(|e| e.2).collect();
        norm2(&vals)
    }
}

/// One plane's slice of a solution or right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneVector<T> {
    pub plane: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> PlaneVector<T> {
    pub fn new(plane: usize, values: Vec<T>) -> Self {
        Self { plane, values }
    }

    pub fn zeros(plane: usize, dim: usize) -> Self {
        Self {
            plane,
            values: vec![T::zero(); dim],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Block tridiagonal system `tridiagonal(E_j, D_j, F_j) u = f`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiagonalSystem<T: Scalar> {
    diag: Vec<PlaneBlock<T>>,
    lower: Vec<PlaneBlock<T>>,
    upper: Vec<PlaneBlock<T>>,
    rhs: Vec<PlaneVector<T>>,
}

impl<T: Scalar> BlockTridiagonalSystem<T> {
    /// `lower[k]` is `E_{k+1}`, `upper[k]` is `F_k`.
    pub fn new(
        diag: Vec<PlaneBlock<T>>,
        lower: Vec<PlaneBlock<T>>,
        upper: Vec<PlaneBlock<T>>,
        rhs: Vec<PlaneVector<T>>,
    ) -> Result<Self, SystemError> {
        let n = diag.len();
        if n == 0 {
            return Err(SystemError::PlaneCount { expected: 1, found: 0 });
        }
        for list in [&lower, &upper] {
            if list.len() != n - 1 {
                return Err(SystemError::PlaneCount {
                    expected: n - 1,
                    found: list.len(),
                });
            }
        }
        if rhs.len() != n {
            return Err(SystemError::PlaneCount {
                expected: n,
                found: rhs.len(),
            });
        }
        let dim = diag[0].dim();
        for (j, b) in diag.iter().enumerate() {
            check_dim(j, dim, b.dim())?;
        }
        for (k, b) in lower.iter().enumerate() {
            check_dim(k + 1, dim, b.dim())?;
        }
        for (k, b) in upper.iter().enumerate() {
            check_dim(k, dim, b.dim())?;
        }
        let rhs = rhs
            .into_iter()
            .enumerate()
            .map(|(j, mut v)| {
                check_dim(j, dim, v.len())?;
                v.plane = j;
                Ok(v)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            diag,
            lower,
            upper,
            rhs,
        })
    }

    pub fn plane_count(&self) -> usize {
        self.diag.len()
    }

    pub fn plane_dim(&self) -> usize {
        self.diag[0].dim()
    }

    /// Total number of unknowns.
    pub fn unknowns(&self) -> usize {
        self.plane_count() * self.plane_dim()
    }

    pub fn d(&self, j: usize) -> &PlaneBlock<T> {
        &self.diag[j]
    }

    /// `E_j`, absent for `j == 0`.
    pub fn e(&self, j: usize) -> Option<&PlaneBlock<T>> {
        if j == 0 {
            None
        } else {
            self.lower.get(j - 1)
        }
    }

    /// `F_j`, absent for the last plane.
    pub fn f_block(&self, j: usize) -> Option<&PlaneBlock<T>> {
        self.upper.get(j)
    }

    pub fn diag_blocks(&self) -> &[PlaneBlock<T>] {
        &self.diag
    }

    pub fn lower_blocks(&self) -> &[PlaneBlock<T>] {
        &self.lower
    }

    pub fn upper_blocks(&self) -> &[PlaneBlock<T>] {
        &self.upper
    }

    pub fn rhs(&self) -> &[PlaneVector<T>] {
        &self.rhs
    }

    pub fn coords(&self) -> &Arc<Vec<[T; 2]>> {
        self.diag[0].coords()
    }

    /// Same operator, different right-hand side.
    pub fn with_rhs(&self, rhs: Vec<PlaneVector<T>>) -> Result<Self, SystemError> {
        Self::new(self.diag.clone(), self.lower.clone(), self.upper.clone(), rhs)
    }

    /// Global coordinate triplets of the full `N × N` operator, planes in order.
    pub fn global_triplets(&self) -> Vec<(usize, usize, T)> {
        let m = self.plane_dim();
        let mut out = Vec::new();
        for j in 0..self.plane_count() {
            let blocks = [
                (self.e(j), j.wrapping_sub(1)),
                (Some(self.d(j)), j),
                (self.f_block(j), j + 1),
            ];
            for (block, col_plane) in blocks {
                if let Some(b) = block {
                    out.extend(b.entries().iter().map(|&(r, c, v)| (j * m + r, col_plane * m + c, v)));
                }
            }
        }
        out
    }

    pub fn check_vector(&self, u: &[PlaneVector<T>]) -> Result<(), SystemError> {
        if u.len() != self.plane_count() {
            return Err(SystemError::PlaneCount {
                expected: self.plane_count(),
                found: u.len(),
            });
        }
        for (j, v) in u.iter().enumerate() {
            check_dim(j, self.plane_dim(), v.len())?;
        }
        Ok(())
    }
}

fn check_dim(plane: usize, expected: usize, found: usize) -> Result<(), SystemError> {
    if expected != found {
        Err(SystemError::DimensionMismatch {
            plane,
            expected,
            found,
        })
    } else {
        Ok(())
    }
}

/// Exact action of the global operator: row `j` of the result is
/// `E_j u_{j-1} + D_j u_j + F_j u_{j+1}`.
pub fn apply<T: Scalar>(
    system: &BlockTridiagonalSystem<T>,
    u: &[PlaneVector<T>],
) -> Result<Vec<PlaneVector<T>>, SystemError> {
    system.check_vector(u)?;
    let n = system.plane_count();
    let dim = system.plane_dim();
    Ok((0..n)
        .map(|j| {
            let mut y = vec![T::zero(); dim];
            if let Some(e) = system.e(j) {
                e.mul_acc(T::one(), &u[j - 1].values, &mut y);
            }
            system.d(j).mul_acc(T::one(), &u[j].values, &mut y);
            if let Some(f) = system.f_block(j) {
                f.mul_acc(T::one(), &u[j + 1].values, &mut y);
            }
            PlaneVector::new(j, y)
        })
        .collect())
}

/// Action of the transposed global operator.
pub fn apply_transpose<T: Scalar>(
    system: &BlockTridiagonalSystem<T>,
    u: &[PlaneVector<T>],
) -> Result<Vec<PlaneVector<T>>, SystemError> {
    system.check_vector(u)?;
    let n = system.plane_count();
    let dim = system.plane_dim();
    Ok((0..n)
        .map(|j| {
            // column j of A touches E_{j+1} (below) and F_{j-1} (above)
            let mut y = vec![T::zero(); dim];
            if j + 1 < n {
                system.e(j + 1).unwrap().mul_transpose_acc(T::one(), &u[j + 1].values, &mut y);
            }
            system.d(j).mul_transpose_acc(T::one(), &u[j].values, &mut y);
            if j > 0 {
                system.f_block(j - 1).unwrap().mul_transpose_acc(T::one(), &u[j - 1].values, &mut y);
            }
            PlaneVector::new(j, y)
        })
        .collect())
}

/// `‖A u − f‖₂ / ‖f‖₂`.
pub fn relative_residual<T: Scalar>(
    system: &BlockTridiagonalSystem<T>,
    u: &[PlaneVector<T>],
    f: &[PlaneVector<T>],
) -> Result<T, SystemError> {
    system.check_vector(f)?;
    let fnorm = planes_norm(f);
    if fnorm == T::zero() {
        return Err(SystemError::ZeroRightHandSide);
    }
    let au = apply(system, u)?;
    let diff: Vec<T> = au
        .iter()
        .zip(f)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| *x - *y))
        .collect();
    Ok(norm2(&diff) / fnorm)
}

/// Euclidean norm over all planes.
pub fn planes_norm<T: Scalar>(v: &[PlaneVector<T>]) -> T {
    let flat: Vec<T> = v.iter().flat_map(|p| p.values.iter().copied()).collect();
    norm2(&flat)
}

/// Inner product over all planes, accumulated plane by plane in order.
pub fn planes_dot<T: Scalar>(a: &[PlaneVector<T>], b: &[PlaneVector<T>]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + crate::scalar::dot(&x.values, &y.values))
}

/// `y += alpha * x`
pub fn planes_axpy<T: Scalar>(alpha: T, x: &[PlaneVector<T>], y: &mut [PlaneVector<T>]) {
    for (xp, yp) in x.iter().zip(y.iter_mut()) {
        for (a, b) in xp.values.iter().zip(yp.values.iter_mut()) {
            *b += alpha * *a;
        }
    }
}

pub fn planes_zeros<T: Scalar>(planes: usize, dim: usize) -> Vec<PlaneVector<T>> {
    (0..planes).map(|j| PlaneVector::zeros(j, dim)).collect()
}

pub fn flatten<T: Scalar>(v: &[PlaneVector<T>]) -> Vec<T> {
    v.iter().flat_map(|p| p.values.iter().copied()).collect()
}

pub fn unflatten<T: Scalar>(flat: &[T], dim: usize) -> Vec<PlaneVector<T>> {
    flat.chunks(dim)
        .enumerate()
        .map(|(j, c)| PlaneVector::new(j, c.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coords(dim: usize) -> Arc<Vec<[f64; 2]>> {
        Arc::new((0..dim).map(|i| [i as f64, 0.0]).collect())
    }

    fn identity_system(n: usize, dim: usize) -> BlockTridiagonalSystem<f64> {
        let c = coords(dim);
        let d = (0..n).map(|_| PlaneBlock::scaled_identity(dim, 1.0, c.clone()).unwrap()).collect();
        let z = || (0..n - 1).map(|_| PlaneBlock::zeros(dim, c.clone()).unwrap()).collect();
        let rhs = (0..n).map(|j| PlaneVector::new(j, (0..dim).map(|i| (i + j) as f64 + 1.0).collect())).collect();
        BlockTridiagonalSystem::new(d, z(), z(), rhs).unwrap()
    }

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let b = PlaneBlock::from_triplets(3, vec![(2, 1, 1.0), (0, 0, 2.0), (2, 1, 0.5), (1, 1, 0.0)], coords(3)).unwrap();
        assert_eq!(b.entries(), &[(0, 0, 2.0), (2, 1, 1.5)]);
    }

    #[test]
    fn out_of_range_entry_rejected() {
        let err = PlaneBlock::from_triplets(2, vec![(2, 0, 1.0)], coords(2)).unwrap_err();
        assert!(matches!(err, SystemError::IndexOutOfRange { row: 2, .. }));
    }

    #[test]
    fn identity_apply_returns_input() {
        let s = identity_system(3, 4);
        let u = s.rhs().to_vec();
        assert_eq!(apply(&s, &u).unwrap(), u);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let s = identity_system(3, 4);
        let u = planes_zeros(3, 4);
        assert_eq!(apply(&s, &u).unwrap(), u);
    }

    #[test]
    fn mismatched_plane_is_named() {
        let s = identity_system(3, 4);
        let mut u = planes_zeros::<f64>(3, 4);
        u[2].values.pop();
        assert_eq!(
            apply(&s, &u).unwrap_err(),
            SystemError::DimensionMismatch {
                plane: 2,
                expected: 4,
                found: 3
            }
        );
    }

    #[test]
    fn residual_edge_cases() {
        let s = identity_system(2, 3);
        let f = s.rhs().to_vec();
        assert!(relative_residual(&s, &f, &f).unwrap() <= 1e-15);
        let zero = planes_zeros(2, 3);
        assert_eq!(relative_residual(&s, &zero, &f).unwrap(), 1.0);
        assert_eq!(relative_residual(&s, &f, &zero).unwrap_err(), SystemError::ZeroRightHandSide);
    }

    #[test]
    fn grid_rejects_single_point() {
        assert!(GridSpec::new(1).is_err());
        let g = GridSpec::new(4).unwrap();
        assert_eq!(g.plane_size(), 16);
        assert_eq!(g.plane_coords::<f64>().len(), 16);
    }
}
