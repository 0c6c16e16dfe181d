//! Block cyclic reduction with dense or hierarchical plane blocks.
//!
//! Each level eliminates the even-indexed planes of the current system and
//! keeps the odd ones. For odd `j` the reduced blocks are
//!
//! ```text
//! E'_j = −E_j D⁻¹_{j−1} E_{j−1}
//! D'_j = D_j − E_j D⁻¹_{j−1} F_{j−1} − F_j D⁻¹_{j+1} E_{j+1}
//! F'_j = −F_j D⁻¹_{j+1} F_{j+1}
//! ```
//!
//! with terms for missing neighbors dropped, so a level of `c` planes
//! leaves `⌊c/2⌋`. The factorization keeps every level's `E`, `F` and the
//! inverses of eliminated planes; solves then need matvecs only. The last
//! few planes (one by default) are factored by block LU.

mod block;

pub use block::{Arith, ArithmeticMode, Block};

use crate::hmatrix::{HMatrixError, RankStats};
use crate::scalar::Scalar;
use crate::system::{BlockTridiagonalSystem, PlaneVector, SystemError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcrError {
    #[error("singular diagonal block at level {level}, plane {plane}: {source}")]
    Singular {
        level: usize,
        /// Original (level-0) plane index.
        plane: usize,
        source: HMatrixError,
    },
    #[error(transparent)]
    HMatrix(#[from] HMatrixError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrConfig {
    pub mode: ArithmeticMode,
    /// Reduction stops once at most this many planes remain.
    pub stop_planes: usize,
}

impl AcrConfig {
    pub fn dense() -> Self {
        Self {
            mode: ArithmeticMode::Dense,
            stop_planes: 1,
        }
    }

    pub fn hierarchical(eps: f64, eta: f64, leaf_size: usize) -> Self {
        Self {
            mode: ArithmeticMode::hierarchical(eps, eta, leaf_size),
            stop_planes: 1,
        }
    }
}

pub type SharedBlock<T> = Arc<Block<T>>;

/// Block tridiagonal system in block storage, the input of one reduction
/// step. `e[0]` and `f[last]` are `None`.
#[derive(Debug, Clone)]
pub struct ReducedSystem<T: Scalar> {
    /// Original plane index of each plane.
    pub planes: Vec<usize>,
    pub d: Vec<Block<T>>,
    pub e: Vec<Option<SharedBlock<T>>>,
    pub f: Vec<Option<SharedBlock<T>>>,
}

impl<T: Scalar> ReducedSystem<T> {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// Compresses every block of `system` (in parallel over planes).
    pub fn from_system(system: &BlockTridiagonalSystem<T>, arith: &Arith<T>) -> Result<Self, AcrError> {
        let n = system.plane_count();
        let d = (0..n)
            .into_par_iter()
            .map(|j| arith.compress(system.d(j)))
            .collect::<Result<Vec<_>, _>>()?;
        let compress_opt = |b: Option<&crate::system::PlaneBlock<T>>| -> Result<Option<SharedBlock<T>>, AcrError> {
            b.map(|b| arith.compress(b).map(Arc::new)).transpose().map_err(AcrError::from)
        };
        let e = (0..n)
            .into_par_iter()
            .map(|j| compress_opt(system.e(j)))
            .collect::<Result<Vec<_>, _>>()?;
        let f = (0..n)
            .into_par_iter()
            .map(|j| compress_opt(system.f_block(j)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            planes: (0..n).collect(),
            d,
            e,
            f,
        })
    }

    /// Checks the three-band shape: `E` present except on the first plane,
    /// `F` present except on the last.
    pub fn is_tridiagonal(&self) -> bool {
        let n = self.len();
        self.e.len() == n
            && self.f.len() == n
            && self.planes.len() == n
            && (0..n).all(|j| self.e[j].is_some() == (j > 0) && self.f[j].is_some() == (j + 1 < n))
    }

    /// Dense reconstruction of the whole reduced operator.
    pub fn to_dense(&self) -> nalgebra::DMatrix<T> {
        let n = self.len();
        let dim = self.d[0].dim();
        let mut out = nalgebra::DMatrix::zeros(n * dim, n * dim);
        for j in 0..n {
            out.view_mut((j * dim, j * dim), (dim, dim)).copy_from(&self.d[j].to_dense());
            if let Some(e) = &self.e[j] {
                out.view_mut((j * dim, (j - 1) * dim), (dim, dim)).copy_from(&e.to_dense());
            }
            if let Some(f) = &self.f[j] {
                out.view_mut((j * dim, (j + 1) * dim), (dim, dim)).copy_from(&f.to_dense());
            }
        }
        out
    }
}

/// Blocks of one eliminated plane's neighbor, as seen by an odd plane.
#[derive(Clone, Copy)]
pub(crate) struct Neighbor<'a, T: Scalar> {
    pub inv: &'a Block<T>,
    pub e: Option<&'a Block<T>>,
    pub f: Option<&'a Block<T>>,
}

/// Reduced blocks `(D', E', F')` of odd plane `j`.
pub(crate) fn eliminate_odd<T: Scalar>(
    arith: &Arith<T>,
    d: &Block<T>,
    e: &Block<T>,
    f: Option<&Block<T>>,
    prev: Neighbor<'_, T>,
    next: Option<Neighbor<'_, T>>,
) -> (Block<T>, Option<Block<T>>, Option<Block<T>>) {
    let minus = -T::one();
    let mut d_new = d.clone();
    let x = arith.mul(e, prev.inv);
    arith.mul_acc(&mut d_new, minus, &x, prev.f.expect("interior neighbor couples forward"));
    let e_new = prev.e.map(|pe| {
        let mut z = arith.zeros_like(d);
        arith.mul_acc(&mut z, minus, &x, pe);
        z
    });
    drop(x);
    let mut f_new = None;
    if let Some(nb) = next {
        let y = arith.mul(f.expect("plane with a successor has F"), nb.inv);
        arith.mul_acc(&mut d_new, minus, &y, nb.e.expect("successor couples backward"));
        f_new = nb.f.map(|nf| {
            let mut z = arith.zeros_like(d);
            arith.mul_acc(&mut z, minus, &y, nf);
            z
        });
    }
    (d_new, e_new, f_new)
}

/// Stored data of one elimination level.
#[derive(Debug, Clone)]
pub struct Level<T: Scalar> {
    /// Original plane index of each plane at this level.
    pub planes: Vec<usize>,
    /// Inverses of the eliminated (even) planes; `None` on odd planes.
    pub inv: Vec<Option<SharedBlock<T>>>,
    pub e: Vec<Option<SharedBlock<T>>>,
    pub f: Vec<Option<SharedBlock<T>>>,
    pub invert_seconds: f64,
    pub update_seconds: f64,
}

impl<T: Scalar> Level<T> {
    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    fn blocks(&self) -> impl Iterator<Item = &Block<T>> {
        self.inv
            .iter()
            .chain(&self.e)
            .chain(&self.f)
            .filter_map(|b| b.as_deref())
    }

    pub fn bytes(&self) -> usize {
        self.blocks().map(Block::bytes).sum()
    }

    pub fn rank_stats(&self) -> RankStats {
        RankStats::merge(self.blocks().map(Block::rank_stats))
    }
}

/// Inverts the diagonal blocks of even planes.
pub(crate) fn invert_even<T: Scalar>(
    arith: &Arith<T>,
    level: usize,
    planes: &[usize],
    d: &[Block<T>],
) -> Result<Vec<Option<SharedBlock<T>>>, AcrError> {
    (0..d.len())
        .into_par_iter()
        .map(|j| {
            if j % 2 == 1 {
                return Ok(None);
            }
            arith
                .invert(&d[j])
                .map(|b| Some(Arc::new(b)))
                .map_err(|source| AcrError::Singular {
                    level,
                    plane: planes[j],
                    source,
                })
        })
        .collect()
}

/// One red/black reduction step: eliminates the even planes of `sys`.
///
/// Returns the reduced system on the odd planes and the data kept for
/// solves. Requires at least two planes.
pub fn schur_step<T: Scalar>(
    arith: &Arith<T>,
    sys: ReducedSystem<T>,
    level: usize,
) -> Result<(ReducedSystem<T>, Level<T>), AcrError> {
    let n = sys.len();
    if n < 2 {
        return Err(AcrError::Config(format!("a reduction step needs two planes, got {n}")));
    }
    let t0 = Instant::now();
    let inv = invert_even(arith, level, &sys.planes, &sys.d)?;
    let t1 = Instant::now();
    let odd: Vec<usize> = (1..n).step_by(2).collect();
    let reduced: Vec<_> = odd
        .par_iter()
        .map(|&j| {
            let prev = Neighbor {
                inv: inv[j - 1].as_deref().expect("even plane inverted"),
                e: sys.e[j - 1].as_deref(),
                f: sys.f[j - 1].as_deref(),
            };
            let next = (j + 1 < n).then(|| Neighbor {
                inv: inv[j + 1].as_deref().expect("even plane inverted"),
                e: sys.e[j + 1].as_deref(),
                f: sys.f[j + 1].as_deref(),
            });
            eliminate_odd(
                arith,
                &sys.d[j],
                sys.e[j].as_deref().expect("odd plane has a predecessor"),
                sys.f[j].as_deref(),
                prev,
                next,
            )
        })
        .collect();
    let update_seconds = t1.elapsed().as_secs_f64();
    let mut next = ReducedSystem {
        planes: odd.iter().map(|&j| sys.planes[j]).collect(),
        d: Vec::with_capacity(odd.len()),
        e: Vec::with_capacity(odd.len()),
        f: Vec::with_capacity(odd.len()),
    };
    for (d, e, f) in reduced {
        next.d.push(d);
        next.e.push(e.map(Arc::new));
        next.f.push(f.map(Arc::new));
    }
    let stored = Level {
        planes: sys.planes,
        inv,
        e: sys.e,
        f: sys.f,
        invert_seconds: (t1 - t0).as_secs_f64(),
        update_seconds,
    };
    Ok((next, stored))
}

/// Block LU of the final planes: `G_k = (D_k − E_k G_{k−1} F_{k−1})⁻¹`.
#[derive(Debug, Clone)]
pub struct Apex<T: Scalar> {
    pub planes: Vec<usize>,
    pub inv: Vec<SharedBlock<T>>,
    pub e: Vec<Option<SharedBlock<T>>>,
    pub f: Vec<Option<SharedBlock<T>>>,
    pub seconds: f64,
}

impl<T: Scalar> Apex<T> {
    pub(crate) fn factor(arith: &Arith<T>, sys: ReducedSystem<T>, level: usize) -> Result<Self, AcrError> {
        let t0 = Instant::now();
        let mut inv: Vec<SharedBlock<T>> = Vec::with_capacity(sys.len());
        for (k, d) in sys.d.into_iter().enumerate() {
            let mut pivot = d;
            if k > 0 {
                let e = sys.e[k].as_deref().expect("interior plane");
                let f = sys.f[k - 1].as_deref().expect("interior plane");
                let eg = arith.mul(e, &inv[k - 1]);
                arith.mul_acc(&mut pivot, -T::one(), &eg, f);
            }
            let g = arith.invert(&pivot).map_err(|source| AcrError::Singular {
                level,
                plane: sys.planes[k],
                source,
            })?;
            inv.push(Arc::new(g));
        }
        Ok(Self {
            planes: sys.planes,
            inv,
            e: sys.e,
            f: sys.f,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }

    fn blocks(&self) -> impl Iterator<Item = &Block<T>> {
        self.inv
            .iter()
            .map(|b| &**b)
            .chain(self.e.iter().chain(&self.f).filter_map(|b| b.as_deref()))
    }

    pub fn bytes(&self) -> usize {
        self.blocks().map(Block::bytes).sum()
    }

    pub fn rank_stats(&self) -> RankStats {
        RankStats::merge(self.blocks().map(Block::rank_stats))
    }

    pub(crate) fn solve(&self, f: Vec<Vec<T>>) -> Vec<Vec<T>> {
        let m = self.inv.len();
        let dim = f[0].len();
        let mut z: Vec<Vec<T>> = Vec::with_capacity(m);
        for (k, mut rhs) in f.into_iter().enumerate() {
            if k > 0 {
                self.e[k].as_ref().expect("interior plane").matvec_acc(-T::one(), &z[k - 1], &mut rhs);
            }
            let mut zk = vec![T::zero(); dim];
            self.inv[k].matvec_acc(T::one(), &rhs, &mut zk);
            z.push(zk);
        }
        for k in (0..m.saturating_sub(1)).rev() {
            let mut t = vec![T::zero(); dim];
            self.f[k].as_ref().expect("interior plane").matvec_acc(T::one(), &z[k + 1], &mut t);
            self.inv[k].matvec_acc(-T::one(), &t, &mut z[k]);
        }
        z
    }
}

/// Per-level summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetadata {
    pub level: usize,
    pub planes: usize,
    pub eliminated: usize,
    pub bytes: usize,
    pub average_rank: f64,
    pub largest_rank: usize,
    pub invert_seconds: f64,
    pub update_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMetadata {
    pub mode: ArithmeticMode,
    pub planes: usize,
    pub plane_dim: usize,
    pub levels: Vec<LevelMetadata>,
    pub apex_planes: usize,
    pub apex_bytes: usize,
    pub total_bytes: usize,
    pub average_rank: f64,
    pub largest_rank: usize,
    pub factor_seconds: f64,
}

/// Stored cyclic-reduction factorization.
#[derive(Debug, Clone)]
pub struct AcrFactorization<T: Scalar> {
    arith: Arith<T>,
    levels: Vec<Level<T>>,
    apex: Apex<T>,
    plane_dim: usize,
    factor_seconds: f64,
}

impl<T: Scalar> AcrFactorization<T> {
    pub(crate) fn from_parts(arith: Arith<T>, levels: Vec<Level<T>>, apex: Apex<T>, plane_dim: usize, factor_seconds: f64) -> Self {
        Self {
            arith,
            levels,
            apex,
            plane_dim,
            factor_seconds,
        }
    }

    pub fn mode(&self) -> ArithmeticMode {
        self.arith.mode()
    }

    pub fn levels(&self) -> &[Level<T>] {
        &self.levels
    }

    pub fn apex(&self) -> &Apex<T> {
        &self.apex
    }

    pub fn plane_count(&self) -> usize {
        self.levels.first().map_or(self.apex.planes.len(), Level::len)
    }

    pub fn plane_dim(&self) -> usize {
        self.plane_dim
    }

    /// Stored bytes over all levels and the apex.
    pub fn bytes(&self) -> usize {
        self.levels.iter().map(Level::bytes).sum::<usize>() + self.apex.bytes()
    }

    /// Leaf rank statistics pooled over every stored block.
    pub fn rank_stats(&self) -> RankStats {
        RankStats::merge(self.levels.iter().map(Level::rank_stats).chain([self.apex.rank_stats()]))
    }

    pub fn factor_seconds(&self) -> f64 {
        self.factor_seconds
    }

    pub fn metadata(&self) -> FactorMetadata {
        let stats = self.rank_stats();
        FactorMetadata {
            mode: self.mode(),
            planes: self.plane_count(),
            plane_dim: self.plane_dim,
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let s = l.rank_stats();
                    LevelMetadata {
                        level: i,
                        planes: l.len(),
                        eliminated: l.len().div_ceil(2),
                        bytes: s.bytes,
                        average_rank: s.average_rank,
                        largest_rank: s.largest_rank,
                        invert_seconds: l.invert_seconds,
                        update_seconds: l.update_seconds,
                    }
                })
                .collect(),
            apex_planes: self.apex.planes.len(),
            apex_bytes: self.apex.bytes(),
            total_bytes: stats.bytes,
            average_rank: stats.average_rank,
            largest_rank: stats.largest_rank,
            factor_seconds: self.factor_seconds,
        }
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string(&self.metadata()).expect("metadata serializes")
    }

    /// Solves `A u = f` with the stored factors.
    pub fn solve(&self, f: &[PlaneVector<T>]) -> Result<Vec<PlaneVector<T>>, AcrError> {
        let n = self.plane_count();
        if f.len() != n {
            return Err(SystemError::PlaneCount {
                expected: n,
                found: f.len(),
            }
            .into());
        }
        for (j, v) in f.iter().enumerate() {
            if v.len() != self.plane_dim {
                return Err(SystemError::DimensionMismatch {
                    plane: j,
                    expected: self.plane_dim,
                    found: v.len(),
                }
                .into());
            }
        }
        let rhs: Vec<Vec<T>> = f.iter().map(|p| p.values.clone()).collect();
        let u = self.solve_raw(rhs);
        Ok(u.into_iter().enumerate().map(|(j, v)| PlaneVector::new(j, v)).collect())
    }

    fn solve_raw(&self, mut rhs: Vec<Vec<T>>) -> Vec<Vec<T>> {
        // forward: keep D⁻¹ f of eliminated planes for back-substitution
        let mut saved: Vec<(Vec<Vec<T>>, Vec<Option<Vec<T>>>)> = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let (next, w) = reduce_rhs(level, &rhs);
            saved.push((rhs, w));
            rhs = next;
        }
        let mut u = self.apex.solve(rhs);
        for (level, (_, w)) in self.levels.iter().zip(saved).rev() {
            u = back_substitute(level, w, u);
        }
        u
    }
}

/// Forward reduction of one level: returns `f'` on the odd planes and
/// `D⁻¹ f` on the even planes.
pub(crate) fn reduce_rhs<T: Scalar>(level: &Level<T>, f: &[Vec<T>]) -> (Vec<Vec<T>>, Vec<Option<Vec<T>>>) {
    let n = level.len();
    let w: Vec<Option<Vec<T>>> = (0..n)
        .into_par_iter()
        .map(|j| level.inv[j].as_ref().map(|inv| apply_inv(inv, &f[j])))
        .collect();
    let next = (1..n)
        .step_by(2)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&j| reduce_plane(level, j, &f[j], w[j - 1].as_deref(), w.get(j + 1).and_then(|x| x.as_deref())))
        .collect();
    (next, w)
}

pub(crate) fn apply_inv<T: Scalar>(inv: &Block<T>, x: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    inv.matvec_acc(T::one(), x, &mut y);
    y
}

/// `f_j − E_j w_{j−1} − F_j w_{j+1}` for odd `j`.
pub(crate) fn reduce_plane<T: Scalar>(level: &Level<T>, j: usize, f: &[T], w_prev: Option<&[T]>, w_next: Option<&[T]>) -> Vec<T> {
    let mut out = f.to_vec();
    if let (Some(e), Some(w)) = (&level.e[j], w_prev) {
        e.matvec_acc(-T::one(), w, &mut out);
    }
    if let (Some(fb), Some(w)) = (&level.f[j], w_next) {
        fb.matvec_acc(-T::one(), w, &mut out);
    }
    out
}

/// `u_j = w_j − D⁻¹_j (E_j u_{j−1} + F_j u_{j+1})` for even `j`.
pub(crate) fn back_plane<T: Scalar>(level: &Level<T>, j: usize, w: Vec<T>, u_prev: Option<&[T]>, u_next: Option<&[T]>) -> Vec<T> {
    let mut t = vec![T::zero(); w.len()];
    if let (Some(e), Some(u)) = (&level.e[j], u_prev) {
        e.matvec_acc(T::one(), u, &mut t);
    }
    if let (Some(fb), Some(u)) = (&level.f[j], u_next) {
        fb.matvec_acc(T::one(), u, &mut t);
    }
    let mut out = w;
    level.inv[j].as_ref().expect("even plane").matvec_acc(-T::one(), &t, &mut out);
    out
}

/// Interleaves the odd-plane solution `u_odd` with recovered even planes.
fn back_substitute<T: Scalar>(level: &Level<T>, w: Vec<Option<Vec<T>>>, u_odd: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let n = level.len();
    let evens: Vec<(usize, Vec<T>)> = w
        .into_iter()
        .enumerate()
        .filter_map(|(j, w)| w.map(|w| (j, w)))
        .collect();
    let recovered: Vec<Vec<T>> = evens
        .into_par_iter()
        .map(|(j, w)| {
            let prev = (j > 0).then(|| u_odd[(j - 1) / 2].as_slice());
            let next = (j + 1 < n).then(|| u_odd[j / 2].as_slice());
            back_plane(level, j, w, prev, next)
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut odd = u_odd.into_iter();
    let mut even = recovered.into_iter();
    for j in 0..n {
        out.push(if j % 2 == 0 { even.next() } else { odd.next() }.expect("plane recovered"));
    }
    out
}

/// Cyclic-reduction factorization of `system` in the configured arithmetic.
pub fn acr_factor<T: Scalar>(system: &BlockTridiagonalSystem<T>, config: &AcrConfig) -> Result<AcrFactorization<T>, AcrError> {
    if config.stop_planes == 0 {
        return Err(AcrError::Config("stop_planes must be at least 1".into()));
    }
    let t0 = Instant::now();
    let arith = Arith::new(config.mode, system.coords())?;
    let mut sys = ReducedSystem::from_system(system, &arith)?;
    let mut levels = Vec::new();
    while sys.len() > config.stop_planes {
        let (next, level) = schur_step(&arith, sys, levels.len())?;
        levels.push(level);
        sys = next;
    }
    let apex = Apex::factor(&arith, sys, levels.len())?;
    Ok(AcrFactorization::from_parts(
        arith,
        levels,
        apex,
        system.plane_dim(),
        t0.elapsed().as_secs_f64(),
    ))
}

pub fn acr_solve<T: Scalar>(fact: &AcrFactorization<T>, f: &[PlaneVector<T>]) -> Result<Vec<PlaneVector<T>>, AcrError> {
    fact.solve(f)
}

/// Classic cyclic reduction with dense blocks.
pub fn cr_dense_factor<T: Scalar>(system: &BlockTridiagonalSystem<T>) -> Result<AcrFactorization<T>, AcrError> {
    acr_factor(system, &AcrConfig::dense())
}

pub fn cr_dense_solve<T: Scalar>(fact: &AcrFactorization<T>, f: &[PlaneVector<T>]) -> Result<Vec<PlaneVector<T>>, AcrError> {
    fact.solve(f)
}

/// Bytes stored by [`cr_dense_factor`] on `planes` planes of dimension
/// `plane_dim`: per level, inverses of the eliminated planes plus every
/// `E` and `F`, then the final inverse.
pub fn cr_dense_memory_estimate(planes: usize, plane_dim: usize, scalar_bytes: usize) -> usize {
    let mut blocks = 0;
    let mut c = planes;
    while c > 1 {
        blocks += c.div_ceil(2) + 2 * (c - 1);
        c /= 2;
    }
    (blocks + c) * plane_dim * plane_dim * scalar_bytes
}
