//! Plane-block arithmetic in either dense or hierarchical storage.

use crate::dense;
use crate::hmatrix::{build_structure, Admissibility, BlockClusterTree, HMatrix, HMatrixError, RankStats};
use crate::scalar::Scalar;
use crate::system::PlaneBlock;
use nalgebra::{DMatrix, DVectorView, DVectorViewMut};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// How plane blocks are stored and combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArithmeticMode {
    /// Exact dense blocks with LU inverses (classic cyclic reduction).
    Dense,
    /// H-matrices truncated to relative tolerance `eps`.
    Hierarchical {
        eps: f64,
        admissibility: Admissibility,
        leaf_size: usize,
        max_leaf_bytes: usize,
    },
}

impl ArithmeticMode {
    /// Standard admissibility with the given tolerance, `η` and leaf size.
    pub fn hierarchical(eps: f64, eta: f64, leaf_size: usize) -> Self {
        Self::Hierarchical {
            eps,
            admissibility: Admissibility::Standard { eta },
            leaf_size,
            max_leaf_bytes: crate::hmatrix::DEFAULT_MAX_LEAF_BYTES,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, Self::Dense)
    }
}

/// A plane block in the storage selected by [`ArithmeticMode`].
#[derive(Debug, Clone, PartialEq)]
pub enum Block<T: Scalar> {
    Dense(DMatrix<T>),
    Hier(HMatrix<T>),
}

impl<T: Scalar> Block<T> {
    pub fn dim(&self) -> usize {
        match self {
            Block::Dense(d) => d.nrows(),
            Block::Hier(h) => h.dim(),
        }
    }

    /// Stored bytes: dense `m·n` entries, or the H-matrix leaf footprint.
    pub fn bytes(&self) -> usize {
        match self {
            Block::Dense(d) => d.len() * std::mem::size_of::<T>(),
            Block::Hier(h) => h.memory_footprint(),
        }
    }

    /// Rank statistics; dense blocks count as one dense leaf.
    pub fn rank_stats(&self) -> RankStats {
        match self {
            Block::Dense(d) => RankStats {
                dense_leaf_count: 1,
                bytes: d.len() * std::mem::size_of::<T>(),
                ..RankStats::default()
            },
            Block::Hier(h) => h.rank_stats(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            Block::Dense(d) => d.clone(),
            Block::Hier(h) => h.to_dense(),
        }
    }

    /// `y += alpha · B x`
    pub fn matvec_acc(&self, alpha: T, x: &[T], y: &mut [T]) {
        match self {
            Block::Dense(d) => {
                let xv = DVectorView::from_slice(x, x.len());
                let mut yv = DVectorViewMut::from_slice(y, d.nrows());
                yv.gemv(alpha, d, &xv, T::one());
            }
            Block::Hier(h) => h.matvec_acc(alpha, x, y).expect("block dimensions agree"),
        }
    }
}

/// Arithmetic context shared by every block of one factorization.
#[derive(Debug, Clone)]
pub struct Arith<T: Scalar> {
    mode: ArithmeticMode,
    tree: Option<Arc<BlockClusterTree<T>>>,
    eps: T,
    condition_cap: T,
}

impl<T: Scalar> Arith<T> {
    /// Builds the shared plane structure from the plane coordinates.
    pub fn new(mode: ArithmeticMode, coords: &[[T; 2]]) -> Result<Self, HMatrixError> {
        let cap = dense::default_condition_cap();
        match mode {
            ArithmeticMode::Dense => Ok(Self {
                mode,
                tree: None,
                eps: T::zero(),
                condition_cap: cap,
            }),
            ArithmeticMode::Hierarchical {
                eps,
                admissibility,
                leaf_size,
                ..
            } => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(HMatrixError::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
                }
                if leaf_size == 0 {
                    return Err(HMatrixError::InvalidParameter("leaf size must be positive".into()));
                }
                Ok(Self {
                    mode,
                    tree: Some(build_structure(coords, leaf_size, admissibility)?),
                    eps: T::of(eps),
                    condition_cap: cap,
                })
            }
        }
    }

    pub fn mode(&self) -> ArithmeticMode {
        self.mode
    }

    pub fn tree(&self) -> Option<&Arc<BlockClusterTree<T>>> {
        self.tree.as_ref()
    }

    pub fn compress(&self, block: &PlaneBlock<T>) -> Result<Block<T>, HMatrixError> {
        match (&self.tree, self.mode) {
            (Some(tree), ArithmeticMode::Hierarchical { max_leaf_bytes, .. }) => Ok(Block::Hier(
                HMatrix::compress_sparse_capped(block, tree.clone(), self.eps, max_leaf_bytes)?
                    .with_condition_cap(self.condition_cap),
            )),
            _ => Ok(Block::Dense(block.to_dense())),
        }
    }

    /// Inverse; the error carries the condition estimate of the failing
    /// dense block or leaf.
    pub fn invert(&self, b: &Block<T>) -> Result<Block<T>, HMatrixError> {
        match b {
            Block::Dense(d) => dense::invert(d, self.condition_cap).map(Block::Dense).map_err(|s| {
                HMatrixError::SingularLeaf {
                    cluster: 0,
                    start: 0,
                    end: d.nrows(),
                    condition: s.condition,
                }
            }),
            Block::Hier(h) => h.invert(self.eps).map(Block::Hier),
        }
    }

    pub fn mul(&self, a: &Block<T>, b: &Block<T>) -> Block<T> {
        match (a, b) {
            (Block::Dense(a), Block::Dense(b)) => Block::Dense(a * b),
            (Block::Hier(a), Block::Hier(b)) => Block::Hier(a.multiply(b, self.eps).expect("shared structure")),
            _ => panic!("mixed block storage"),
        }
    }

    /// `c += alpha · a · b`
    pub fn mul_acc(&self, c: &mut Block<T>, alpha: T, a: &Block<T>, b: &Block<T>) {
        match (c, a, b) {
            (Block::Dense(c), Block::Dense(a), Block::Dense(b)) => c.gemm(alpha, a, b, T::one()),
            (Block::Hier(c), Block::Hier(a), Block::Hier(b)) => {
                c.mul_acc(alpha, a, b, self.eps).expect("shared structure")
            }
            _ => panic!("mixed block storage"),
        }
    }

    pub fn zeros_like(&self, b: &Block<T>) -> Block<T> {
        match b {
            Block::Dense(d) => Block::Dense(DMatrix::zeros(d.nrows(), d.ncols())),
            Block::Hier(h) => Block::Hier(HMatrix::zeros(h.tree().clone(), self.eps).with_condition_cap(self.condition_cap)),
        }
    }
}
