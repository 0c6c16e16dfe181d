//! Hierarchical matrices over a geometric block cluster tree.
//!
//! An [`HMatrix`] stores a square matrix in tree order: admissible blocks as
//! truncated outer products `U Vᵀ`, inadmissible leaf blocks densely. All
//! arithmetic recompresses to a relative tolerance `eps`, discarding singular
//! values `σ_i ≤ eps · σ_1` of each leaf.

mod block_tree;
mod cluster;
mod lowrank;
mod node;

pub use block_tree::{Admissibility, BlockClusterTree, BlockKind, BlockNode};
pub use cluster::{BoundingBox, Cluster, ClusterTree};
pub use lowrank::{truncate_factors, LowRank};
pub use node::HNode;

use crate::scalar::Scalar;
use crate::system::PlaneBlock;
use nalgebra::{DMatrix, DVector};
use node::Ctx;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HMatrixError {
    #[error("cannot cluster an empty point set")]
    EmptyPointSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operands do not share a block cluster tree")]
    StructureMismatch,
    #[error("materializing a {rows}x{cols} leaf needs {bytes} bytes, above the cap of {cap}")]
    LeafTooLarge {
        rows: usize,
        cols: usize,
        bytes: usize,
        cap: usize,
    },
    #[error("singular block on cluster {cluster} (indices {start}..{end}), condition estimate {condition:e}")]
    SingularLeaf {
        cluster: usize,
        start: usize,
        end: usize,
        condition: f64,
    },
}

/// Default cap on the memory a single leaf may materialize during
/// compression (256 MiB).
pub const DEFAULT_MAX_LEAF_BYTES: usize = 256 << 20;

/// Leaf rank statistics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankStats {
    pub average_rank: f64,
    pub largest_rank: usize,
    pub dense_leaf_count: usize,
    pub lowrank_leaf_count: usize,
    pub bytes: usize,
}

impl RankStats {
    /// Pools several statistics; the average is weighted by leaf count.
    pub fn merge(items: impl IntoIterator<Item = RankStats>) -> RankStats {
        let mut out = RankStats::default();
        let mut rank_sum = 0.0;
        for s in items {
            rank_sum += s.average_rank * s.lowrank_leaf_count as f64;
            out.largest_rank = out.largest_rank.max(s.largest_rank);
            out.dense_leaf_count += s.dense_leaf_count;
            out.lowrank_leaf_count += s.lowrank_leaf_count;
            out.bytes += s.bytes;
        }
        if out.lowrank_leaf_count > 0 {
            out.average_rank = rank_sum / out.lowrank_leaf_count as f64;
        }
        out
    }
}

/// One node of the JSON structure dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<BlockDump>,
}

/// Builds the shared structure for every plane block of a grid.
pub fn build_structure<T: Scalar>(
    coords: &[[T; 2]],
    leaf_size: usize,
    admissibility: Admissibility,
) -> Result<Arc<BlockClusterTree<T>>, HMatrixError> {
    let ct = ClusterTree::build(coords, leaf_size)?;
    Ok(Arc::new(BlockClusterTree::build(ct, admissibility)?))
}

#[derive(Debug, Clone)]
pub struct HMatrix<T: Scalar> {
    tree: Arc<BlockClusterTree<T>>,
    root: HNode<T>,
    eps: T,
    condition_cap: T,
}

impl<T: Scalar> PartialEq for HMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.same_structure(other) && self.root == other.root && self.eps == other.eps
    }
}

impl<T: Scalar> HMatrix<T> {
    fn ctx(&self) -> Ctx<'_, T> {
        self.ctx_eps(self.eps)
    }

    fn ctx_eps(&self, eps: T) -> Ctx<'_, T> {
        Ctx {
            tree: &self.tree,
            eps,
            condition_cap: self.condition_cap,
        }
    }

    fn wrap(&self, root: HNode<T>, eps: T) -> Self {
        Self {
            tree: self.tree.clone(),
            root,
            eps,
            condition_cap: self.condition_cap,
        }
    }

    fn new_with(tree: Arc<BlockClusterTree<T>>, eps: T, build: impl FnOnce(&Ctx<'_, T>) -> HNode<T>) -> Self {
        let condition_cap = crate::dense::default_condition_cap();
        let root = build(&Ctx {
            tree: &tree,
            eps,
            condition_cap,
        });
        Self {
            tree,
            root,
            eps,
            condition_cap,
        }
    }

    pub fn zeros(tree: Arc<BlockClusterTree<T>>, eps: T) -> Self {
        Self::new_with(tree, eps, |c| c.zero(0))
    }

    pub fn identity(tree: Arc<BlockClusterTree<T>>, eps: T) -> Self {
        Self::new_with(tree, eps, |c| c.identity(0))
    }

    /// Compress a dense matrix given in original index order.
    pub fn from_dense(tree: Arc<BlockClusterTree<T>>, m: &DMatrix<T>, eps: T) -> Result<Self, HMatrixError> {
        let n = tree.size();
        if m.shape() != (n, n) {
            return Err(HMatrixError::DimensionMismatch {
                expected: n,
                found: m.nrows(),
            });
        }
        let perm = tree.clusters().perm().to_vec();
        let permuted = DMatrix::from_fn(n, n, |r, c| m[(perm[r], perm[c])]);
        Ok(Self::new_with(tree, eps, |c| c.from_dense(0, permuted.as_view())))
    }

    /// Block-wise compression of a sparse plane block: dense leaves are
    /// copied, admissible leaves are materialized and truncated.
    pub fn compress_sparse(block: &PlaneBlock<T>, tree: Arc<BlockClusterTree<T>>, eps: T) -> Result<Self, HMatrixError> {
        Self::compress_sparse_capped(block, tree, eps, DEFAULT_MAX_LEAF_BYTES)
    }

    pub fn compress_sparse_capped(
        block: &PlaneBlock<T>,
        tree: Arc<BlockClusterTree<T>>,
        eps: T,
        max_leaf_bytes: usize,
    ) -> Result<Self, HMatrixError> {
        if block.dim() != tree.size() {
            return Err(HMatrixError::DimensionMismatch {
                expected: tree.size(),
                found: block.dim(),
            });
        }
        let iperm = tree.clusters().iperm();
        let entries = block.entries().iter().map(|&(r, c, v)| (iperm[r], iperm[c], v)).collect();
        let condition_cap = crate::dense::default_condition_cap();
        let root = Ctx {
            tree: &tree,
            eps,
            condition_cap,
        }
        .from_sparse(0, entries, max_leaf_bytes)?;
        Ok(Self {
            tree,
            root,
            eps,
            condition_cap,
        })
    }

    /// Override the condition-number cap used when inverting dense leaves.
    pub fn with_condition_cap(mut self, cap: T) -> Self {
        self.condition_cap = cap;
        self
    }

    pub fn tree(&self) -> &Arc<BlockClusterTree<T>> {
        &self.tree
    }

    pub fn root(&self) -> &HNode<T> {
        &self.root
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.tree.size()
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.tree, &other.tree) || *self.tree == *other.tree
    }

    fn check(&self, other: &Self) -> Result<(), HMatrixError> {
        if self.same_structure(other) {
            Ok(())
        } else {
            Err(HMatrixError::StructureMismatch)
        }
    }

    /// Dense reconstruction in original index order.
    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut t = DMatrix::zeros(n, n);
        self.ctx().to_dense(0, &self.root, &mut t.as_view_mut());
        let iperm = self.tree.clusters().iperm();
        DMatrix::from_fn(n, n, |r, c| t[(iperm[r], iperm[c])])
    }

    /// `y = H x` for `x` in original index order.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>, HMatrixError> {
        let mut y = vec![T::zero(); self.dim()];
        self.matvec_acc(T::one(), x, &mut y)?;
        Ok(y)
    }

    /// `y += alpha · H x`
    pub fn matvec_acc(&self, alpha: T, x: &[T], y: &mut [T]) -> Result<(), HMatrixError> {
        let n = self.dim();
        for len in [x.len(), y.len()] {
            if len != n {
                return Err(HMatrixError::DimensionMismatch { expected: n, found: len });
            }
        }
        let clusters = self.tree.clusters();
        let xt = DVector::from_vec(clusters.to_tree_order(x));
        let mut yt = DVector::zeros(n);
        self.ctx().apply(0, &self.root, alpha, &xt.as_view(), &mut yt.as_view_mut());
        for (k, &orig) in clusters.perm().iter().enumerate() {
            y[orig] += yt[k];
        }
        Ok(())
    }

    /// `A + B` truncated to `eps`.
    pub fn add(&self, other: &Self, eps: T) -> Result<Self, HMatrixError> {
        self.check(other)?;
        Ok(self.wrap(self.ctx_eps(eps).add(0, &self.root, T::one(), &other.root), eps))
    }

    /// `A - B` truncated to `eps`.
    pub fn sub(&self, other: &Self, eps: T) -> Result<Self, HMatrixError> {
        self.check(other)?;
        Ok(self.wrap(self.ctx_eps(eps).add(0, &self.root, -T::one(), &other.root), eps))
    }

    pub fn scaled(&self, alpha: T) -> Self {
        let mut out = self.clone();
        self.ctx().scale(&mut out.root, alpha);
        out
    }

    /// `A · B` on the shared structure.
    pub fn multiply(&self, other: &Self, eps: T) -> Result<Self, HMatrixError> {
        let mut out = self.wrap(self.ctx().zero(0), eps);
        out.mul_acc(T::one(), self, other, eps)?;
        Ok(out)
    }

    /// `self += alpha · A · B`, recompressing every accumulation to `eps`.
    pub fn mul_acc(&mut self, alpha: T, a: &Self, b: &Self, eps: T) -> Result<(), HMatrixError> {
        self.check(a)?;
        self.check(b)?;
        let tree = self.tree.clone();
        let ctx = Ctx {
            tree: &tree,
            eps,
            condition_cap: self.condition_cap,
        };
        ctx.mul_acc(0, &mut self.root, alpha, 0, &a.root, 0, &b.root);
        self.eps = self.eps.max(eps);
        Ok(())
    }

    /// H-inverse by recursive block elimination.
    pub fn invert(&self, eps: T) -> Result<Self, HMatrixError> {
        let root = self.ctx_eps(eps).invert(0, &self.root)?;
        Ok(self.wrap(root, eps))
    }

    pub fn rank_stats(&self) -> RankStats {
        let mut s = RankStats::default();
        let mut rank_sum = 0usize;
        self.visit_leaves(&mut |id, node| {
            let admissible = matches!(self.tree.node(id).kind, BlockKind::Admissible);
            if admissible {
                let r = match node {
                    HNode::LowRank(lr) => lr.rank(),
                    _ => unreachable!("admissible leaves are low rank"),
                };
                s.lowrank_leaf_count += 1;
                s.largest_rank = s.largest_rank.max(r);
                rank_sum += r;
            } else {
                s.dense_leaf_count += 1;
            }
        });
        if s.lowrank_leaf_count > 0 {
            s.average_rank = rank_sum as f64 / s.lowrank_leaf_count as f64;
        }
        s.bytes = self.memory_footprint();
        s
    }

    /// Bytes of leaf data: `m·n` per stored dense leaf and `(m+n)·k` per
    /// low-rank leaf, times the scalar size.
    pub fn memory_footprint(&self) -> usize {
        let mut bytes = 0;
        self.visit_leaves(&mut |_, node| {
            bytes += match node {
                HNode::Dense(d) => d.len() * std::mem::size_of::<T>(),
                HNode::LowRank(lr) => lr.bytes(),
                HNode::Split(_) => 0,
            }
        });
        bytes
    }

    fn visit_leaves(&self, f: &mut impl FnMut(usize, &HNode<T>)) {
        fn walk<T: Scalar>(tree: &BlockClusterTree<T>, id: usize, node: &HNode<T>, f: &mut impl FnMut(usize, &HNode<T>)) {
            match node {
                HNode::Split(children) => {
                    let BlockKind::Split { children: ids, .. } = &tree.node(id).kind else {
                        unreachable!("storage mirrors the tree")
                    };
                    for (&cid, child) in ids.iter().zip(children) {
                        walk(tree, cid, child, f);
                    }
                }
                leaf => f(id, leaf),
            }
        }
        walk(&self.tree, 0, &self.root, f);
    }

    /// Nested structure description for external rank maps.
    pub fn dump(&self) -> BlockDump {
        fn walk<T: Scalar>(tree: &BlockClusterTree<T>, id: usize, node: &HNode<T>) -> BlockDump {
            let (r0, r1) = tree.rows(id);
            let (c0, c1) = tree.cols(id);
            let (kind, rank, children) = match node {
                HNode::Split(children) => {
                    let BlockKind::Split { children: ids, .. } = &tree.node(id).kind else {
                        unreachable!("storage mirrors the tree")
                    };
                    let dumped = ids.iter().zip(children).map(|(&c, n)| walk(tree, c, n)).collect();
                    ("split", None, dumped)
                }
                HNode::LowRank(lr) if matches!(tree.node(id).kind, BlockKind::Admissible) => {
                    ("lowrank", Some(lr.rank()), Vec::new())
                }
                _ => ("dense", None, Vec::new()),
            };
            BlockDump {
                rows: [r0, r1],
                cols: [c0, c1],
                kind: kind.to_string(),
                rank,
                children,
            }
        }
        walk(&self.tree, 0, &self.root)
    }

    pub fn dump_json(&self) -> String {
        serde_json::to_string(&self.dump()).expect("dump serializes")
    }
}
