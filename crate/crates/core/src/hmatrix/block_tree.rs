//! Block cluster tree: the partition of `I × I` into admissible (low-rank),
//! dense and subdivided blocks.

use super::cluster::ClusterTree;
use super::HMatrixError;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Rule deciding which blocks may be stored in low-rank form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Admissibility {
    /// `min(diam τ, diam σ) ≤ η · dist(τ, σ)` on bounding boxes.
    Standard { eta: f64 },
    /// Every off-diagonal block is low rank.
    Weak,
}

impl Admissibility {
    pub fn standard(eta: f64) -> Result<Self, HMatrixError> {
        if eta > 0.0 && eta.is_finite() {
            Ok(Self::Standard { eta })
        } else {
            Err(HMatrixError::InvalidParameter(format!("eta must be positive, got {eta}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    Admissible,
    Dense,
    /// Children in row-major order over `rows × cols` sub-clusters.
    Split { rows: usize, cols: usize, children: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockNode {
    pub row: usize,
    pub col: usize,
    pub kind: BlockKind,
}

/// Tree of blocks sharing one row/column cluster tree (square blocks only).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockClusterTree<T> {
    clusters: ClusterTree<T>,
    nodes: Vec<BlockNode>,
    admissibility: Admissibility,
}

impl<T: Scalar> BlockClusterTree<T> {
    pub fn build(clusters: ClusterTree<T>, admissibility: Admissibility) -> Result<Self, HMatrixError> {
        if let Admissibility::Standard { eta } = admissibility {
            Admissibility::standard(eta)?;
        }
        let mut tree = Self {
            clusters,
            nodes: Vec::new(),
            admissibility,
        };
        let root = tree.clusters.root();
        tree.descend(root, root);
        Ok(tree)
    }

    fn is_admissible(&self, row: usize, col: usize) -> bool {
        match self.admissibility {
            Admissibility::Weak => row != col,
            Admissibility::Standard { eta } => {
                let a = &self.clusters.node(row).bbox;
                let b = &self.clusters.node(col).bbox;
                let dist = a.distance(b);
                dist > T::zero() && a.diameter().min(b.diameter()) <= T::of(eta) * dist
            }
        }
    }

    fn descend(&mut self, row: usize, col: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(BlockNode {
            row,
            col,
            kind: BlockKind::Dense,
        });
        let r = self.clusters.node(row);
        let c = self.clusters.node(col);
        let kind = if self.is_admissible(row, col) {
            BlockKind::Admissible
        } else if r.is_leaf() && c.is_leaf() {
            BlockKind::Dense
        } else {
            let rows = self.clusters.parts(row);
            let cols = self.clusters.parts(col);
            let mut children = Vec::with_capacity(rows.len() * cols.len());
            for &ri in &rows {
                for &ci in &cols {
                    children.push(self.descend(ri, ci));
                }
            }
            BlockKind::Split {
                rows: rows.len(),
                cols: cols.len(),
                children,
            }
        };
        self.nodes[id].kind = kind;
        id
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &BlockNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[BlockNode] {
        &self.nodes
    }

    pub fn clusters(&self) -> &ClusterTree<T> {
        &self.clusters
    }

    pub fn admissibility(&self) -> Admissibility {
        self.admissibility
    }

    pub fn size(&self) -> usize {
        self.clusters.size()
    }

    /// Row range `[start, end)` of a block in tree order.
    pub fn rows(&self, id: usize) -> (usize, usize) {
        let c = self.clusters.node(self.nodes[id].row);
        (c.start, c.end)
    }

    pub fn cols(&self, id: usize) -> (usize, usize) {
        let c = self.clusters.node(self.nodes[id].col);
        (c.start, c.end)
    }

    pub fn shape(&self, id: usize) -> (usize, usize) {
        let (r0, r1) = self.rows(id);
        let (c0, c1) = self.cols(id);
        (r1 - r0, c1 - c0)
    }

    /// Leaf ids in depth-first order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            match &self.nodes[id].kind {
                BlockKind::Split { children, .. } => stack.extend(children.iter().rev()),
                _ => out.push(id),
            }
        }
        out
    }

    /// Child id of split node `id` at grid position `(i, j)`.
    #[inline]
    pub fn child(&self, id: usize, i: usize, j: usize) -> usize {
        match &self.nodes[id].kind {
            BlockKind::Split { cols, children, .. } => children[i * cols + j],
            _ => panic!("block {id} is not subdivided"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<[f64; 2]> {
        (0..n * n).map(|k| [(k % n) as f64, (k / n) as f64]).collect()
    }

    #[test]
    fn root_block_is_never_admissible() {
        let ct = ClusterTree::build(&grid(8), 4).unwrap();
        let bct = BlockClusterTree::build(ct, Admissibility::Standard { eta: 1e6 }).unwrap();
        assert!(matches!(bct.node(0).kind, BlockKind::Split { .. }));
    }

    #[test]
    fn separated_clusters_are_admissible() {
        // two leaves of diameter 1 at distance 1: 1 <= 2 * 1
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let ct = ClusterTree::build(&pts, 2).unwrap();
        let bct = BlockClusterTree::build(ct, Admissibility::Standard { eta: 2.0 }).unwrap();
        let off = bct.child(0, 0, 1);
        assert_eq!(bct.node(off).kind, BlockKind::Admissible);
        assert_eq!(bct.node(bct.child(0, 0, 0)).kind, BlockKind::Dense);
        // eta = 0.5 makes the same pair inadmissible: 1 > 0.5 * 1
        let ct = ClusterTree::build(&pts, 2).unwrap();
        let bct = BlockClusterTree::build(ct, Admissibility::Standard { eta: 0.5 }).unwrap();
        assert_eq!(bct.node(bct.child(0, 0, 1)).kind, BlockKind::Dense);
    }

    #[test]
    fn leaves_tile_the_product_index_set() {
        let ct = ClusterTree::build(&grid(16), 8).unwrap();
        let bct = BlockClusterTree::build(ct, Admissibility::Standard { eta: 2.0 }).unwrap();
        let n = bct.size();
        let mut cover = vec![0u8; n * n];
        for id in bct.leaves() {
            let (r0, r1) = bct.rows(id);
            let (c0, c1) = bct.cols(id);
            for r in r0..r1 {
                for c in c0..c1 {
                    cover[r * n + c] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&v| v == 1));
    }

    #[test]
    fn weak_admissibility_makes_every_off_diagonal_a_leaf() {
        let ct = ClusterTree::build(&grid(8), 4).unwrap();
        let bct = BlockClusterTree::build(ct, Admissibility::Weak).unwrap();
        for node in bct.nodes() {
            if node.row != node.col {
                assert_eq!(node.kind, BlockKind::Admissible);
            }
        }
    }

    #[test]
    fn invalid_eta_rejected() {
        let ct = ClusterTree::build(&grid(2), 1).unwrap();
        assert!(BlockClusterTree::build(ct, Admissibility::Standard { eta: 0.0 }).is_err());
    }
}
