//! Geometric cluster tree over the nodes of one plane.

use super::HMatrixError;
use crate::scalar::Scalar;

/// Axis-aligned bounding box in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub min: [T; 2],
    pub max: [T; 2],
}

impl<T: Scalar> BoundingBox<T> {
    fn of_points<'a>(points: impl Iterator<Item = &'a [T; 2]>) -> Self {
        let mut min = [T::max_value().unwrap(); 2];
        let mut max = [T::min_value().unwrap(); 2];
        for p in points {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        Self { min, max }
    }

    /// Length of the box diagonal.
    pub fn diameter(&self) -> T {
        let dx = self.max[0] - self.min[0];
        let dy = self.max[1] - self.min[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Euclidean distance between two boxes, zero when they overlap.
    pub fn distance(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for d in 0..2 {
            let gap = (other.min[d] - self.max[d]).max(self.min[d] - other.max[d]).max(T::zero());
            acc += gap * gap;
        }
        acc.sqrt()
    }

    fn longest_axis(&self) -> usize {
        if self.max[1] - self.min[1] > self.max[0] - self.min[0] {
            1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    /// Index range `[start, end)` in tree order.
    pub start: usize,
    pub end: usize,
    pub bbox: BoundingBox<T>,
    pub children: Option<[usize; 2]>,
    pub depth: usize,
}

impl<T> Cluster<T> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary space partition of a point set. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree<T> {
    nodes: Vec<Cluster<T>>,
    /// `perm[k]` is the original index stored at tree position `k`.
    perm: Vec<usize>,
    /// Inverse of `perm`.
    iperm: Vec<usize>,
    leaf_size: usize,
}

impl<T: Scalar> ClusterTree<T> {
    /// Recursive bisection of the longest bounding-box axis at the median
    /// until a cluster holds at most `leaf_size` points. Ties in coordinate are
    /// broken by original index, so the tree is a pure function of the input.
    pub fn build(coords: &[[T; 2]], leaf_size: usize) -> Result<Self, HMatrixError> {
        if coords.is_empty() {
            return Err(HMatrixError::EmptyPointSet);
        }
        if leaf_size == 0 {
            return Err(HMatrixError::InvalidParameter("leaf size must be at least 1".into()));
        }
        let mut tree = Self {
            nodes: Vec::new(),
            perm: (0..coords.len()).collect(),
            iperm: Vec::new(),
            leaf_size,
        };
        tree.split(coords, 0, coords.len(), 0);
        let mut iperm = vec![0; coords.len()];
        for (k, &orig) in tree.perm.iter().enumerate() {
            iperm[orig] = k;
        }
        tree.iperm = iperm;
        Ok(tree)
    }

    fn split(&mut self, coords: &[[T; 2]], start: usize, end: usize, depth: usize) -> usize {
        let bbox = BoundingBox::of_points(self.perm[start..end].iter().map(|&i| &coords[i]));
        let id = self.nodes.len();
        self.nodes.push(Cluster {
            start,
            end,
            bbox,
            children: None,
            depth,
        });
        if end - start > self.leaf_size {
            let axis = bbox.longest_axis();
            self.perm[start..end].sort_by(|&a, &b| {
                coords[a][axis]
                    .partial_cmp(&coords[b][axis])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mid = start + (end - start) / 2;
            let left = self.split(coords, start, mid, depth + 1);
            let right = self.split(coords, mid, end, depth + 1);
            self.nodes[id].children = Some([left, right]);
        }
        id
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &Cluster<T> {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Cluster<T>] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.perm.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn iperm(&self) -> &[usize] {
        &self.iperm
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Cluster<T>> {
        self.nodes.iter().filter(|c| c.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|c| c.depth).max().unwrap_or(0)
    }

    /// Clusters that partition `id`: its children, or itself for a leaf.
    pub fn parts(&self, id: usize) -> Vec<usize> {
        match self.nodes[id].children {
            Some(c) => c.to_vec(),
            None => vec![id],
        }
    }

    /// Reorder an original-order vector into tree order.
    pub fn to_tree_order<V: Copy>(&self, x: &[V]) -> Vec<V> {
        self.perm.iter().map(|&i| x[i]).collect()
    }

    /// Reorder a tree-order vector back into original order.
    pub fn from_tree_order<V: Copy>(&self, x: &[V]) -> Vec<V> {
        self.iperm.iter().map(|&k| x[k]).collect()
    }
}
