//! Recursive kernels on the block tree. All index ranges are in tree order
//! and every view passed down is already restricted to the block's rows
//! and columns.

use super::block_tree::{BlockClusterTree, BlockKind};
use super::lowrank::{hcat, truncate_factors, LowRank};
use super::HMatrixError;
use crate::dense;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

/// Storage of one block. Inadmissible leaves hold `Dense`, or a rank-zero
/// `LowRank` placeholder while they are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub enum HNode<T: Scalar> {
    Dense(DMatrix<T>),
    LowRank(LowRank<T>),
    Split(Vec<HNode<T>>),
}

pub(crate) struct Ctx<'a, T: Scalar> {
    pub tree: &'a BlockClusterTree<T>,
    pub eps: T,
    pub condition_cap: T,
}

impl<T: Scalar> Ctx<'_, T> {
    fn grid(&self, id: usize) -> Option<(usize, usize)> {
        match &self.tree.node(id).kind {
            BlockKind::Split { rows, cols, .. } => Some((*rows, *cols)),
            _ => None,
        }
    }

    fn admissible(&self, id: usize) -> bool {
        matches!(self.tree.node(id).kind, BlockKind::Admissible)
    }

    /// Offset of child `cid` inside parent `pid`: (row offset, col offset).
    fn offset(&self, pid: usize, cid: usize) -> (usize, usize) {
        (
            self.tree.rows(cid).0 - self.tree.rows(pid).0,
            self.tree.cols(cid).0 - self.tree.cols(pid).0,
        )
    }

    pub fn zero(&self, id: usize) -> HNode<T> {
        match &self.tree.node(id).kind {
            BlockKind::Split { children, .. } => HNode::Split(children.iter().map(|&c| self.zero(c)).collect()),
            _ => {
                let (m, n) = self.tree.shape(id);
                HNode::LowRank(LowRank::zeros(m, n))
            }
        }
    }

    pub fn identity(&self, id: usize) -> HNode<T> {
        let node = self.tree.node(id);
        match &node.kind {
            BlockKind::Split { children, .. } => HNode::Split(children.iter().map(|&c| self.identity(c)).collect()),
            BlockKind::Dense if node.row == node.col => {
                let (m, _) = self.tree.shape(id);
                HNode::Dense(DMatrix::identity(m, m))
            }
            _ => {
                let (m, n) = self.tree.shape(id);
                HNode::LowRank(LowRank::zeros(m, n))
            }
        }
    }

    /// Build a block from a dense tree-order view.
    pub fn from_dense(&self, id: usize, m: DMatrixView<'_, T>) -> HNode<T> {
        match &self.tree.node(id).kind {
            BlockKind::Split { children, .. } => HNode::Split(
                children
                    .iter()
                    .map(|&c| {
                        let (ro, co) = self.offset(id, c);
                        let (rn, cn) = self.tree.shape(c);
                        self.from_dense(c, m.view((ro, co), (rn, cn)))
                    })
                    .collect(),
            ),
            BlockKind::Admissible => HNode::LowRank(LowRank::from_dense(m, self.eps)),
            BlockKind::Dense => {
                if m.iter().all(|v| *v == T::zero()) {
                    HNode::LowRank(LowRank::zeros(m.nrows(), m.ncols()))
                } else {
                    HNode::Dense(m.clone_owned())
                }
            }
        }
    }

    /// Build a block from sparse tree-order triplets local to the block.
    pub fn from_sparse(
        &self,
        id: usize,
        entries: Vec<(usize, usize, T)>,
        max_leaf_bytes: usize,
    ) -> Result<HNode<T>, HMatrixError> {
        let (m, n) = self.tree.shape(id);
        match &self.tree.node(id).kind {
            BlockKind::Split { children, .. } => {
                let mut buckets: Vec<Vec<(usize, usize, T)>> = vec![Vec::new(); children.len()];
                let bounds: Vec<(usize, usize, usize, usize)> = children
                    .iter()
                    .map(|&c| {
                        let (ro, co) = self.offset(id, c);
                        let (rn, cn) = self.tree.shape(c);
                        (ro, ro + rn, co, co + cn)
                    })
                    .collect();
                for (r, c, v) in entries {
                    let k = bounds
                        .iter()
                        .position(|&(r0, r1, c0, c1)| r >= r0 && r < r1 && c >= c0 && c < c1)
                        .expect("children tile the parent block");
                    buckets[k].push((r - bounds[k].0, c - bounds[k].2, v));
                }
                let nodes = children
                    .iter()
                    .zip(buckets)
                    .map(|(&c, b)| self.from_sparse(c, b, max_leaf_bytes))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(HNode::Split(nodes))
            }
            BlockKind::Admissible => {
                if entries.is_empty() {
                    return Ok(HNode::LowRank(LowRank::zeros(m, n)));
                }
                // compress only the nonzero rows and columns, then scatter
                let mut rows: Vec<usize> = entries.iter().map(|e| e.0).collect();
                let mut cols: Vec<usize> = entries.iter().map(|e| e.1).collect();
                rows.sort_unstable();
                rows.dedup();
                cols.sort_unstable();
                cols.dedup();
                let bytes = rows.len() * cols.len() * std::mem::size_of::<T>();
                if bytes > max_leaf_bytes {
                    return Err(HMatrixError::LeafTooLarge {
                        rows: rows.len(),
                        cols: cols.len(),
                        bytes,
                        cap: max_leaf_bytes,
                    });
                }
                let mut d = DMatrix::zeros(rows.len(), cols.len());
                for (r, c, v) in entries {
                    let i = rows.binary_search(&r).expect("row collected");
                    let j = cols.binary_search(&c).expect("col collected");
                    d[(i, j)] += v;
                }
                let compact = LowRank::from_dense(d.as_view(), self.eps);
                let k = compact.rank();
                let mut u = DMatrix::zeros(m, k);
                let mut v = DMatrix::zeros(n, k);
                for (i, &r) in rows.iter().enumerate() {
                    u.row_mut(r).copy_from(&compact.u.row(i));
                }
                for (j, &c) in cols.iter().enumerate() {
                    v.row_mut(c).copy_from(&compact.v.row(j));
                }
                Ok(HNode::LowRank(LowRank { u, v }))
            }
            _ => {
                if entries.is_empty() {
                    return Ok(HNode::LowRank(LowRank::zeros(m, n)));
                }
                let bytes = m * n * std::mem::size_of::<T>();
                if bytes > max_leaf_bytes {
                    return Err(HMatrixError::LeafTooLarge {
                        rows: m,
                        cols: n,
                        bytes,
                        cap: max_leaf_bytes,
                    });
                }
                let mut d = DMatrix::zeros(m, n);
                for (r, c, v) in entries {
                    d[(r, c)] += v;
                }
                Ok(HNode::Dense(d))
            }
        }
    }

    pub fn to_dense(&self, id: usize, node: &HNode<T>, out: &mut DMatrixViewMut<'_, T>) {
        match node {
            HNode::Dense(d) => out.copy_from(d),
            HNode::LowRank(lr) => {
                if lr.rank() == 0 {
                    out.fill(T::zero());
                } else {
                    out.gemm(T::one(), &lr.u, &lr.v.transpose(), T::zero());
                }
            }
            HNode::Split(children) => {
                for (k, child) in children.iter().enumerate() {
                    let cid = self.child_id(id, k);
                    let (ro, co) = self.offset(id, cid);
                    let (rn, cn) = self.tree.shape(cid);
                    self.to_dense(cid, child, &mut out.view_mut((ro, co), (rn, cn)));
                }
            }
        }
    }

    fn child_id(&self, id: usize, k: usize) -> usize {
        match &self.tree.node(id).kind {
            BlockKind::Split { children, .. } => children[k],
            _ => unreachable!("leaf has no children"),
        }
    }

    /// `y += alpha · A x`
    pub fn apply(&self, id: usize, node: &HNode<T>, alpha: T, x: &DMatrixView<'_, T>, y: &mut DMatrixViewMut<'_, T>) {
        match node {
            HNode::Dense(d) => y.gemm(alpha, d, x, T::one()),
            HNode::LowRank(lr) => {
                if lr.rank() > 0 {
                    let tmp = lr.v.tr_mul(x);
                    y.gemm(alpha, &lr.u, &tmp, T::one());
                }
            }
            HNode::Split(children) => {
                for (k, child) in children.iter().enumerate() {
                    let cid = self.child_id(id, k);
                    let (ro, co) = self.offset(id, cid);
                    let (rn, cn) = self.tree.shape(cid);
                    self.apply(cid, child, alpha, &x.rows(co, cn), &mut y.rows_mut(ro, rn));
                }
            }
        }
    }

    /// `y += alpha · Aᵀ x`
    pub fn apply_t(&self, id: usize, node: &HNode<T>, alpha: T, x: &DMatrixView<'_, T>, y: &mut DMatrixViewMut<'_, T>) {
        match node {
            HNode::Dense(d) => y.gemm_tr(alpha, d, x, T::one()),
            HNode::LowRank(lr) => {
                if lr.rank() > 0 {
                    let tmp = lr.u.tr_mul(x);
                    y.gemm(alpha, &lr.v, &tmp, T::one());
                }
            }
            HNode::Split(children) => {
                for (k, child) in children.iter().enumerate() {
                    let cid = self.child_id(id, k);
                    let (ro, co) = self.offset(id, cid);
                    let (rn, cn) = self.tree.shape(cid);
                    self.apply_t(cid, child, alpha, &x.rows(ro, rn), &mut y.rows_mut(co, cn));
                }
            }
        }
    }

    fn apply_owned(&self, id: usize, node: &HNode<T>, x: &DMatrixView<'_, T>) -> DMatrix<T> {
        let (m, _) = self.tree.shape(id);
        let mut y = DMatrix::zeros(m, x.ncols());
        self.apply(id, node, T::one(), x, &mut y.as_view_mut());
        y
    }

    fn apply_t_owned(&self, id: usize, node: &HNode<T>, x: &DMatrixView<'_, T>) -> DMatrix<T> {
        let (_, n) = self.tree.shape(id);
        let mut y = DMatrix::zeros(n, x.ncols());
        self.apply_t(id, node, T::one(), x, &mut y.as_view_mut());
        y
    }

    /// `a + alpha · b` on identical structure.
    pub fn add(&self, id: usize, a: &HNode<T>, alpha: T, b: &HNode<T>) -> HNode<T> {
        match (a, b) {
            (HNode::Split(ac), HNode::Split(bc)) => HNode::Split(
                ac.iter()
                    .zip(bc)
                    .enumerate()
                    .map(|(k, (x, y))| self.add(self.child_id(id, k), x, alpha, y))
                    .collect(),
            ),
            (HNode::LowRank(x), HNode::LowRank(y)) if self.admissible(id) || (x.rank() == 0 && y.rank() == 0) => {
                let u = hcat(&x.u, &(&y.u * alpha));
                let v = hcat(&x.v, &y.v);
                HNode::LowRank(truncate_factors(u, v, self.eps))
            }
            (x, y) => {
                // inadmissible leaf: exact dense sum
                let mut d = leaf_dense(x);
                d += leaf_dense(y) * alpha;
                HNode::Dense(d)
            }
        }
    }

    pub fn scale(&self, node: &mut HNode<T>, alpha: T) {
        match node {
            HNode::Dense(d) => *d *= alpha,
            HNode::LowRank(lr) => lr.u *= alpha,
            HNode::Split(children) => children.iter_mut().for_each(|c| self.scale(c, alpha)),
        }
    }

    /// `c += alpha · U Vᵀ`, truncating admissible leaves.
    pub fn add_lowrank(&self, id: usize, c: &mut HNode<T>, alpha: T, u: &DMatrixView<'_, T>, v: &DMatrixView<'_, T>) {
        if u.ncols() == 0 {
            return;
        }
        match c {
            HNode::Split(children) => {
                for (k, child) in children.iter_mut().enumerate() {
                    let cid = self.child_id(id, k);
                    let (ro, co) = self.offset(id, cid);
                    let (rn, cn) = self.tree.shape(cid);
                    self.add_lowrank(cid, child, alpha, &u.rows(ro, rn), &v.rows(co, cn));
                }
            }
            HNode::Dense(d) => d.gemm(alpha, u, &v.transpose(), T::one()),
            HNode::LowRank(lr) if self.admissible(id) => {
                let cu = hcat(&lr.u, &(u * alpha));
                let cv = hcat(&lr.v, &v.clone_owned());
                *lr = truncate_factors(cu, cv, self.eps);
            }
            HNode::LowRank(lr) => {
                let mut d = lr.to_dense();
                d.gemm(alpha, u, &v.transpose(), T::one());
                *c = HNode::Dense(d);
            }
        }
    }

    /// Truncated `Σ U_i V_iᵀ` of `m × n` terms. A lone compact term (one
    /// whose rank is already minimal) is returned without recompression.
    fn sum_lowrank(&self, m: usize, n: usize, parts: Vec<(LowRank<T>, bool)>) -> LowRank<T> {
        let mut parts: Vec<_> = parts.into_iter().filter(|(p, _)| p.rank() > 0).collect();
        match parts.len() {
            0 => LowRank::zeros(m, n),
            1 if parts[0].1 => parts.pop().expect("one part").0,
            _ => {
                let k: usize = parts.iter().map(|(p, _)| p.rank()).sum();
                let mut u = DMatrix::zeros(m, k);
                let mut v = DMatrix::zeros(n, k);
                let mut col = 0;
                for (p, _) in &parts {
                    let r = p.rank();
                    u.columns_mut(col, r).copy_from(&p.u);
                    v.columns_mut(col, r).copy_from(&p.v);
                    col += r;
                }
                truncate_factors(u, v, self.eps)
            }
        }
    }

    /// `lr += alpha Σ P_i` on an admissible leaf, recompressing once.
    fn add_products(&self, lr: &mut LowRank<T>, alpha: T, products: Vec<(LowRank<T>, bool)>) {
        if products.iter().all(|(p, _)| p.rank() == 0) {
            return;
        }
        let (m, n) = (lr.nrows(), lr.ncols());
        let mut parts = Vec::with_capacity(products.len() + 1);
        parts.push((std::mem::replace(lr, LowRank::zeros(m, n)), true));
        for (mut p, compact) in products {
            p.u *= alpha;
            parts.push((p, compact));
        }
        *lr = self.sum_lowrank(m, n, parts);
    }

    /// `A · B` for blocks `(τ, ρ)` and `(ρ, σ)` as an outer product, with a
    /// flag telling whether its rank is already compact.
    fn product_lowrank(&self, aid: usize, a: &HNode<T>, bid: usize, b: &HNode<T>) -> (LowRank<T>, bool) {
        match (a, b) {
            (HNode::LowRank(la), _) => {
                if la.rank() == 0 {
                    return (LowRank::zeros(la.nrows(), self.tree.shape(bid).1), true);
                }
                let p = LowRank {
                    u: la.u.clone(),
                    v: self.apply_t_owned(bid, b, &la.v.as_view()),
                };
                (p, true)
            }
            (_, HNode::LowRank(lb)) => {
                if lb.rank() == 0 {
                    return (LowRank::zeros(self.tree.shape(aid).0, lb.ncols()), true);
                }
                let p = LowRank {
                    u: self.apply_owned(aid, a, &lb.u.as_view()),
                    v: lb.v.clone(),
                };
                (p, true)
            }
            (HNode::Dense(da), _) => {
                // A B = I (Bᵀ Aᵀ)ᵀ, rank bounded by the leaf size of τ
                let p = LowRank {
                    u: DMatrix::identity(da.nrows(), da.nrows()),
                    v: self.apply_t_owned(bid, b, &da.transpose().as_view()),
                };
                (p, false)
            }
            (_, HNode::Dense(db)) => {
                let p = LowRank {
                    u: self.apply_owned(aid, a, &db.as_view()),
                    v: DMatrix::identity(db.ncols(), db.ncols()),
                };
                (p, false)
            }
            (HNode::Split(ac), HNode::Split(bc)) => {
                let (ar, ak) = self.grid(aid).expect("split");
                let (_, bcn) = self.grid(bid).expect("split");
                let (m, _) = self.tree.shape(aid);
                let (_, n) = self.tree.shape(bid);
                let mut parts = Vec::with_capacity(ar * bcn);
                for i in 0..ar {
                    for j in 0..bcn {
                        let a_i0 = ar_child(self, aid, i, 0);
                        let b_0j = ar_child(self, bid, 0, j);
                        let (rn, cn) = (self.tree.shape(a_i0).0, self.tree.shape(b_0j).1);
                        let inner = (0..ak)
                            .map(|k| {
                                let a_ik = ar_child(self, aid, i, k);
                                let b_kj = ar_child(self, bid, k, j);
                                self.product_lowrank(a_ik, &ac[i * ak + k], b_kj, &bc[k * bcn + j])
                            })
                            .collect();
                        let p = self.sum_lowrank(rn, cn, inner);
                        // embed the (i, j) piece into the full block
                        let ro = self.tree.rows(a_i0).0 - self.tree.rows(aid).0;
                        let co = self.tree.cols(b_0j).0 - self.tree.cols(bid).0;
                        let r = p.rank();
                        let mut u = DMatrix::zeros(m, r);
                        let mut v = DMatrix::zeros(n, r);
                        u.view_mut((ro, 0), (rn, r)).copy_from(&p.u);
                        v.view_mut((co, 0), (cn, r)).copy_from(&p.v);
                        parts.push((LowRank { u, v }, true));
                    }
                }
                (self.sum_lowrank(m, n, parts), true)
            }
        }
    }

    /// `c += alpha · A B`, recompressing each admissible leaf of `c` once
    /// per call.
    pub fn mul_acc(&self, cid: usize, c: &mut HNode<T>, alpha: T, aid: usize, a: &HNode<T>, bid: usize, b: &HNode<T>) {
        if let (HNode::Split(cc), HNode::Split(ac), HNode::Split(bc)) = (&mut *c, a, b) {
            let (cr, ccn) = self.grid(cid).expect("split");
            let (_, ak) = self.grid(aid).expect("split");
            for i in 0..cr {
                for j in 0..ccn {
                    let c_ij = ar_child(self, cid, i, j);
                    let target = &mut cc[i * ccn + j];
                    match target {
                        HNode::LowRank(lr) if self.admissible(c_ij) => {
                            let products = (0..ak)
                                .map(|k| {
                                    let a_ik = ar_child(self, aid, i, k);
                                    let b_kj = ar_child(self, bid, k, j);
                                    self.product_lowrank(a_ik, &ac[i * ak + k], b_kj, &bc[k * ccn + j])
                                })
                                .collect();
                            self.add_products(lr, alpha, products);
                        }
                        _ => {
                            for k in 0..ak {
                                let a_ik = ar_child(self, aid, i, k);
                                let b_kj = ar_child(self, bid, k, j);
                                self.mul_acc(c_ij, target, alpha, a_ik, &ac[i * ak + k], b_kj, &bc[k * ccn + j]);
                            }
                        }
                    }
                }
            }
            return;
        }
        if let (HNode::Dense(dc), HNode::Dense(da), HNode::Dense(db)) = (&mut *c, a, b) {
            dc.gemm(alpha, da, db, T::one());
            return;
        }
        let p = self.product_lowrank(aid, a, bid, b);
        match c {
            HNode::LowRank(lr) if self.admissible(cid) => self.add_products(lr, alpha, vec![p]),
            _ => self.add_lowrank(cid, c, alpha, &p.0.u.as_view(), &p.0.v.as_view()),
        }
    }

    /// Inverse of a diagonal block `(τ, τ)` by recursive 2 × 2 block
    /// elimination.
    pub fn invert(&self, id: usize, node: &HNode<T>) -> Result<HNode<T>, HMatrixError> {
        match node {
            HNode::Dense(d) => dense::invert(d, self.condition_cap).map(HNode::Dense).map_err(|s| self.singular(id, s.condition)),
            HNode::LowRank(_) => Err(self.singular(id, f64::INFINITY)),
            HNode::Split(ch) => {
                let (rows, cols) = self.grid(id).expect("split");
                assert!(rows == 2 && cols == 2, "diagonal blocks split two by two");
                let [i11, i12, i21, i22] = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(i, j)| ar_child(self, id, i, j));
                let (a11, a12, a21, a22) = (&ch[0], &ch[1], &ch[2], &ch[3]);
                let one = T::one();
                let mut x11 = self.invert(i11, a11)?;
                // T1 = A21 X11
                let mut t1 = self.zero(i21);
                self.mul_acc(i21, &mut t1, one, i21, a21, i11, &x11);
                // S = A22 - T1 A12
                let mut s = a22.clone();
                self.mul_acc(i22, &mut s, -one, i21, &t1, i12, a12);
                let x22 = self.invert(i22, &s)?;
                drop(s);
                // T2 = X11 A12
                let mut t2 = self.zero(i12);
                self.mul_acc(i12, &mut t2, one, i11, &x11, i12, a12);
                let mut x12 = self.zero(i12);
                self.mul_acc(i12, &mut x12, -one, i12, &t2, i22, &x22);
                drop(t2);
                let mut x21 = self.zero(i21);
                self.mul_acc(i21, &mut x21, -one, i22, &x22, i21, &t1);
                // X11 = X11 - X12 T1
                self.mul_acc(i11, &mut x11, -one, i12, &x12, i21, &t1);
                Ok(HNode::Split(vec![x11, x12, x21, x22]))
            }
        }
    }

    fn singular(&self, id: usize, condition: f64) -> HMatrixError {
        let (start, end) = self.tree.rows(id);
        HMatrixError::SingularLeaf {
            cluster: self.tree.node(id).row,
            start,
            end,
            condition,
        }
    }
}

#[inline]
fn ar_child<T: Scalar>(ctx: &Ctx<'_, T>, id: usize, i: usize, j: usize) -> usize {
    ctx.tree.child(id, i, j)
}

fn leaf_dense<T: Scalar>(node: &HNode<T>) -> DMatrix<T> {
    match node {
        HNode::Dense(d) => d.clone(),
        HNode::LowRank(lr) => lr.to_dense(),
        HNode::Split(_) => unreachable!("leaf expected"),
    }
}
