//! Oracles shared by the integration tests. Nothing here calls into the
//! solver under test except to read the assembled matrix.
#![allow(dead_code)]

use acr_core::system::{flatten, BlockTridiagonalSystem, PlaneVector};
use nalgebra::{DMatrix, DVector};

/// Global sparse matrix as a dense nalgebra matrix.
pub fn global_dense(s: &BlockTridiagonalSystem<f64>) -> DMatrix<f64> {
    let n = s.unknowns();
    let mut a = DMatrix::zeros(n, n);
    for (r, c, v) in s.global_triplets() {
        a[(r, c)] += v;
    }
    a
}

/// Full-matrix partially pivoted LU solve.
pub fn dense_lu_solve(s: &BlockTridiagonalSystem<f64>, f: &[PlaneVector<f64>]) -> Vec<f64> {
    let a = global_dense(s);
    let b = DVector::from_vec(flatten(f));
    a.lu().solve(&b).expect("nonsingular oracle matrix").as_slice().to_vec()
}

/// Banded LU with partial pivoting. Row swaps widen the upper band to
/// `kl + ku`, stored per row alongside the multipliers.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku2: usize,
    width: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let kl = triplets.iter().map(|&(r, c, _)| r.saturating_sub(c)).max().unwrap_or(0);
        let ku = triplets.iter().map(|&(r, c, _)| c.saturating_sub(r)).max().unwrap_or(0);
        let ku2 = kl + ku;
        let width = kl + ku2 + 1;
        let mut lu = Self {
            n,
            kl,
            ku2,
            width,
            a: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for &(r, c, v) in triplets {
            let k = lu.at(r, c);
            lu.a[k] += v;
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let p = (k..=last)
                .max_by(|&x, &y| lu.a[lu.at(x, k)].abs().total_cmp(&lu.a[lu.at(y, k)].abs()))
                .unwrap();
            lu.piv[k] = p;
            let cols = (k + ku2).min(n - 1);
            if p != k {
                for j in k..=cols {
                    let (x, y) = (lu.at(k, j), lu.at(p, j));
                    lu.a.swap(x, y);
                }
            }
            let pivot = lu.a[lu.at(k, k)];
            assert!(pivot != 0.0, "singular band matrix at {k}");
            for i in k + 1..=last {
                let ik = lu.at(i, k);
                let l = lu.a[ik] / pivot;
                lu.a[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=cols {
                        let (ij, kj) = (lu.at(i, j), lu.at(k, j));
                        lu.a[ij] -= l * lu.a[kj];
                    }
                }
            }
        }
        lu
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                x[i] -= self.a[self.at(i, k)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + self.ku2).min(n - 1) {
                s -= self.a[self.at(i, j)] * x[j];
            }
            x[i] = s / self.a[self.at(i, i)];
        }
        x
    }
}

pub fn band_lu_solve(s: &BlockTridiagonalSystem<f64>, f: &[PlaneVector<f64>]) -> Vec<f64> {
    BandLu::factor(s.unknowns(), &s.global_triplets()).solve(&flatten(f))
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}
