//! Test problems on the unit cube, assembled plane by plane.
//!
//! * Poisson: 7-point finite differences for `-Δu = 1`, scaled by `h²`.
//! * Convection-diffusion: 7-point upwind differences for
//!   `-Δu + α b(x)·∇u = f` with a three-dimensional vortex field `b`,
//!   scaled by `h²`. The forcing is the discrete operator applied to the
//!   sampled exact solution, so the discrete solution is known exactly.
//! * Helmholtz: 27-point trilinear finite elements for `-(Δu + κ²u) = 1`,
//!   `A = K - κ² M` with tensor-product weights built from the 1D stiffness
//!   `[-1, 2, -1] / h` and consistent mass `h [1, 4, 1] / 6`.
//!
//! All problems use homogeneous Dirichlet conditions, `z` is the plane axis
//! and `x` varies fastest inside a plane.

use crate::scalar::Scalar;
use crate::system::{apply, BlockTridiagonalSystem, GridSpec, PlaneBlock, PlaneVector, SystemError};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Poisson,
    Convdiff,
    Helmholtz,
}

impl std::str::FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poisson" => Ok(Self::Poisson),
            "convdiff" => Ok(Self::Convdiff),
            "helmholtz" => Ok(Self::Helmholtz),
            other => Err(format!("unknown problem '{other}' (poisson, convdiff, helmholtz)")),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Poisson => "poisson",
            Self::Convdiff => "convdiff",
            Self::Helmholtz => "helmholtz",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    /// Convection strength.
    pub alpha: f64,
    /// Vortex frequency.
    pub a: f64,
    /// Wavenumber.
    pub kappa: f64,
}

impl ProblemSpec {
    pub fn poisson(n: usize) -> Self {
        Self {
            kind: ProblemKind::Poisson,
            n,
            alpha: 0.0,
            a: 1.0,
            kappa: 0.0,
        }
    }

    pub fn convdiff(n: usize, alpha: f64) -> Self {
        Self {
            kind: ProblemKind::Convdiff,
            alpha,
            ..Self::poisson(n)
        }
    }

    pub fn helmholtz(n: usize, kappa: f64) -> Self {
        Self {
            kind: ProblemKind::Helmholtz,
            kappa,
            ..Self::poisson(n)
        }
    }

    /// Helmholtz with `κ` giving `points_per_wavelength` samples per
    /// wavelength: `2π (n + 1) / κ = ppw`.
    pub fn helmholtz_sampled(n: usize, points_per_wavelength: f64) -> Self {
        Self::helmholtz(n, kappa_for_sampling(n, points_per_wavelength))
    }

    /// Assembled system; for convection-diffusion the right-hand side is the
    /// operator applied to the sampled exact solution.
    pub fn assemble<T: Scalar>(&self) -> Result<BlockTridiagonalSystem<T>, SystemError> {
        match self.kind {
            ProblemKind::Poisson => assemble_poisson(self.n),
            ProblemKind::Convdiff => assemble_convdiff(self.n, self.alpha, self.a).map(|(s, _)| s),
            ProblemKind::Helmholtz => assemble_helmholtz(self.n, self.kappa),
        }
    }
}

pub fn kappa_for_sampling(n: usize, points_per_wavelength: f64) -> f64 {
    2.0 * PI * (n + 1) as f64 / points_per_wavelength
}

/// Assemble `n` diagonal and `n - 1` off-diagonal blocks from a stencil
/// callback `weight(i, j, k, di, dj, dk)` giving the coupling of node
/// `(i, j, k)` to `(i+di, j+dj, k+dk)`.
fn assemble_stencil<T: Scalar>(
    grid: GridSpec,
    offsets: &[(isize, isize, isize)],
    weight: impl Fn(usize, usize, usize, isize, isize, isize) -> T,
    rhs: impl Fn(usize, usize, usize) -> T,
) -> Result<BlockTridiagonalSystem<T>, SystemError> {
    let n = grid.n();
    let dim = grid.plane_size();
    let coords = grid.plane_coords::<T>();
    let mut diag = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n - 1);
    let mut upper = Vec::with_capacity(n - 1);
    let inside = |v: isize| v >= 0 && (v as usize) < n;
    for k in 0..n {
        let mut blocks: [Vec<(usize, usize, T)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for j in 0..n {
            for i in 0..n {
                let row = grid.local_index(i, j);
                for &(di, dj, dk) in offsets {
                    let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
                    if !(inside(ni) && inside(nj) && inside(nk)) {
                        continue;
                    }
                    let w = weight(i, j, k, di, dj, dk);
                    let col = grid.local_index(ni as usize, nj as usize);
                    blocks[(dk + 1) as usize].push((row, col, w));
                }
            }
        }
        let [e, d, f] = blocks;
        diag.push(PlaneBlock::from_triplets(dim, d, coords.clone())?);
        if k > 0 {
            lower.push(PlaneBlock::from_triplets(dim, e, coords.clone())?);
        }
        if k + 1 < n {
            upper.push(PlaneBlock::from_triplets(dim, f, coords.clone())?);
        }
    }
    let rhs = (0..n)
        .map(|k| {
            let mut v = Vec::with_capacity(dim);
            for j in 0..n {
                for i in 0..n {
                    v.push(rhs(i, j, k));
                }
            }
            PlaneVector::new(k, v)
        })
        .collect();
    BlockTridiagonalSystem::new(diag, lower, upper, rhs)
}

const STAR: [(isize, isize, isize); 7] = [(0, 0, 0), (-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)];

/// `h² · (−Δ)` with the 7-point star, right-hand side `h² · 1`.
pub fn assemble_poisson<T: Scalar>(n: usize) -> Result<BlockTridiagonalSystem<T>, SystemError> {
    let grid = GridSpec::new(n)?;
    let h = grid.h::<T>();
    assemble_stencil(
        grid,
        &STAR,
        |_, _, _, di, dj, dk| if (di, dj, dk) == (0, 0, 0) { T::of(6.0) } else { -T::one() },
        |_, _, _| h * h,
    )
}

/// Solution of `−Δu = 1` on the unit cube with zero boundary values.
///
/// Double sine series in `x, y`; the `z` dependence of each mode solves
/// `−v'' + k²v = 1` in closed form. `terms` odd frequencies per axis.
pub fn poisson_series(x: f64, y: f64, z: f64, terms: usize) -> f64 {
    let mut u = 0.0;
    let dz = (z - 0.5).abs();
    for a in 0..terms {
        let l = (2 * a + 1) as f64;
        let sx = (l * PI * x).sin() / l;
        for b in 0..terms {
            let m = (2 * b + 1) as f64;
            let k = PI * (l * l + m * m).sqrt();
            // cosh(k (z − ½)) / cosh(k / 2) without overflow
            let ratio = (k * (dz - 0.5)).exp() * (1.0 + (-2.0 * k * dz).exp()) / (1.0 + (-k).exp());
            u += sx * (m * PI * y).sin() / m * (1.0 - ratio) / (k * k);
        }
    }
    16.0 / (PI * PI) * u
}

/// [`poisson_series`] at every grid node, in plane-major order.
pub fn poisson_series_grid(n: usize, terms: usize) -> Vec<f64> {
    let h = 1.0 / (n + 1) as f64;
    let freq = |a: usize| (2 * a + 1) as f64;
    // sin(l π x_i) / l for every frequency and node coordinate
    let sines: Vec<f64> = (0..terms)
        .flat_map(|a| (1..=n).map(move |i| (freq(a) * PI * i as f64 * h).sin() / freq(a)))
        .collect();
    let mut out = vec![0.0; n * n * n];
    for k in 0..n {
        let dz = ((k + 1) as f64 * h - 0.5).abs();
        let mut profile = vec![0.0; terms * terms];
        for a in 0..terms {
            for b in 0..terms {
                let kk = PI * (freq(a).powi(2) + freq(b).powi(2)).sqrt();
                let ratio = (kk * (dz - 0.5)).exp() * (1.0 + (-2.0 * kk * dz).exp()) / (1.0 + (-kk).exp());
                profile[a * terms + b] = (1.0 - ratio) / (kk * kk);
            }
        }
        for j in 0..n {
            for i in 0..n {
                let mut u = 0.0;
                for a in 0..terms {
                    let sx = sines[a * n + i];
                    for b in 0..terms {
                        u += sx * sines[b * n + j] * profile[a * terms + b];
                    }
                }
                out[k * n * n + j * n + i] = 16.0 / (PI * PI) * u;
            }
        }
    }
    out
}

/// The 2D 5-point Laplacian (diagonal 4) on an `n × n` plane.
pub fn poisson_2d<T: Scalar>(n: usize) -> Result<PlaneBlock<T>, SystemError> {
    let grid = GridSpec::new(n)?;
    let mut t = Vec::with_capacity(5 * n * n);
    for j in 0..n {
        for i in 0..n {
            let r = grid.local_index(i, j);
            t.push((r, r, T::of(4.0)));
            if i > 0 {
                t.push((r, grid.local_index(i - 1, j), -T::one()));
            }
            if i + 1 < n {
                t.push((r, grid.local_index(i + 1, j), -T::one()));
            }
            if j > 0 {
                t.push((r, grid.local_index(i, j - 1), -T::one()));
            }
            if j + 1 < n {
                t.push((r, grid.local_index(i, j + 1), -T::one()));
            }
        }
    }
    PlaneBlock::from_triplets(n * n, t, grid.plane_coords())
}

/// Vortex field `b(x)` of frequency `a`.
pub fn vortex(a: f64, x: f64, y: f64, z: f64) -> [f64; 3] {
    let w = a * 2.0 * PI;
    let (sx, cx) = (w * x).sin_cos();
    let (sy, cy) = (w * (0.125 + y)).sin_cos();
    let (sz8, cz8) = (w * (0.125 + z)).sin_cos();
    let (sz, cz) = (w * z).sin_cos();
    [sx * sy + sz8 * sx, cx * cy + cy * cz, cx * cz8 + sy * sz]
}

/// `u(x) = Σ_d sin(π x_d) + sin(3π x_d)`.
pub fn convdiff_exact(x: f64, y: f64, z: f64) -> f64 {
    [x, y, z].iter().map(|&t| (PI * t).sin() + (3.0 * PI * t).sin()).sum()
}

/// Upwind convection-diffusion system and the sampled exact solution.
pub fn assemble_convdiff<T: Scalar>(
    n: usize,
    alpha: f64,
    a: f64,
) -> Result<(BlockTridiagonalSystem<T>, Vec<PlaneVector<T>>), SystemError> {
    let grid = GridSpec::new(n)?;
    let h = 1.0 / (n + 1) as f64;
    let pos = |i: usize| (i + 1) as f64 * h;
    let weight = |i: usize, j: usize, k: usize, di: isize, dj: isize, dk: isize| -> T {
        let b = vortex(a, pos(i), pos(j), pos(k));
        // α h² b_d ∂_d u: backward difference for b_d > 0, forward otherwise
        let c: Vec<f64> = b.iter().map(|bd| alpha * h * bd).collect();
        let w = match (di, dj, dk) {
            (0, 0, 0) => 6.0 + c.iter().map(|v| v.abs()).sum::<f64>(),
            _ => {
                let (axis, step) = if di != 0 {
                    (0, di)
                } else if dj != 0 {
                    (1, dj)
                } else {
                    (2, dk)
                };
                let cd = c[axis];
                let upwind = if step < 0 { -cd.max(0.0) } else { cd.min(0.0) };
                -1.0 + upwind
            }
        };
        T::of(w)
    };
    let zero_rhs = assemble_stencil(grid, &STAR, weight, |_, _, _| T::zero())?;
    let exact: Vec<PlaneVector<T>> = (0..n)
        .map(|k| {
            let mut v = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    v.push(T::of(convdiff_exact(pos(i), pos(j), pos(k))));
                }
            }
            PlaneVector::new(k, v)
        })
        .collect();
    let rhs = apply(&zero_rhs, &exact)?;
    Ok((zero_rhs.with_rhs(rhs)?, exact))
}

/// Trilinear FEM Helmholtz operator `K − κ² M` with unit load.
pub fn assemble_helmholtz<T: Scalar>(n: usize, kappa: f64) -> Result<BlockTridiagonalSystem<T>, SystemError> {
    let grid = GridSpec::new(n)?;
    let h = 1.0 / (n + 1) as f64;
    // index by offset + 1
    let k1 = [-1.0 / h, 2.0 / h, -1.0 / h];
    let m1 = [h / 6.0, 4.0 * h / 6.0, h / 6.0];
    let k2 = kappa * kappa;
    let mut offsets = Vec::with_capacity(27);
    for dk in -1..=1 {
        for dj in -1..=1 {
            for di in -1..=1 {
                offsets.push((di, dj, dk));
            }
        }
    }
    let weight = |_, _, _, di: isize, dj: isize, dk: isize| -> T {
        let (x, y, z) = ((di + 1) as usize, (dj + 1) as usize, (dk + 1) as usize);
        let stiff = k1[x] * m1[y] * m1[z] + m1[x] * k1[y] * m1[z] + m1[x] * m1[y] * k1[z];
        let mass = m1[x] * m1[y] * m1[z];
        T::of(stiff - k2 * mass)
    };
    // ∫ φ_i · 1 = h³ for an interior trilinear hat
    assemble_stencil(grid, &offsets, weight, |_, _, _| T::of(h * h * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::apply_transpose;

    #[test]
    fn poisson_n2_blocks() {
        let s = assemble_poisson::<f64>(2).unwrap();
        let d = s.d(0).to_dense();
        let expected = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[6.0, -1.0, -1.0, 0.0, -1.0, 6.0, 0.0, -1.0, -1.0, 0.0, 6.0, -1.0, 0.0, -1.0, -1.0, 6.0],
        );
        assert_eq!(d, expected);
        assert_eq!(s.e(1).unwrap().to_dense(), -nalgebra::DMatrix::identity(4, 4));
        assert_eq!(s.f_block(0).unwrap().to_dense(), -nalgebra::DMatrix::identity(4, 4));
        assert_eq!(s.rhs()[0].values[0], 1.0 / 9.0);
    }

    #[test]
    fn interior_rows_sum_to_zero() {
        let s = assemble_poisson::<f64>(5).unwrap();
        let g = GridSpec::new(5).unwrap();
        let k = 2;
        for j in 1..4 {
            for i in 1..4 {
                let row = g.local_index(i, j);
                let sum: f64 = [s.e(k).unwrap(), s.d(k), s.f_block(k).unwrap()]
                    .iter()
                    .flat_map(|b| b.entries().iter().filter(|e| e.0 == row).map(|e| e.2))
                    .sum();
                assert_eq!(sum, 0.0);
            }
        }
    }

    #[test]
    fn convdiff_without_convection_is_poisson() {
        let (c, _) = assemble_convdiff::<f64>(6, 0.0, 1.0).unwrap();
        let p = assemble_poisson::<f64>(6).unwrap();
        assert_eq!(c.diag_blocks(), p.diag_blocks());
        assert_eq!(c.lower_blocks(), p.lower_blocks());
        assert_eq!(c.upper_blocks(), p.upper_blocks());
    }

    #[test]
    fn convdiff_rhs_matches_exact_solution() {
        let (s, exact) = assemble_convdiff::<f64>(5, 50.0, 1.0).unwrap();
        assert!(crate::system::relative_residual(&s, &exact, s.rhs()).unwrap() < 1e-15);
    }

    #[test]
    fn convection_breaks_symmetry() {
        let (s, _) = assemble_convdiff::<f64>(16, 100.0, 1.0).unwrap();
        // probe ‖A − Aᵀ‖ through apply and apply_transpose on a few unit-ish vectors
        let dim = s.plane_dim();
        let probe: Vec<PlaneVector<f64>> = (0..16)
            .map(|k| PlaneVector::new(k, (0..dim).map(|i| ((i * 7 + k * 3) % 11) as f64 - 5.0).collect()))
            .collect();
        let a = apply(&s, &probe).unwrap();
        let at = apply_transpose(&s, &probe).unwrap();
        let diff: f64 = a.iter().zip(&at).flat_map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| (p - q).abs())).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn block_symmetry_of_symmetric_generators() {
        for s in [assemble_poisson::<f64>(4).unwrap(), assemble_helmholtz::<f64>(4, 3.0).unwrap()] {
            for j in 0..4 {
                assert_eq!(s.d(j).transpose(), *s.d(j));
            }
            for j in 0..3 {
                assert_eq!(s.e(j + 1).unwrap().transpose(), *s.f_block(j).unwrap());
            }
        }
    }

    #[test]
    fn helmholtz_is_27_point() {
        let s = assemble_helmholtz::<f64>(4, 0.0).unwrap();
        let g = GridSpec::new(4).unwrap();
        let row = g.local_index(1, 1);
        let count = |b: &PlaneBlock<f64>| b.entries().iter().filter(|e| e.0 == row).count();
        assert_eq!(count(s.d(1)) + count(s.e(1).unwrap()) + count(s.f_block(1).unwrap()), 27);
        // stiffness rows of interior nodes sum to zero when κ = 0
        let sum: f64 = [s.d(1), s.e(1).unwrap(), s.f_block(1).unwrap()]
            .iter()
            .flat_map(|b| b.entries().iter().filter(|e| e.0 == row).map(|e| e.2))
            .sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn sampling_rule() {
        let k = kappa_for_sampling(23, 12.0);
        assert!((2.0 * PI * 24.0 / k - 12.0).abs() < 1e-12);
    }

    #[test]
    fn series_solves_the_continuous_problem() {
        // −Δu = 1 at an interior point, by a five-point finite difference of the series in each axis
        let (x, y, z, d) = (0.3, 0.6, 0.45, 1e-3);
        let u = |x, y, z| poisson_series(x, y, z, 400);
        let lap = (u(x + d, y, z) + u(x - d, y, z) + u(x, y + d, z) + u(x, y - d, z) + u(x, y, z + d) + u(x, y, z - d)
            - 6.0 * u(x, y, z))
            / (d * d);
        assert!((lap + 1.0).abs() < 5e-3, "{lap}");
        assert!(poisson_series(0.0, 0.5, 0.5, 50).abs() < 1e-15);
        assert!(poisson_series(0.5, 0.5, 1.0, 50).abs() < 1e-12);
        // centre value, from the plain triple sine series summed to 199
        assert!((poisson_series(0.5, 0.5, 0.5, 400) - 0.056_212_8).abs() < 1e-6);
    }

    #[test]
    fn poisson_discretization_is_second_order() {
        let err = |n: usize| {
            let s = assemble_poisson::<f64>(n).unwrap();
            let u = crate::acr::cr_dense_factor(&s).unwrap().solve(s.rhs()).unwrap();
            let exact = poisson_series_grid(n, 300);
            crate::system::flatten(&u).iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(8) / err(16);
        assert!((3.0..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn grid_evaluation_matches_pointwise_series() {
        let n = 5;
        let g = poisson_series_grid(n, 40);
        let h = 1.0 / 6.0;
        let idx = 2 * n * n + 3 * n + 1;
        assert!((g[idx] - poisson_series(2.0 * h, 4.0 * h, 3.0 * h, 40)).abs() < 1e-15);
    }

    fn dense(s: &BlockTridiagonalSystem<f64>) -> nalgebra::DMatrix<f64> {
        let n = s.unknowns();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for (r, c, v) in s.global_triplets() {
            m[(r, c)] += v;
        }
        m
    }

    #[test]
    fn helmholtz_without_shift_is_positive_definite() {
        let k = dense(&assemble_helmholtz::<f64>(4, 0.0).unwrap());
        assert_eq!(&k, &k.transpose());
        let min = k.symmetric_eigen().eigenvalues.min();
        assert!(min > 0.0, "{min}");
    }

    #[test]
    fn helmholtz_turns_indefinite_past_the_first_eigenvalue() {
        let n = 8;
        let k = dense(&assemble_helmholtz::<f64>(n, 0.0).unwrap());
        let mass = (&k - dense(&assemble_helmholtz::<f64>(n, 1.0).unwrap())) * 1.0;
        // smallest generalized eigenvalue of K x = λ M x through the Cholesky factor of M
        let l = mass.clone().cholesky().expect("mass matrix is SPD").l();
        let li = l.clone().try_inverse().unwrap();
        let lambda = (&li * &k * li.transpose()).symmetric_eigen().eigenvalues.min();
        // close to the continuous value 3π²
        assert!((lambda / (3.0 * PI * PI) - 1.0).abs() < 0.05, "{lambda}");
        for (kappa, negative) in [(0.9 * lambda.sqrt(), false), (8.0, true)] {
            let a = dense(&assemble_helmholtz::<f64>(n, kappa).unwrap());
            let min = a.symmetric_eigen().eigenvalues.min();
            assert_eq!(min < 0.0, negative, "kappa {kappa}: {min}");
        }
    }
}
