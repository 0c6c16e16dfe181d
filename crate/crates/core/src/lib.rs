//! Accelerated cyclic reduction for block tridiagonal systems from 3D
//! discretizations, with hierarchical-matrix plane blocks.

pub mod acr;
pub mod dense;
pub mod discretize;
pub mod hmatrix;
pub mod krylov;
pub mod mtx;
pub mod parallel;
pub mod scalar;
pub mod system;

pub use scalar::Scalar;

pub type HMatrixF64 = hmatrix::HMatrix<f64>;
pub type HMatrixF32 = hmatrix::HMatrix<f32>;
pub type SystemF64 = system::BlockTridiagonalSystem<f64>;
pub type SystemF32 = system::BlockTridiagonalSystem<f32>;
pub type PlaneVectorF64 = system::PlaneVector<f64>;
pub type PlaneVectorF32 = system::PlaneVector<f32>;
pub type AcrFactorizationF64 = acr::AcrFactorization<f64>;
pub type AcrFactorizationF32 = acr::AcrFactorization<f32>;
