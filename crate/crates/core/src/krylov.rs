//! Preconditioned conjugate gradients and iterative refinement on top of a
//! stored factorization.

use crate::acr::{AcrError, AcrFactorization};
use crate::scalar::Scalar;
use crate::system::{apply, planes_axpy, planes_dot, planes_norm, planes_zeros, BlockTridiagonalSystem, PlaneVector, SystemError};
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    /// `pᵀAp ≤ 0` or `rᵀz ≤ 0`: the operator or preconditioner is not SPD.
    #[error("indefinite operator or preconditioner at iteration {iteration} (curvature {curvature:e})")]
    Indefinite { iteration: usize, curvature: f64 },
    #[error("refinement diverged at step {iteration}: residual {residual:e}")]
    Diverged { iteration: usize, residual: f64 },
    #[error(transparent)]
    Acr(#[from] AcrError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Convergence record of an iterative solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iterations: usize,
    /// True relative residual `‖b − A u‖ / ‖b‖`, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Mean seconds per preconditioner application.
    pub apply_time: f64,
    pub total_time: f64,
}

/// Approximate inverse `z = M⁻¹ r`.
pub trait Preconditioner<T: Scalar> {
    fn precondition(&self, r: &[PlaneVector<T>]) -> Result<Vec<PlaneVector<T>>, AcrError>;
}

impl<T: Scalar> Preconditioner<T> for AcrFactorization<T> {
    fn precondition(&self, r: &[PlaneVector<T>]) -> Result<Vec<PlaneVector<T>>, AcrError> {
        self.solve(r)
    }
}

/// `M = I`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl<T: Scalar> Preconditioner<T> for Identity {
    fn precondition(&self, r: &[PlaneVector<T>]) -> Result<Vec<PlaneVector<T>>, AcrError> {
        Ok(r.to_vec())
    }
}

fn sub<T: Scalar>(a: &[PlaneVector<T>], b: &[PlaneVector<T>]) -> Vec<PlaneVector<T>> {
    let mut out = a.to_vec();
    planes_axpy(-T::one(), b, &mut out);
    out
}

fn zero_solution<T: Scalar>(system: &BlockTridiagonalSystem<T>, start: Instant) -> (Vec<PlaneVector<T>>, IterationTrace) {
    (
        planes_zeros(system.plane_count(), system.plane_dim()),
        IterationTrace {
            iterations: 0,
            residual_history: Vec::new(),
            converged: true,
            apply_time: 0.0,
            total_time: start.elapsed().as_secs_f64(),
        },
    )
}

/// Preconditioned CG from a zero initial guess; stops when the true
/// relative residual reaches `tol` or after `maxit` iterations.
pub fn pcg<T: Scalar, P: Preconditioner<T> + ?Sized>(
    system: &BlockTridiagonalSystem<T>,
    precond: &P,
    b: &[PlaneVector<T>],
    tol: f64,
    maxit: usize,
) -> Result<(Vec<PlaneVector<T>>, IterationTrace), KrylovError> {
    let start = Instant::now();
    system.check_vector(b)?;
    let bnorm = planes_norm(b);
    if bnorm == T::zero() {
        return Ok(zero_solution(system, start));
    }
    let mut u = planes_zeros(system.plane_count(), system.plane_dim());
    let mut r = b.to_vec();
    let mut history = vec![1.0];
    let mut apply_seconds = 0.0;
    let mut applies = 0usize;
    let mut timed_precondition = |r: &[PlaneVector<T>]| -> Result<Vec<PlaneVector<T>>, AcrError> {
        let t = Instant::now();
        let z = precond.precondition(r);
        apply_seconds += t.elapsed().as_secs_f64();
        applies += 1;
        z
    };
    let mut z = timed_precondition(&r)?;
    let mut p = z.clone();
    let mut rz = planes_dot(&r, &z);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < maxit {
        if rz <= T::zero() {
            return Err(KrylovError::Indefinite {
                iteration: iterations,
                curvature: rz.as_f64(),
            });
        }
        let ap = apply(system, &p)?;
        let pap = planes_dot(&p, &ap);
        if pap <= T::zero() {
            return Err(KrylovError::Indefinite {
                iteration: iterations,
                curvature: pap.as_f64(),
            });
        }
        let alpha = rz / pap;
        planes_axpy(alpha, &p, &mut u);
        planes_axpy(-alpha, &ap, &mut r);
        iterations += 1;
        let true_res = (planes_norm(&sub(b, &apply(system, &u)?)) / bnorm).as_f64();
        history.push(true_res);
        if true_res <= tol {
            converged = true;
            break;
        }
        z = timed_precondition(&r)?;
        let rz_new = planes_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pp, zp) in p.iter_mut().zip(&z) {
            for (a, c) in pp.values.iter_mut().zip(&zp.values) {
                *a = *c + beta * *a;
            }
        }
    }
    Ok((
        u,
        IterationTrace {
            iterations,
            residual_history: history,
            converged,
            apply_time: if applies > 0 { apply_seconds / applies as f64 } else { 0.0 },
            total_time: start.elapsed().as_secs_f64(),
        },
    ))
}

/// `u ← u + M⁻¹(b − A u)` from `u = 0` until the relative residual reaches
/// `tol`. Three consecutive residual increases count as divergence.
pub fn iterative_refinement<T: Scalar, P: Preconditioner<T> + ?Sized>(
    fact: &P,
    system: &BlockTridiagonalSystem<T>,
    b: &[PlaneVector<T>],
    tol: f64,
    maxit: usize,
) -> Result<(Vec<PlaneVector<T>>, IterationTrace), KrylovError> {
    let start = Instant::now();
    system.check_vector(b)?;
    let bnorm = planes_norm(b);
    if bnorm == T::zero() {
        return Ok(zero_solution(system, start));
    }
    let mut u = planes_zeros(system.plane_count(), system.plane_dim());
    let mut r = b.to_vec();
    let mut history = vec![1.0];
    let mut apply_seconds = 0.0;
    let mut growth = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < maxit {
        let t = Instant::now();
        let du = fact.precondition(&r)?;
        apply_seconds += t.elapsed().as_secs_f64();
        planes_axpy(T::one(), &du, &mut u);
        iterations += 1;
        r = sub(b, &apply(system, &u)?);
        let res = (planes_norm(&r) / bnorm).as_f64();
        let prev = *history.last().expect("history starts with the initial residual");
        history.push(res);
        if res <= tol {
            converged = true;
            break;
        }
        growth = if res > prev { growth + 1 } else { 0 };
        if growth >= 3 || !res.is_finite() {
            return Err(KrylovError::Diverged {
                iteration: iterations,
                residual: res,
            });
        }
    }
    Ok((
        u,
        IterationTrace {
            iterations,
            residual_history: history,
            converged,
            apply_time: if iterations > 0 { apply_seconds / iterations as f64 } else { 0.0 },
            total_time: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acr::{acr_factor, cr_dense_factor, AcrConfig};
    use crate::discretize::assemble_poisson;
    use crate::system::flatten;
    use nalgebra::{DMatrix, DVector};

    fn dense_operator(s: &BlockTridiagonalSystem<f64>) -> DMatrix<f64> {
        let n = s.unknowns();
        let mut m = DMatrix::zeros(n, n);
        for (r, c, v) in s.global_triplets() {
            m[(r, c)] += v;
        }
        m
    }

    #[test]
    fn exact_preconditioner_converges_immediately() {
        let s = assemble_poisson::<f64>(8).unwrap();
        let fact = acr_factor(&s, &AcrConfig::hierarchical(1e-12, 2.0, 16)).unwrap();
        let (_, trace) = pcg(&s, &fact, s.rhs(), 1e-10, 50).unwrap();
        assert!(trace.converged);
        assert!(trace.iterations <= 2);
    }

    #[test]
    fn preconditioning_cuts_iterations() {
        let s = assemble_poisson::<f64>(16).unwrap();
        let fact = acr_factor(&s, &AcrConfig::hierarchical(1e-2, 2.0, 32)).unwrap();
        let (_, plain) = pcg(&s, &Identity, s.rhs(), 1e-8, 500).unwrap();
        let (_, pre) = pcg(&s, &fact, s.rhs(), 1e-8, 500).unwrap();
        assert!(plain.converged && pre.converged);
        assert!(pre.iterations < plain.iterations);
        assert!(*pre.residual_history.last().unwrap() <= 1e-8);
    }

    #[test]
    fn energy_error_never_grows() {
        let s = assemble_poisson::<f64>(8).unwrap();
        let a = dense_operator(&s);
        let exact = a.clone().lu().solve(&DVector::from_vec(flatten(s.rhs()))).unwrap();
        let fact = acr_factor(&s, &AcrConfig::hierarchical(3e-1, 2.0, 16)).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..12 {
            let (u, _) = pcg(&s, &fact, s.rhs(), 0.0, k).unwrap();
            let e = DVector::from_vec(flatten(&u)) - &exact;
            let energy = e.dot(&(&a * &e)).sqrt();
            assert!(energy <= last * (1.0 + 1e-10), "iteration {k}: {energy} > {last}");
            last = energy;
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let s = assemble_poisson::<f64>(4).unwrap();
        let fact = cr_dense_factor(&s).unwrap();
        let b = planes_zeros(4, 16);
        for (u, trace) in [
            pcg(&s, &fact, &b, 1e-8, 10).unwrap(),
            iterative_refinement(&fact, &s, &b, 1e-8, 10).unwrap(),
        ] {
            assert_eq!(trace.iterations, 0);
            assert!(flatten(&u).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn refinement_with_exact_factors_takes_one_step() {
        let s = assemble_poisson::<f64>(8).unwrap();
        let fact = cr_dense_factor(&s).unwrap();
        let (_, trace) = iterative_refinement(&fact, &s, s.rhs(), 1e-12, 10).unwrap();
        assert_eq!(trace.iterations, 1);
    }

    #[test]
    fn refinement_reaches_tight_tolerance() {
        let s = assemble_poisson::<f64>(16).unwrap();
        let fact = acr_factor(&s, &AcrConfig::hierarchical(1e-2, 2.0, 32)).unwrap();
        let (_, trace) = iterative_refinement(&fact, &s, s.rhs(), 1e-10, 100).unwrap();
        assert!(trace.converged);
        assert!(*trace.residual_history.last().unwrap() <= 1e-10);
        // contraction is roughly geometric: spread of step ratios stays small
        let h = &trace.residual_history;
        let ratios: Vec<f64> = h.windows(2).skip(1).map(|w| w[1] / w[0]).collect();
        if ratios.len() >= 2 {
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ratios.len() as f64;
            assert!(var < 0.5, "{ratios:?}");
        }
    }

    #[test]
    fn bad_preconditioner_diverges() {
        struct Amplify;
        impl Preconditioner<f64> for Amplify {
            fn precondition(&self, r: &[PlaneVector<f64>]) -> Result<Vec<PlaneVector<f64>>, AcrError> {
                Ok(r.iter().map(|p| PlaneVector::new(p.plane, p.values.iter().map(|v| v * 10.0).collect())).collect())
            }
        }
        let s = assemble_poisson::<f64>(4).unwrap();
        let err = iterative_refinement(&Amplify, &s, s.rhs(), 1e-10, 50).unwrap_err();
        assert!(matches!(err, KrylovError::Diverged { .. }));
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let s = assemble_poisson::<f64>(4).unwrap();
        struct Negate;
        impl Preconditioner<f64> for Negate {
            fn precondition(&self, r: &[PlaneVector<f64>]) -> Result<Vec<PlaneVector<f64>>, AcrError> {
                Ok(r.iter().map(|p| PlaneVector::new(p.plane, p.values.iter().map(|v| -v).collect())).collect())
            }
        }
        assert!(matches!(pcg(&s, &Negate, s.rhs(), 1e-8, 10), Err(KrylovError::Indefinite { .. })));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let s = assemble_poisson::<f64>(8).unwrap();
        let (_, trace) = pcg(&s, &Identity, s.rhs(), 1e-14, 2).unwrap();
        assert!(!trace.converged);
        assert_eq!(trace.iterations, 2);
        assert_eq!(trace.residual_history.len(), 3);
    }
}
