//! Single runs and parameter sweeps.

use crate::alloc;
use crate::config::{Mode, Precision, RhsKind, RunConfig};
use crate::report::{ErrorInfo, FactorReport, Outcome, SolveReport, SweepPoint};
use acr_core::acr::{acr_factor, AcrConfig, AcrError, AcrFactorization};
use acr_core::krylov::{iterative_refinement, pcg, KrylovError};
use acr_core::mtx::{export_system, import_system, MtxError};
use acr_core::parallel::{execute_parallel_factor, execute_parallel_solve, plan_schedule, ParallelError, TrafficSummary};
use acr_core::system::{relative_residual, BlockTridiagonalSystem, PlaneVector, SystemError};
use acr_core::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Solver(_) => "solver",
            CliError::Io(_) => "io",
        }
    }

    pub fn info(&self) -> ErrorInfo {
        ErrorInfo {
            kind: self.kind().into(),
            message: self.to_string(),
        }
    }
}

macro_rules! solver_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Solver(e.to_string())
            }
        })*
    };
}
solver_error!(AcrError, KrylovError, ParallelError, SystemError);

impl From<MtxError> for CliError {
    fn from(e: MtxError) -> Self {
        match e {
            MtxError::System(e) => CliError::Solver(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

/// Runs in flight; peak heap figures are only attributable to a run while
/// it is alone.
static ACTIVE: AtomicUsize = AtomicUsize::new(0);

struct PeakProbe {
    base: usize,
    alone: bool,
}

impl PeakProbe {
    fn start() -> Self {
        let alone = ACTIVE.fetch_add(1, Ordering::SeqCst) == 0;
        Self {
            base: alloc::reset_peak(),
            alone,
        }
    }

    /// `(bytes, measured)`; falls back to `fallback` when other runs overlapped.
    fn finish(self, fallback: usize) -> (usize, bool) {
        let peak = alloc::peak().saturating_sub(self.base);
        let alone = self.alone && ACTIVE.load(Ordering::SeqCst) == 1;
        if alone {
            (peak, true)
        } else {
            (fallback, false)
        }
    }
}

impl Drop for PeakProbe {
    fn drop(&mut self) {
        ACTIVE.fetch_sub(1, Ordering::SeqCst);
    }
}

fn acr_config(config: &RunConfig) -> AcrConfig {
    match config.mode {
        Mode::CrDense => AcrConfig::dense(),
        _ => AcrConfig::hierarchical(config.eps, config.eta, config.leaf),
    }
}

fn load_system<T: Scalar>(config: &RunConfig) -> Result<BlockTridiagonalSystem<T>, CliError> {
    match &config.input {
        Some(dir) => Ok(import_system(dir)?),
        None => Ok(config.problem_spec().assemble()?),
    }
}

fn rhs<T: Scalar>(config: &RunConfig, system: &BlockTridiagonalSystem<T>) -> Vec<PlaneVector<T>> {
    match config.rhs {
        RhsKind::Problem => system.rhs().to_vec(),
        RhsKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (0..system.plane_count())
                .map(|j| PlaneVector::new(j, (0..system.plane_dim()).map(|_| T::of(rng.gen_range(-1.0..=1.0))).collect()))
                .collect()
        }
    }
}

fn check(config: &RunConfig) -> Result<(), CliError> {
    config.validate().map_err(CliError::Usage)
}

fn factor<T: Scalar>(
    config: &RunConfig,
    system: &BlockTridiagonalSystem<T>,
) -> Result<(AcrFactorization<T>, Option<Vec<TrafficSummary>>), CliError> {
    let ac = acr_config(config);
    if config.workers > 1 {
        let plan = plan_schedule(system.plane_count(), config.workers).map_err(|e| CliError::Usage(e.to_string()))?;
        let (fact, ledger) = execute_parallel_factor(system, &plan, &ac)?;
        Ok((fact, Some(ledger.summary())))
    } else {
        Ok((acr_factor(system, &ac)?, None))
    }
}

fn run_typed<T: Scalar>(config: &RunConfig) -> Result<SolveReport, CliError> {
    let probe = PeakProbe::start();
    let system = load_system::<T>(config)?;
    let b = rhs(config, &system);
    let (fact, mut ledger) = factor(config, &system)?;
    let t_factor = fact.factor_seconds();
    let start = Instant::now();
    let (u, trace) = match config.mode {
        Mode::Acr | Mode::CrDense if config.workers > 1 => {
            let plan = plan_schedule(system.plane_count(), config.workers).map_err(|e| CliError::Usage(e.to_string()))?;
            let (u, solve_ledger) = execute_parallel_solve(&fact, &plan, &b)?;
            if let Some(l) = &mut ledger {
                l.extend(solve_ledger.summary());
            }
            (u, None)
        }
        Mode::Acr | Mode::CrDense => (fact.solve(&b)?, None),
        Mode::Pcg => {
            let (u, t) = pcg(&system, &fact, &b, config.tol, config.maxit)?;
            (u, Some(t))
        }
        Mode::Refine => {
            let (u, t) = iterative_refinement(&fact, &system, &b, config.tol, config.maxit)?;
            (u, Some(t))
        }
    };
    let t_solve = start.elapsed().as_secs_f64();
    let relative_residual = relative_residual(&system, &u, &b)?.as_f64();
    let stats = fact.rank_stats();
    let factor_bytes = fact.bytes();
    let (peak_bytes, peak_measured) = probe.finish(factor_bytes);
    Ok(SolveReport {
        config: config.clone(),
        relative_residual,
        average_rank: stats.average_rank,
        largest_rank: stats.largest_rank,
        factor_bytes,
        peak_bytes,
        peak_measured,
        t_factor,
        t_solve,
        trace,
        ledger,
    })
}

/// Assembles (or imports), factors and solves as `config` describes.
pub fn run(config: &RunConfig) -> Result<SolveReport, CliError> {
    check(config)?;
    match config.precision {
        Precision::F64 => run_typed::<f64>(config),
        Precision::F32 => run_typed::<f32>(config),
    }
}

fn factor_typed<T: Scalar>(config: &RunConfig) -> Result<FactorReport, CliError> {
    let probe = PeakProbe::start();
    let system = load_system::<T>(config)?;
    let (fact, ledger) = factor(config, &system)?;
    let metadata = fact.metadata();
    let (peak_bytes, _) = probe.finish(metadata.total_bytes);
    Ok(FactorReport {
        config: config.clone(),
        metadata,
        peak_bytes,
        ledger,
    })
}

/// Factorization only.
pub fn factor_only(config: &RunConfig) -> Result<FactorReport, CliError> {
    check(config)?;
    match config.precision {
        Precision::F64 => factor_typed::<f64>(config),
        Precision::F32 => factor_typed::<f32>(config),
    }
}

/// Writes the Matrix Market block set of the configured problem to `dir`.
pub fn generate(config: &RunConfig, dir: &Path) -> Result<(), CliError> {
    check(config)?;
    match config.precision {
        Precision::F64 => export_system(&config.problem_spec().assemble::<f64>()?, dir)?,
        Precision::F32 => export_system(&config.problem_spec().assemble::<f32>()?, dir)?,
    }
    Ok(())
}

/// Parameters a sweep may vary.
pub const SWEEP_PARAMS: &[&str] = &["n", "eps", "eta", "leaf", "workers", "alpha", "a", "kappa", "ppw", "seed", "tol", "maxit"];

fn as_count(param: &str, v: f64) -> Result<usize, CliError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Usage(format!("{param} takes whole numbers, got {v}")))
    }
}

/// `template` with `param` set to `value`.
pub fn with_param(template: &RunConfig, param: &str, value: f64) -> Result<RunConfig, CliError> {
    let mut c = template.clone();
    match param {
        "n" => c.n = as_count(param, value)?,
        "eps" => c.eps = value,
        "eta" => c.eta = value,
        "leaf" => c.leaf = as_count(param, value)?,
        "workers" => c.workers = as_count(param, value)?,
        "alpha" => c.alpha = value,
        "a" => c.a = value,
        "kappa" => c.kappa = Some(value),
        "ppw" => c.ppw = Some(value),
        "seed" => c.seed = as_count(param, value)? as u64,
        "tol" => c.tol = value,
        "maxit" => c.maxit = as_count(param, value)?,
        other => {
            return Err(CliError::Usage(format!(
                "cannot sweep '{other}' (one of {})",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Ok(c)
}

/// Parses `param=v1,v2,...`.
pub fn parse_axis(spec: &str) -> Result<(String, Vec<f64>), CliError> {
    let (param, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("sweep axis must look like param=v1,v2, got '{spec}'")))?;
    let param = param.trim().to_string();
    if !SWEEP_PARAMS.contains(&param.as_str()) {
        return Err(CliError::Usage(format!(
            "cannot sweep '{param}' (one of {})",
            SWEEP_PARAMS.join(", ")
        )));
    }
    let values = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|e| CliError::Usage(format!("sweep value '{v}': {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((param, values))
}

/// One run per value, in axis order. Failing points are recorded, not fatal.
pub fn sweep(template: &RunConfig, param: &str, values: &[f64]) -> Result<Vec<SweepPoint>, CliError> {
    if values.is_empty() {
        return Err(CliError::Usage(format!("sweep over '{param}' has no values")));
    }
    let configs = values
        .iter()
        .map(|&v| with_param(template, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(values
        .iter()
        .zip(configs)
        .map(|(&value, config)| SweepPoint {
            param: Some(param.to_string()),
            value: Some(value),
            outcome: match run(&config) {
                Ok(report) => Outcome::Ok { report },
                Err(e) => Outcome::Failed { config, error: e.info() },
            },
        })
        .collect())
}
