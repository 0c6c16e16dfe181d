use acr_core::discretize::{kappa_for_sampling, ProblemKind, ProblemSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Hierarchical-matrix cyclic reduction, direct solve.
    Acr,
    /// Cyclic reduction with dense blocks.
    CrDense,
    /// Conjugate gradients preconditioned by an ACR factorization.
    Pcg,
    /// Iterative refinement around an ACR factorization.
    Refine,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Acr => "acr",
            Mode::CrDense => "cr-dense",
            Mode::Pcg => "pcg",
            Mode::Refine => "refine",
        }
    }

    pub fn is_iterative(&self) -> bool {
        matches!(self, Mode::Pcg | Mode::Refine)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RhsKind {
    /// The generator's own right-hand side.
    Problem,
    /// Uniform entries in `[-1, 1]` drawn from `seed`.
    Random,
}

/// Everything one run depends on. Echoed verbatim into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub n: usize,
    pub alpha: f64,
    pub a: f64,
    /// Explicit wavenumber; ignored when `ppw` is set.
    pub kappa: Option<f64>,
    /// Points per wavelength; fixes `κ` from `n`.
    pub ppw: Option<f64>,
    /// Directory written by `generate`; replaces the generator when set.
    pub input: Option<PathBuf>,
    pub mode: Mode,
    pub eps: f64,
    pub eta: f64,
    pub leaf: usize,
    pub workers: usize,
    pub seed: u64,
    pub rhs: RhsKind,
    pub tol: f64,
    pub maxit: usize,
    pub precision: Precision,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Poisson,
            n: 16,
            alpha: 0.0,
            a: 1.0,
            kappa: None,
            ppw: None,
            input: None,
            mode: Mode::Acr,
            eps: 1e-3,
            eta: 2.0,
            leaf: 32,
            workers: 1,
            seed: 0,
            rhs: RhsKind::Problem,
            tol: 1e-6,
            maxit: 200,
            precision: Precision::F64,
            output: None,
            format: Format::Json,
        }
    }
}

/// Largest dense cyclic-reduction factorization a run may attempt.
pub const DENSE_BYTES_LIMIT: usize = 4 << 30;

impl RunConfig {
    pub fn problem_spec(&self) -> ProblemSpec {
        let kappa = match self.ppw {
            Some(ppw) => kappa_for_sampling(self.n, ppw),
            None => self.kappa.unwrap_or(0.0),
        };
        ProblemSpec {
            kind: self.problem,
            n: self.n,
            alpha: self.alpha,
            a: self.a,
            kappa,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.input.is_none() && self.n < 2 {
            return Err(format!("n must be at least 2, got {}", self.n));
        }
        if self.mode != Mode::CrDense {
            if !(self.eps > 0.0 && self.eps < 1.0) {
                return Err(format!("eps must lie in (0, 1), got {}", self.eps));
            }
            if !(self.eta > 0.0 && self.eta.is_finite()) {
                return Err(format!("eta must be positive, got {}", self.eta));
            }
            if self.leaf == 0 {
                return Err("leaf must be positive".into());
            }
        }
        if self.mode.is_iterative() {
            if !(self.tol > 0.0) {
                return Err(format!("tol must be positive, got {}", self.tol));
            }
            if self.maxit == 0 {
                return Err("maxit must be positive".into());
            }
        }
        if self.workers == 0 || !self.workers.is_power_of_two() {
            return Err(format!("workers must be a power of two, got {}", self.workers));
        }
        if self.workers > 1 && self.input.is_none() && (!self.n.is_power_of_two() || self.workers > self.n) {
            return Err(format!(
                "{} workers need a power-of-two plane count of at least that size, got n = {}",
                self.workers, self.n
            ));
        }
        if let Some(ppw) = self.ppw {
            if !(ppw > 0.0) {
                return Err(format!("ppw must be positive, got {ppw}"));
            }
        }
        if self.problem != ProblemKind::Helmholtz && (self.kappa.is_some() || self.ppw.is_some()) {
            return Err("kappa and ppw apply to the helmholtz problem only".into());
        }
        if self.problem != ProblemKind::Convdiff && self.alpha != 0.0 {
            return Err("alpha applies to the convdiff problem only".into());
        }
        if self.mode == Mode::CrDense && self.input.is_none() {
            let scalar = match self.precision {
                Precision::F64 => 8,
                Precision::F32 => 4,
            };
            let bytes = acr_core::acr::cr_dense_memory_estimate(self.n, self.n * self.n, scalar);
            if bytes > DENSE_BYTES_LIMIT {
                return Err(format!("dense cyclic reduction at n = {} needs {bytes} bytes", self.n));
            }
        }
        Ok(())
    }
}
