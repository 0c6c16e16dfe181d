//! Run reports and their JSON / CSV encodings.
//!
//! CSV files carry one row per run with the fixed column order of
//! [`CsvRow`]; the first column holds [`CSV_SCHEMA`] so readers can reject
//! files from other layouts.

use crate::config::{Format, Mode, Precision, RhsKind, RunConfig};
use acr_core::acr::FactorMetadata;
use acr_core::discretize::ProblemKind;
use acr_core::krylov::IterationTrace;
use acr_core::parallel::{Phase, TrafficSummary};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const CSV_SCHEMA: &str = "acr-report-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub config: RunConfig,
    pub relative_residual: f64,
    pub average_rank: f64,
    pub largest_rank: usize,
    pub factor_bytes: usize,
    /// Heap high-water mark of the run above the starting live size.
    pub peak_bytes: usize,
    /// False when `peak_bytes` is a copy of `factor_bytes`.
    pub peak_measured: bool,
    pub t_factor: f64,
    pub t_solve: f64,
    pub trace: Option<IterationTrace>,
    pub ledger: Option<Vec<TrafficSummary>>,
}

impl SolveReport {
    /// Copy with every measured quantity (times, peak heap) zeroed.
    pub fn without_measurements(&self) -> Self {
        let mut r = self.clone();
        r.t_factor = 0.0;
        r.t_solve = 0.0;
        r.peak_bytes = 0;
        if let Some(t) = &mut r.trace {
            t.apply_time = 0.0;
            t.total_time = 0.0;
        }
        r
    }
}

/// Factorization-only output of the `factor` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub config: RunConfig,
    pub metadata: FactorMetadata,
    pub peak_bytes: usize,
    pub ledger: Option<Vec<TrafficSummary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Ok { report: SolveReport },
    Failed { config: RunConfig, error: ErrorInfo },
}

impl Outcome {
    pub fn config(&self) -> &RunConfig {
        match self {
            Outcome::Ok { report } => &report.config,
            Outcome::Failed { config, .. } => config,
        }
    }

    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            Outcome::Ok { report } => Some(report),
            Outcome::Failed { .. } => None,
        }
    }
}

/// One point of a sweep; single runs have no parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: Option<String>,
    pub value: Option<f64>,
    #[serde(flatten)]
    pub outcome: Outcome,
}

pub fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

/// Flat CSV record. Field order is the column order of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    schema: String,
    param: Option<String>,
    value: Option<f64>,
    status: String,
    error_kind: Option<String>,
    error_message: Option<String>,
    problem: ProblemKind,
    n: usize,
    alpha: f64,
    a: f64,
    kappa: Option<f64>,
    ppw: Option<f64>,
    input: Option<PathBuf>,
    mode: Mode,
    eps: f64,
    eta: f64,
    leaf: usize,
    workers: usize,
    seed: u64,
    rhs: RhsKind,
    tol: f64,
    maxit: usize,
    precision: Precision,
    output: Option<PathBuf>,
    format: Format,
    relative_residual: Option<f64>,
    average_rank: Option<f64>,
    largest_rank: Option<usize>,
    factor_bytes: Option<usize>,
    peak_bytes: Option<usize>,
    peak_measured: Option<bool>,
    t_factor: Option<f64>,
    t_solve: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    apply_time: Option<f64>,
    total_time: Option<f64>,
    /// `;`-separated residuals.
    residual_history: Option<String>,
    /// `|`-separated `phase:level:messages:bytes:active:idle` entries.
    ledger: Option<String>,
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Factor => "factor",
        Phase::Forward => "forward",
        Phase::Apex => "apex",
        Phase::Backward => "backward",
    }
}

fn encode_ledger(l: &[TrafficSummary]) -> String {
    l.iter()
        .map(|t| {
            format!(
                "{}:{}:{}:{}:{}:{}",
                phase_name(t.phase),
                t.level,
                t.messages,
                t.bytes,
                t.active_workers,
                t.idle_workers
            )
        })
        .collect::<Vec<_>>()
        .join("|")
}

fn decode_ledger(s: &str) -> Result<Vec<TrafficSummary>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('|')
        .map(|item| {
            let f: Vec<&str> = item.split(':').collect();
            if f.len() != 6 {
                return Err(format!("bad ledger entry {item:?}"));
            }
            let phase = match f[0] {
                "factor" => Phase::Factor,
                "forward" => Phase::Forward,
                "apex" => Phase::Apex,
                "backward" => Phase::Backward,
                other => return Err(format!("unknown phase {other:?}")),
            };
            let num = |i: usize| f[i].parse::<usize>().map_err(|e| format!("{item:?}: {e}"));
            Ok(TrafficSummary {
                phase,
                level: num(1)?,
                messages: num(2)?,
                bytes: num(3)?,
                active_workers: num(4)?,
                idle_workers: num(5)?,
            })
        })
        .collect()
}

impl CsvRow {
    fn from_point(p: &SweepPoint) -> Self {
        let c = p.outcome.config();
        let mut row = CsvRow {
            schema: CSV_SCHEMA.into(),
            param: p.param.clone(),
            value: p.value,
            status: "ok".into(),
            error_kind: None,
            error_message: None,
            problem: c.problem,
            n: c.n,
            alpha: c.alpha,
            a: c.a,
            kappa: c.kappa,
            ppw: c.ppw,
            input: c.input.clone(),
            mode: c.mode,
            eps: c.eps,
            eta: c.eta,
            leaf: c.leaf,
            workers: c.workers,
            seed: c.seed,
            rhs: c.rhs,
            tol: c.tol,
            maxit: c.maxit,
            precision: c.precision,
            output: c.output.clone(),
            format: c.format,
            relative_residual: None,
            average_rank: None,
            largest_rank: None,
            factor_bytes: None,
            peak_bytes: None,
            peak_measured: None,
            t_factor: None,
            t_solve: None,
            iterations: None,
            converged: None,
            apply_time: None,
            total_time: None,
            residual_history: None,
            ledger: None,
        };
        match &p.outcome {
            Outcome::Failed { error, .. } => {
                row.status = "failed".into();
                row.error_kind = Some(error.kind.clone());
                row.error_message = Some(error.message.clone());
            }
            Outcome::Ok { report: r } => {
                row.relative_residual = Some(r.relative_residual);
                row.average_rank = Some(r.average_rank);
                row.largest_rank = Some(r.largest_rank);
                row.factor_bytes = Some(r.factor_bytes);
                row.peak_bytes = Some(r.peak_bytes);
                row.peak_measured = Some(r.peak_measured);
                row.t_factor = Some(r.t_factor);
                row.t_solve = Some(r.t_solve);
                if let Some(t) = &r.trace {
                    row.iterations = Some(t.iterations);
                    row.converged = Some(t.converged);
                    row.apply_time = Some(t.apply_time);
                    row.total_time = Some(t.total_time);
                    row.residual_history =
                        Some(t.residual_history.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";"));
                }
                row.ledger = r.ledger.as_deref().map(encode_ledger);
            }
        }
        row
    }

    fn into_point(self) -> Result<SweepPoint, String> {
        if self.schema != CSV_SCHEMA {
            return Err(format!("unsupported schema {:?}, expected {CSV_SCHEMA}", self.schema));
        }
        let config = RunConfig {
            problem: self.problem,
            n: self.n,
            alpha: self.alpha,
            a: self.a,
            kappa: self.kappa,
            ppw: self.ppw,
            input: self.input,
            mode: self.mode,
            eps: self.eps,
            eta: self.eta,
            leaf: self.leaf,
            workers: self.workers,
            seed: self.seed,
            rhs: self.rhs,
            tol: self.tol,
            maxit: self.maxit,
            precision: self.precision,
            output: self.output,
            format: self.format,
        };
        let missing = |field: &str| format!("status ok but column {field} is empty");
        let outcome = match self.status.as_str() {
            "failed" => Outcome::Failed {
                config,
                error: ErrorInfo {
                    kind: self.error_kind.unwrap_or_default(),
                    message: self.error_message.unwrap_or_default(),
                },
            },
            "ok" => {
                let trace = match self.iterations {
                    None => None,
                    Some(iterations) => Some(IterationTrace {
                        iterations,
                        residual_history: match self.residual_history.as_deref() {
                            None | Some("") => Vec::new(),
                            Some(h) => h
                                .split(';')
                                .map(|x| x.parse::<f64>().map_err(|e| format!("residual {x:?}: {e}")))
                                .collect::<Result<_, _>>()?,
                        },
                        converged: self.converged.ok_or_else(|| missing("converged"))?,
                        apply_time: self.apply_time.ok_or_else(|| missing("apply_time"))?,
                        total_time: self.total_time.ok_or_else(|| missing("total_time"))?,
                    }),
                };
                Outcome::Ok {
                    report: SolveReport {
                        config,
                        relative_residual: self.relative_residual.ok_or_else(|| missing("relative_residual"))?,
                        average_rank: self.average_rank.ok_or_else(|| missing("average_rank"))?,
                        largest_rank: self.largest_rank.ok_or_else(|| missing("largest_rank"))?,
                        factor_bytes: self.factor_bytes.ok_or_else(|| missing("factor_bytes"))?,
                        peak_bytes: self.peak_bytes.ok_or_else(|| missing("peak_bytes"))?,
                        peak_measured: self.peak_measured.ok_or_else(|| missing("peak_measured"))?,
                        t_factor: self.t_factor.ok_or_else(|| missing("t_factor"))?,
                        t_solve: self.t_solve.ok_or_else(|| missing("t_solve"))?,
                        trace,
                        ledger: self.ledger.as_deref().map(decode_ledger).transpose()?,
                    },
                }
            }
            other => return Err(format!("unknown status {other:?}")),
        };
        Ok(SweepPoint {
            param: self.param,
            value: self.value,
            outcome,
        })
    }
}

pub fn to_csv(points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(CsvRow::from_point(p)).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn from_csv(text: &str) -> Result<Vec<SweepPoint>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<CsvRow>()
        .map(|row| row.map_err(|e| e.to_string()).and_then(CsvRow::into_point))
        .collect()
}

pub fn from_json(text: &str) -> Result<Vec<SweepPoint>, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

/// Encodes the points in the requested format.
pub fn encode(points: &[SweepPoint], format: Format) -> String {
    match format {
        Format::Json => to_json(&points),
        Format::Csv => to_csv(points),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SolveReport {
        SolveReport {
            config: RunConfig {
                ppw: None,
                kappa: Some(1.25),
                problem: ProblemKind::Helmholtz,
                workers: 2,
                output: Some("out, with comma.csv".into()),
                ..RunConfig::default()
            },
            relative_residual: 1.234_567_890_123e-7,
            average_rank: 2.0 / 3.0,
            largest_rank: 9,
            factor_bytes: 123_456_789,
            peak_bytes: 987_654_321,
            peak_measured: true,
            t_factor: 0.1 + 0.2,
            t_solve: 1e-300,
            trace: Some(IterationTrace {
                iterations: 3,
                residual_history: vec![1.0, 0.1, 1.0 / 3.0 * 1e-4, 5e-7],
                converged: true,
                apply_time: 0.25,
                total_time: 1.5,
            }),
            ledger: Some(vec![
                TrafficSummary {
                    phase: Phase::Factor,
                    level: 0,
                    messages: 1,
                    bytes: 4096,
                    active_workers: 2,
                    idle_workers: 0,
                },
                TrafficSummary {
                    phase: Phase::Apex,
                    level: 4,
                    messages: 0,
                    bytes: 0,
                    active_workers: 1,
                    idle_workers: 1,
                },
            ]),
        }
    }

    fn points() -> Vec<SweepPoint> {
        vec![
            SweepPoint {
                param: Some("eps".into()),
                value: Some(0.1),
                outcome: Outcome::Ok { report: sample() },
            },
            SweepPoint {
                param: Some("eps".into()),
                value: Some(1e-2),
                outcome: Outcome::Failed {
                    config: RunConfig::default(),
                    error: ErrorInfo {
                        kind: "solver".into(),
                        message: "singular diagonal block at level 0, plane 2: \"quoted\"".into(),
                    },
                },
            },
            SweepPoint {
                param: None,
                value: None,
                outcome: Outcome::Ok {
                    report: SolveReport {
                        trace: None,
                        ledger: None,
                        ..sample()
                    },
                },
            },
        ]
    }

    #[test]
    fn json_round_trips() {
        let p = points();
        assert_eq!(from_json(&to_json(&p)).unwrap(), p);
        let r = sample();
        let back: SolveReport = serde_json::from_str(&to_json(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn csv_round_trips() {
        let p = points();
        let text = to_csv(&p);
        assert!(text.starts_with("schema,param,value,status,"));
        assert_eq!(from_csv(&text).unwrap(), p);
    }

    #[test]
    fn csv_rejects_other_schemas() {
        let text = to_csv(&points()).replace(CSV_SCHEMA, "acr-report-v0");
        assert!(from_csv(&text).unwrap_err().contains("schema"));
    }

    #[test]
    fn measurements_are_separable() {
        let a = sample();
        let mut b = sample();
        b.t_factor = 99.0;
        b.peak_bytes = 1;
        b.trace.as_mut().unwrap().total_time = 7.0;
        assert_ne!(a, b);
        assert_eq!(a.without_measurements(), b.without_measurements());
    }
}
