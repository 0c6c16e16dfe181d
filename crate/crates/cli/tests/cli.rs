use acr_cli::report::{from_csv, from_json, FactorReport, SolveReport, SweepPoint};
use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn acr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acr"))
        .args(args)
        .env_remove("ACR_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok_report(args: &[&str]) -> SolveReport {
    let out = acr(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn sweep_points(args: &[&str]) -> Vec<SweepPoint> {
    let out = acr(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap()
}

#[test]
fn dense_solve_is_oracle_grade() {
    let r = ok_report(&["solve", "--problem", "poisson", "--n", "8", "--mode", "cr-dense"]);
    assert!(r.relative_residual <= 1e-10, "{}", r.relative_residual);
    assert!(r.factor_bytes > 0);
}

#[test]
fn poisson_32_at_coarse_tolerance() {
    let r = ok_report(&[
        "solve", "--problem", "poisson", "--n", "32", "--mode", "acr", "--eps", "8e-3", "--eta", "2", "--leaf", "32",
    ]);
    assert!(r.relative_residual <= 5e-2, "{}", r.relative_residual);
    assert!(r.largest_rank > 0);
    assert!(r.average_rank > 0.0 && r.average_rank <= r.largest_rank as f64);
    assert!(r.peak_bytes >= r.factor_bytes);
    assert!(r.peak_measured);
    assert!(r.t_factor > 0.0 && r.t_solve > 0.0);
}

#[test]
fn tight_preconditioner_converges_at_once() {
    let r = ok_report(&["pcg", "--problem", "poisson", "--n", "8", "--eps", "1e-12"]);
    let t = r.trace.unwrap();
    assert!(t.converged);
    assert!(t.iterations <= 2, "{}", t.iterations);
}

#[test]
fn eps_sweep_residuals_do_not_grow() {
    let pts = sweep_points(&["bench", "--problem", "poisson", "--n", "16", "--sweep", "eps=1e-1,1e-2,1e-3"]);
    let res: Vec<f64> = pts.iter().map(|p| p.outcome.report().unwrap().relative_residual).collect();
    assert_eq!(pts.iter().map(|p| p.value.unwrap()).collect::<Vec<_>>(), vec![1e-1, 1e-2, 1e-3]);
    assert!(res.windows(2).all(|w| w[1] <= w[0]), "{res:?}");
}

#[test]
fn helmholtz_ranks_grow_with_n() {
    let pts = sweep_points(&["bench", "--problem", "helmholtz", "--ppw", "12", "--sweep", "n=8,16,32"]);
    let ranks: Vec<usize> = pts.iter().map(|p| p.outcome.report().unwrap().largest_rank).collect();
    assert!(ranks.windows(2).all(|w| w[1] > w[0]), "{ranks:?}");
}

#[test]
fn empty_axis_is_a_usage_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.json");
    let out = acr(&["bench", "--sweep", "eps=", "--output", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!path.exists());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn invalid_config_and_solver_failures_have_distinct_codes() {
    let out = acr(&["solve", "--n", "8", "--eps", "0"]);
    assert_eq!(out.status.code(), Some(2));
    // Past the first eigenvalue the operator is indefinite; CG must refuse it.
    let out = acr(&["pcg", "--problem", "helmholtz", "--n", "8", "--kappa", "8", "--eps", "1e-10"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "solver");
    let out = acr(&["solve", "--input", "/nonexistent/acr-blocks"]);
    assert_eq!(out.status.code(), Some(4));
}

fn strip_timing(mut v: Value) -> Value {
    for key in ["t_factor", "t_solve", "peak_bytes"] {
        v[key] = Value::Null;
    }
    if v["trace"].is_object() {
        v["trace"]["apply_time"] = Value::Null;
        v["trace"]["total_time"] = Value::Null;
    }
    v
}

#[test]
fn reruns_agree_modulo_timing() {
    let args = ["pcg", "--n", "16", "--eps", "1e-1", "--rhs", "random", "--seed", "11"];
    let a: Value = serde_json::from_slice(&acr(&args).stdout).unwrap();
    let b: Value = serde_json::from_slice(&acr(&args).stdout).unwrap();
    assert_eq!(strip_timing(a.clone()), strip_timing(b));
    let other: Value = serde_json::from_slice(&acr(&["pcg", "--n", "16", "--eps", "1e-1", "--rhs", "random", "--seed", "12"]).stdout).unwrap();
    assert_ne!(strip_timing(a), strip_timing(other));
}

#[test]
fn csv_output_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = acr(&[
        "bench", "--n", "8", "--sweep", "eps=1e-1,3", "--format", "csv", "--output", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("schema,"));
    let pts = from_csv(&text).unwrap();
    assert_eq!(pts.len(), 2);
    assert!(pts[0].outcome.report().is_some());
    assert!(pts[1].outcome.report().is_none());
}

#[test]
fn generated_blocks_solve_like_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    let blocks = dir.path().join("blocks");
    let out = acr(&["generate", "--problem", "convdiff", "--n", "6", "--alpha", "10", "--out", blocks.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&blocks).join("D_0.mtx").exists());
    let direct = ok_report(&["solve", "--problem", "convdiff", "--n", "6", "--alpha", "10", "--mode", "cr-dense"]);
    let imported = ok_report(&["solve", "--input", blocks.to_str().unwrap(), "--mode", "cr-dense"]);
    assert!(imported.relative_residual <= 1e-10);
    assert!((imported.relative_residual - direct.relative_residual).abs() <= 1e-10);
}

#[test]
fn worker_count_comes_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_acr"))
        .args(["solve", "--n", "8", "--mode", "cr-dense"])
        .env("ACR_WORKERS", "4")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: SolveReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.config.workers, 4);
    assert!(r.ledger.is_some_and(|l| !l.is_empty()));
}

#[test]
fn factor_reports_levels() {
    let out = acr(&["factor", "--n", "16", "--eps", "1e-2"]);
    assert!(out.status.success());
    let r: FactorReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r.metadata.planes, 16);
    assert_eq!(r.metadata.levels.len(), 4);
    assert_eq!(r.metadata.levels.iter().map(|l| l.bytes).sum::<usize>() + r.metadata.apex_bytes, r.metadata.total_bytes);
}
