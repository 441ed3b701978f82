use geomreg_core::linalg::max_abs_diff;
use geomreg_core::linear::{covridge_closed_form, sparridge_solve, validate_theorem1, LinearProblem, Theorem1Setup};
use geomreg_core::rng::{derive_seed, stream_rng, Rng};
use geomreg_core::Executor;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cli::{Theorem, ValidateArgs};
use crate::error::{CliError, Result};
use crate::exec::RayonExecutor;
use crate::formats::{write_json, MatrixJson};
use crate::manifest::{RunManifest, RESULTS_DIR};

use super::{prepare_run_dir, rel, resolve_seed};

/// Agreement required between the γ = 0 sparse solve and the closed form.
pub const GAMMA0_TOLERANCE: f64 = 1e-8;

#[derive(Serialize)]
struct T1Json {
    theorem: &'static str,
    n: usize,
    p: usize,
    replications: usize,
    sigma: f64,
    lambda1: f64,
    lambda2: f64,
    delta: f64,
    relative_frobenius_error: f64,
    tolerance: f64,
    mean_within_bounds: bool,
    passed: bool,
    max_leverage: f64,
    w_circ: Vec<f64>,
    empirical_mean: Vec<f64>,
    mean_bounds: Vec<f64>,
    empirical_cov: MatrixJson,
    theoretical_cov: MatrixJson,
}

#[derive(Serialize)]
struct ProblemJson {
    n: usize,
    p: usize,
    discrepancy: f64,
}

#[derive(Serialize)]
struct T2Json {
    theorem: &'static str,
    problems: usize,
    lambda1: f64,
    delta: f64,
    max_discrepancy: f64,
    tolerance: f64,
    passed: bool,
    details: Vec<ProblemJson>,
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Gaussian fixed design (stream 0) and true coefficients (stream 1).
pub fn gaussian_design(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream_rng(seed, 0);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let mut rng = stream_rng(seed, 1);
    let w0 = DVector::from_fn(p, |_, _| normal(&mut rng));
    (x, w0)
}

/// Random well-posed problem `i`: 20–200 rows, 1–10 columns.
pub fn random_problem(seed: u64, i: usize, delta: f64) -> Result<LinearProblem> {
    let mut rng = stream_rng(derive_seed(seed, i as u64), 0);
    let n = rng.random_range(20..=200);
    let p = rng.random_range(1..=10);
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let w = DVector::from_fn(p, |_, _| normal(&mut rng));
    let noise = DVector::from_fn(n, |_, _| 0.5 * normal(&mut rng));
    let y = &x * &w + noise;
    Ok(LinearProblem::with_design_gram(x, y, delta)?)
}

pub fn cmd_validate(args: &ValidateArgs, threads: usize) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let exec = RayonExecutor::new(threads)?;
    if args.n == 0 || args.p == 0 {
        return Err(CliError::Usage("--n and --p must be positive".into()));
    }
    prepare_run_dir(&args.out)?;
    let config = serde_json::json!({ "seed": seed, "args": args });
    let mut manifest = RunManifest::new("validate", seed, exec.threads(), config, vec![rel(RESULTS_DIR, "report.json")]);
    manifest.write(&args.out)?;
    let report_path = args.out.join(RESULTS_DIR).join("report.json");

    let (passed, verdict) = match args.theorem {
        Theorem::T1 => {
            let (x, w0) = gaussian_design(args.n, args.p, seed);
            let setup = Theorem1Setup {
                sigma: args.sigma,
                lambda1: args.lambda1,
                lambda2: args.lambda2,
                delta: args.delta,
                replications: args.replications,
                seed: derive_seed(seed, 2),
            };
            let r = validate_theorem1(&x, &w0, &setup, &exec)?;
            let passed = r.passes(args.tolerance);
            write_json(
                &report_path,
                &T1Json {
                    theorem: "t1",
                    n: r.n,
                    p: r.p,
                    replications: r.replications,
                    sigma: args.sigma,
                    lambda1: args.lambda1,
                    lambda2: args.lambda2,
                    delta: args.delta,
                    relative_frobenius_error: r.relative_frobenius_error,
                    tolerance: args.tolerance,
                    mean_within_bounds: r.mean_within_bounds(),
                    passed,
                    max_leverage: r.max_leverage,
                    w_circ: r.w_circ.iter().copied().collect(),
                    empirical_mean: r.empirical_mean.iter().copied().collect(),
                    mean_bounds: r.mean_bounds.iter().copied().collect(),
                    empirical_cov: (&r.empirical_cov).into(),
                    theoretical_cov: (&r.theoretical_cov).into(),
                },
            )?;
            let verdict = format!(
                "t1: relative Frobenius error {:.4} (tolerance {}), mean within bounds: {}",
                r.relative_frobenius_error,
                args.tolerance,
                r.mean_within_bounds()
            );
            (passed, verdict)
        }
        Theorem::T2Gamma0 => {
            let details = exec.map(args.problems, |i| -> Result<ProblemJson> {
                let problem = random_problem(seed, i, args.delta)?;
                let sparse = sparridge_solve(&problem, args.lambda1, 0.0, 1e-12, 100_000)?;
                let closed = covridge_closed_form(&problem, args.lambda1, 0.0)?;
                Ok(ProblemJson {
                    n: problem.n(),
                    p: problem.p(),
                    discrepancy: max_abs_diff(&sparse.w_hat, &closed),
                })
            });
            let details = details.into_iter().collect::<Result<Vec<_>>>()?;
            let max_discrepancy = details.iter().map(|d| d.discrepancy).fold(0.0, f64::max);
            let passed = max_discrepancy < GAMMA0_TOLERANCE;
            write_json(
                &report_path,
                &T2Json {
                    theorem: "t2-gamma0",
                    problems: args.problems,
                    lambda1: args.lambda1,
                    delta: args.delta,
                    max_discrepancy,
                    tolerance: GAMMA0_TOLERANCE,
                    passed,
                    details,
                },
            )?;
            (passed, format!("t2-gamma0: max discrepancy {max_discrepancy:.3e} over {} problems", args.problems))
        }
    };
    println!("{verdict}: {}", if passed { "PASS" } else { "FAIL" });
    manifest.finish(&args.out, if passed { "ok" } else { "failed" })?;
    if passed {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(verdict))
    }
}
