use geomreg_core::data::{Dataset, Task};
use geomreg_core::pipeline::{
    classification_repeated_cv, fit_network, regression_holdout, ClassificationProtocol, FitSpec, ParamSource,
};
use geomreg_core::penalty::PenaltyFamily;
use geomreg_core::rng::derive_seed;
use geomreg_core::tune::{grid_search, GridResult};
use serde::Serialize;

use crate::cli::FitArgs;
use crate::error::{CliError, Result};
use crate::exec::RayonExecutor;
use crate::formats::{write_json, FittedModelJson};
use crate::io::{fmt_f64, fmt_params, load_csv, write_table};
use crate::manifest::{RunManifest, MODELS_DIR, RESULTS_DIR};

use super::{check_arity, criterion_for, cv_plan, fit_spec, parse_family, prepare_run_dir, rel, resolve_seed, task_of, write_history};
use super::tune::write_cv_table;

#[derive(Serialize)]
struct RegressionMetricsJson<'a> {
    task: &'static str,
    method: &'static str,
    param_names: &'a [&'static str],
    params: &'a [f64],
    train_rows: usize,
    test_rows: usize,
    mse: f64,
    mae: f64,
    rmse: f64,
    r2: Option<f64>,
    bias: f64,
    epochs_run: usize,
    cv_score: Option<f64>,
}

#[derive(Serialize)]
struct ClassificationMetricsJson<'a> {
    task: &'static str,
    method: &'static str,
    param_names: &'a [&'static str],
    folds: usize,
    repeats: usize,
    mean_balanced_accuracy: f64,
    std_balanced_accuracy: f64,
    completed_folds: usize,
    failed_folds: usize,
    final_params: &'a [f64],
}

/// Regression: hold-out split, optional tuning on the training rows, refit and
/// score. Classification: repeated outer cross-validation, then a final model
/// on all rows.
pub fn cmd_fit(args: &FitArgs, threads: usize) -> Result<()> {
    let seed = resolve_seed(args.train.seed)?;
    let family = parse_family(&args.data.method)?;
    if !args.tune {
        if family.arity() > 0 && args.params.is_empty() {
            return Err(CliError::Usage(format!(
                "{} needs --params {} or --tune",
                family.name(),
                family.param_names().join(",")
            )));
        }
        check_arity(family, &args.params)?;
    }
    let task = task_of(args.data.task);
    let spec = fit_spec(&args.train, seed)?;
    let exec = RayonExecutor::new(threads)?;
    let data = load_csv(&args.data.data, &args.data.target, task)?;
    let source = if args.tune {
        ParamSource::Tuned(cv_plan(&args.grid, family, criterion_for(task), seed))
    } else {
        ParamSource::Fixed(args.params.clone())
    };

    let mut outputs = vec![
        rel(RESULTS_DIR, "metrics.json"),
        rel(RESULTS_DIR, "history.csv"),
        rel(MODELS_DIR, "model.json"),
    ];
    match task {
        Task::Regression if args.tune => outputs.push(rel(RESULTS_DIR, "cv_table.csv")),
        Task::Classification => outputs.push(rel(RESULTS_DIR, "folds.csv")),
        Task::Regression => {}
    }
    prepare_run_dir(&args.out)?;
    let config = serde_json::json!({ "seed": seed, "args": args });
    let mut manifest = RunManifest::new("fit", seed, exec.threads(), config, outputs);
    manifest.write(&args.out)?;

    let status = match task {
        Task::Regression => fit_regression(args, &data, family, &source, &spec, seed, &exec)?,
        Task::Classification => fit_classification(args, &data, family, &source, &spec, seed, &exec)?,
    };
    manifest.finish(&args.out, if status.is_ok() { "ok" } else { "partial_failure" })?;
    status
}

fn fit_regression(
    args: &FitArgs,
    data: &Dataset,
    family: PenaltyFamily,
    source: &ParamSource,
    spec: &FitSpec,
    seed: u64,
    exec: &RayonExecutor,
) -> Result<Result<()>> {
    let report = regression_holdout(data, family, source, spec, args.test_fraction, derive_seed(seed, 0), exec)?;
    let results = args.out.join(RESULTS_DIR);
    if let Some(tuning) = &report.tuning {
        write_cv_table(&results.join("cv_table.csv"), family, tuning)?;
    }
    let m = &report.metrics;
    write_json(
        &results.join("metrics.json"),
        &RegressionMetricsJson {
            task: "regression",
            method: family.name(),
            param_names: family.param_names(),
            params: &report.params,
            train_rows: report.train_rows,
            test_rows: report.test_rows,
            mse: m.mse,
            mae: m.mae,
            rmse: m.rmse,
            r2: m.r2,
            bias: m.bias,
            epochs_run: report.fitted.history.epochs_run(),
            cv_score: report.tuning.as_ref().map(|t| t.best_score),
        },
    )?;
    write_history(&results.join("history.csv"), &report.fitted.history)?;
    write_json(
        &args.out.join(MODELS_DIR).join("model.json"),
        &FittedModelJson::new(&report.fitted, data.feature_names(), None),
    )?;
    println!(
        "{} [{}]: mse {} mae {} rmse {} r2 {} bias {}",
        family.name(),
        fmt_params(&report.params),
        fmt_f64(m.mse),
        fmt_f64(m.mae),
        fmt_f64(m.rmse),
        m.r2.map_or("undefined".into(), fmt_f64),
        fmt_f64(m.bias)
    );
    Ok(Ok(()))
}

fn fit_classification(
    args: &FitArgs,
    data: &Dataset,
    family: PenaltyFamily,
    source: &ParamSource,
    spec: &FitSpec,
    seed: u64,
    exec: &RayonExecutor,
) -> Result<Result<()>> {
    let protocol = ClassificationProtocol {
        folds: args.folds,
        repeats: args.repeats,
        seed: derive_seed(seed, 0),
        screen_on_full_data: args.screen_full_data,
    };
    let report = classification_repeated_cv(data, family, source, spec, &protocol, exec)?;
    let results = args.out.join(RESULTS_DIR);
    let rows: Vec<Vec<String>> = report
        .folds
        .iter()
        .map(|f| {
            let (score, error) = match &f.score {
                Ok(s) => (fmt_f64(*s), String::new()),
                Err(e) => (String::new(), e.clone()),
            };
            vec![f.repeat.to_string(), f.fold.to_string(), fmt_params(&f.params), score, error]
        })
        .collect();
    write_table(&results.join("folds.csv"), &["repeat", "fold", "params", "balanced_accuracy", "error"], &rows)?;

    let final_params = match source {
        ParamSource::Fixed(p) => p.clone(),
        ParamSource::Tuned(plan) => {
            let tuned: GridResult = grid_search(data, family, plan, spec, exec)?;
            tuned.best
        }
    };
    let fitted = fit_network(data, spec, family, &final_params)?;
    let class_names = match data.target() {
        geomreg_core::data::Target::Classes { names, .. } => Some(names.as_slice()),
        geomreg_core::data::Target::Values(_) => None,
    };
    write_json(
        &args.out.join(MODELS_DIR).join("model.json"),
        &FittedModelJson::new(&fitted, data.feature_names(), class_names),
    )?;
    write_history(&results.join("history.csv"), &fitted.history)?;
    let failed = report.failures();
    write_json(
        &results.join("metrics.json"),
        &ClassificationMetricsJson {
            task: "classification",
            method: family.name(),
            param_names: family.param_names(),
            folds: args.folds,
            repeats: args.repeats,
            mean_balanced_accuracy: report.mean,
            std_balanced_accuracy: report.std,
            completed_folds: report.folds.len() - failed,
            failed_folds: failed,
            final_params: &final_params,
        },
    )?;
    println!(
        "{}: balanced accuracy {:.4} ± {:.4} over {} folds",
        family.name(),
        report.mean,
        report.std,
        report.folds.len() - failed
    );
    if failed > 0 {
        return Ok(Err(CliError::PartialFailure {
            failed,
            total: report.folds.len(),
        }));
    }
    Ok(Ok(()))
}
