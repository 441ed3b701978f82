use std::path::Path;

use geomreg_core::penalty::PenaltyFamily;
use geomreg_core::tune::{grid_search, Criterion, GridResult};
use serde::Serialize;

use crate::cli::TuneArgs;
use crate::error::Result;
use crate::exec::RayonExecutor;
use crate::formats::write_json;
use crate::io::{fmt_f64, fmt_params, load_csv, write_table};
use crate::manifest::{RunManifest, RESULTS_DIR};

use super::{criterion_for, cv_plan, fit_spec, parse_family, prepare_run_dir, rel, resolve_seed, task_of};

#[derive(Serialize)]
struct ScoreJson<'a> {
    params: &'a [f64],
    score: f64,
}

#[derive(Serialize)]
struct SelectionJson<'a> {
    method: &'static str,
    param_names: &'a [&'static str],
    criterion: &'static str,
    folds: usize,
    repeats: usize,
    best: &'a [f64],
    best_score: f64,
    scores: Vec<ScoreJson<'a>>,
}

/// One row per (grid point, repeat, fold); failed folds carry their message.
pub(crate) fn write_cv_table(path: &Path, family: PenaltyFamily, result: &GridResult) -> Result<()> {
    let mut header: Vec<&str> = family.param_names().to_vec();
    header.extend(["repeat", "fold", "score", "error"]);
    let rows: Vec<Vec<String>> = result
        .table
        .iter()
        .map(|r| {
            let mut row: Vec<String> = r.params.iter().map(|&x| fmt_f64(x)).collect();
            row.extend([
                r.repeat.to_string(),
                r.fold.to_string(),
                fmt_f64(r.score),
                r.error.clone().unwrap_or_default(),
            ]);
            row
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn cmd_tune(args: &TuneArgs, threads: usize) -> Result<()> {
    let seed = resolve_seed(args.train.seed)?;
    let family = parse_family(&args.data.method)?;
    let task = task_of(args.data.task);
    let spec = fit_spec(&args.train, seed)?;
    let exec = RayonExecutor::new(threads)?;
    let data = load_csv(&args.data.data, &args.data.target, task)?;
    let criterion = criterion_for(task);
    let plan = cv_plan(&args.grid, family, criterion, seed);

    prepare_run_dir(&args.out)?;
    let outputs = vec![rel(RESULTS_DIR, "cv_table.csv"), rel(RESULTS_DIR, "selection.json")];
    let config = serde_json::json!({ "seed": seed, "args": args });
    let mut manifest = RunManifest::new("tune", seed, exec.threads(), config, outputs);
    manifest.write(&args.out)?;

    let result = grid_search(&data, family, &plan, &spec, &exec)?;
    let results = args.out.join(RESULTS_DIR);
    write_cv_table(&results.join("cv_table.csv"), family, &result)?;
    write_json(
        &results.join("selection.json"),
        &SelectionJson {
            method: family.name(),
            param_names: family.param_names(),
            criterion: match criterion {
                Criterion::MeanMse => "mean_mse",
                Criterion::MeanBalancedAccuracy => "mean_balanced_accuracy",
            },
            folds: plan.folds,
            repeats: plan.repeats,
            best: &result.best,
            best_score: result.best_score,
            scores: result.scores.iter().map(|(p, s)| ScoreJson { params: p, score: *s }).collect(),
        },
    )?;
    println!("{} best [{}] score {}", family.name(), fmt_params(&result.best), fmt_f64(result.best_score));
    manifest.finish(&args.out, "ok")
}
