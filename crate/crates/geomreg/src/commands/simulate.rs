use std::path::PathBuf;

use geomreg_core::simulate::{run_monte_carlo, McResult};

use crate::cli::SimulateArgs;
use crate::config::{env_seed, load_config, parse_config, Cell, SimulateConfig};
use crate::error::{CliError, Result};
use crate::exec::RayonExecutor;
use crate::io::{fmt_f64, fmt_params, write_table};
use crate::manifest::{RunManifest, RESULTS_DIR};

use super::{prepare_run_dir, rel};

pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutcome {
    pub run_dir: PathBuf,
    pub cells: usize,
    pub records: usize,
    pub failures: usize,
    /// Result files relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn replication_file(label: &str) -> String {
    format!("{label}_replications.csv")
}

fn resolve(args: &SimulateArgs) -> Result<SimulateConfig> {
    match (&args.config, &args.manifest) {
        (_, Some(manifest)) => {
            let m = RunManifest::read(manifest)?;
            if m.command != "simulate" {
                return Err(CliError::config(manifest.display().to_string(), format!("manifest is for `{}`, not simulate", m.command)));
            }
            let cfg: SimulateConfig = serde_json::from_value(m.config)
                .map_err(|e| CliError::config(manifest.display().to_string(), e.to_string()))?;
            if args.overrides.is_empty() {
                cfg.validate().map_err(|e| CliError::config(manifest.display().to_string(), e))?;
                Ok(cfg)
            } else {
                let text = toml::to_string(&cfg).map_err(|e| CliError::config(manifest.display().to_string(), e.to_string()))?;
                parse_config(&text, &manifest.display().to_string(), &args.overrides, None)
            }
        }
        (Some(path), None) => load_config(path, &args.overrides, env_seed()?),
        (None, None) => Err(CliError::Usage("need a config file or --manifest".into())),
    }
}

/// Runs every scenario cell and writes one replication table per cell plus
/// an aggregate table. A manifest replay ignores `GEOMREG_SEED`.
pub fn cmd_simulate(args: &SimulateArgs, threads: usize) -> Result<SimulateOutcome> {
    let cfg = resolve(args)?;
    let cells = cfg.cells()?;
    let exec = RayonExecutor::new(threads)?;
    let mut outputs: Vec<String> = cells.iter().map(|c| rel(RESULTS_DIR, &replication_file(&c.label))).collect();
    outputs.push(rel(RESULTS_DIR, AGGREGATE_FILE));

    prepare_run_dir(&args.out)?;
    let config_json = serde_json::to_value(&cfg).map_err(|e| CliError::json("resolved config", e))?;
    let mut manifest = RunManifest::new("simulate", cfg.seed, exec.threads(), config_json, outputs.clone());
    manifest.notes.push("bias = mean(prediction - target)".into());
    manifest.write(&args.out)?;

    let results_dir = args.out.join(RESULTS_DIR);
    let mut results = Vec::with_capacity(cells.len());
    let mut failures = 0;
    let mut records = 0;
    for cell in &cells {
        let result = run_monte_carlo(&cell.mc, &exec)?;
        write_replications(&results_dir.join(replication_file(&cell.label)), &result)?;
        for f in result.failures() {
            eprintln!(
                "{}: {} replication {} failed: {}",
                cell.label,
                f.method,
                f.replication,
                f.outcome.as_ref().err().map_or("", String::as_str)
            );
        }
        failures += result.failures().len();
        records += result.records.len();
        print_summary(cell, &result);
        results.push(result);
    }
    write_aggregate(&results_dir.join(AGGREGATE_FILE), &cells, &results)?;

    let status = if failures == 0 { "ok" } else { "partial_failure" };
    manifest.finish(&args.out, status)?;
    if failures > 0 {
        return Err(CliError::PartialFailure { failed: failures, total: records });
    }
    Ok(SimulateOutcome {
        run_dir: args.out.clone(),
        cells: cells.len(),
        records,
        failures,
        outputs,
    })
}

fn print_summary(cell: &Cell, result: &McResult) {
    eprintln!("{}:", cell.label);
    for s in result.aggregate() {
        eprintln!(
            "  {:<12} mse {:>10.4}  mae {:>8.4}  bias {:>8.4}  ({}/{})",
            s.method, s.mse, s.mae, s.bias, s.completed, result.replications
        );
    }
}

fn write_replications(path: &std::path::Path, result: &McResult) -> Result<()> {
    let rows: Vec<Vec<String>> = result
        .records
        .iter()
        .map(|r| {
            let (metrics, error) = match &r.outcome {
                Ok(m) => ([m.mse, m.mae, m.bias, m.rmse].map(fmt_f64), String::new()),
                Err(e) => (Default::default(), e.clone()),
            };
            let [mse, mae, bias, rmse] = metrics;
            vec![
                r.method.clone(),
                r.replication.to_string(),
                mse,
                mae,
                bias,
                rmse,
                fmt_params(&r.params),
                if r.weight_norm.is_finite() { fmt_f64(r.weight_norm) } else { String::new() },
                error,
            ]
        })
        .collect();
    write_table(
        path,
        &["method", "replication", "mse", "mae", "bias", "rmse", "params", "weight_norm", "error"],
        &rows,
    )
}

/// Rows are (scenario, form, method, metric); one column per (ρ, σ) pair.
fn write_aggregate(path: &std::path::Path, cells: &[Cell], results: &[McResult]) -> Result<()> {
    let mut columns: Vec<(f64, f64)> = Vec::new();
    let mut groups: Vec<(String, &'static str)> = Vec::new();
    for c in cells {
        if !columns.contains(&(c.rho, c.sigma)) {
            columns.push((c.rho, c.sigma));
        }
        let key = (c.scenario.clone(), c.form.name());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut header = vec!["scenario".to_string(), "form".into(), "method".into(), "metric".into()];
    header.extend(columns.iter().map(|(r, s)| format!("rho={r} sigma={s}")));
    let summaries: Vec<_> = results.iter().map(McResult::aggregate).collect();
    let mut rows = Vec::new();
    for (scenario, form) in &groups {
        let methods = cells
            .iter()
            .zip(results)
            .find(|(c, _)| &c.scenario == scenario && c.form.name() == *form)
            .map(|(_, r)| r.methods.clone())
            .unwrap_or_default();
        for method in &methods {
            for metric in ["mse", "mae", "bias"] {
                let mut row = vec![scenario.clone(), form.to_string(), method.clone(), metric.to_string()];
                for &(rho, sigma) in &columns {
                    let value = cells
                        .iter()
                        .zip(&summaries)
                        .find(|(c, _)| &c.scenario == scenario && c.form.name() == *form && c.rho == rho && c.sigma == sigma)
                        .and_then(|(_, s)| s.iter().find(|m| &m.method == method))
                        .map(|m| match metric {
                            "mse" => m.mse,
                            "mae" => m.mae,
                            _ => m.bias,
                        });
                    row.push(value.map_or(String::new(), fmt_f64));
                }
                rows.push(row);
            }
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(path, &header, &rows)
}
