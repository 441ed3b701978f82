//! Subcommand implementations. Each writes a manifest before any result file.

mod contours;
mod fit;
mod simulate;
mod tune;
mod validate;

pub use contours::cmd_contours;
pub use fit::cmd_fit;
pub use simulate::{cmd_simulate, SimulateOutcome};
pub use tune::cmd_tune;
pub use validate::{cmd_validate, gaussian_design, random_problem, GAMMA0_TOLERANCE};

use std::fs;
use std::path::Path;

use geomreg_core::data::Task;
use geomreg_core::mlp::{EarlyStopping, Optimizer, TrainConfig, TrainHistory};
use geomreg_core::penalty::PenaltyFamily;
use geomreg_core::pipeline::FitSpec;
use geomreg_core::rng::derive_seed;
use geomreg_core::tune::{Criterion, CvPlan, GridMode};

use crate::cli::{GridArgs, ModeArg, OptimizerArg, TaskArg, TrainArgs};
use crate::config::env_seed;
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, write_table};
use crate::manifest::{MODELS_DIR, RESULTS_DIR};

const DEFAULT_SEED: u64 = 1;

/// Explicit flag, then the environment, then the default.
pub(crate) fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => Ok(env_seed()?.unwrap_or(DEFAULT_SEED)),
    }
}

pub(crate) fn parse_family(name: &str) -> Result<PenaltyFamily> {
    PenaltyFamily::parse(name).ok_or_else(|| {
        let known: Vec<&str> = PenaltyFamily::ALL.iter().map(|f| f.name()).collect();
        CliError::Usage(format!("unknown method `{name}` (expected one of {})", known.join(", ")))
    })
}

pub(crate) fn check_arity(family: PenaltyFamily, params: &[f64]) -> Result<()> {
    if params.len() != family.arity() {
        return Err(CliError::Usage(format!(
            "{} takes {} parameter(s) ({}), got {}",
            family.name(),
            family.arity(),
            family.param_names().join(","),
            params.len()
        )));
    }
    Ok(())
}

pub(crate) fn task_of(arg: TaskArg) -> Task {
    match arg {
        TaskArg::Regression => Task::Regression,
        TaskArg::Classification => Task::Classification,
    }
}

pub(crate) fn criterion_for(task: Task) -> Criterion {
    match task {
        Task::Regression => Criterion::MeanMse,
        Task::Classification => Criterion::MeanBalancedAccuracy,
    }
}

/// Seed streams: 0 split or outer folds, 1 training, 2 initialization, 3 tuning folds.
pub(crate) fn fit_spec(args: &TrainArgs, seed: u64) -> Result<FitSpec> {
    if args.hidden.is_empty() || args.hidden.contains(&0) {
        return Err(CliError::Usage("--hidden needs positive layer widths".into()));
    }
    let mut train = TrainConfig::new(args.epochs, args.batch_size, derive_seed(seed, 1));
    train.optimizer = match args.optimizer {
        OptimizerArg::Adam => Optimizer::adam(args.learning_rate),
        OptimizerArg::Sgd => Optimizer::Sgd {
            learning_rate: args.learning_rate,
        },
    };
    train.early_stopping = args.patience.map(|patience| EarlyStopping {
        validation_fraction: args.validation_fraction,
        patience,
    });
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut spec = FitSpec::new(args.hidden.clone(), train);
    spec.delta = args.delta;
    spec.screen_top = args.top;
    spec.init_seed = derive_seed(seed, 2);
    Ok(spec)
}

pub(crate) fn cv_plan(args: &GridArgs, family: PenaltyFamily, criterion: Criterion, seed: u64) -> CvPlan {
    let mut plan = CvPlan::uniform(family, &args.grid, args.tune_folds, criterion, derive_seed(seed, 3));
    plan.repeats = args.tune_repeats;
    plan.mode = match args.mode {
        ModeArg::Cartesian => GridMode::Cartesian,
        ModeArg::CoordinateWise => GridMode::CoordinateWise,
    };
    plan
}

pub(crate) fn prepare_run_dir(out: &Path) -> Result<()> {
    for sub in [RESULTS_DIR, MODELS_DIR] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    Ok(())
}

pub(crate) fn rel(sub: &str, file: &str) -> String {
    format!("{sub}/{file}")
}

pub(crate) fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .train_loss
        .iter()
        .enumerate()
        .map(|(e, &loss)| {
            let val = history.val_loss.as_ref().map_or(String::new(), |v| fmt_f64(v[e]));
            vec![(e + 1).to_string(), fmt_f64(loss), val]
        })
        .collect();
    write_table(path, &["epoch", "train_loss", "val_loss"], &rows)
}
