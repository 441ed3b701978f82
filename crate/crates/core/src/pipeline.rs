//! End-to-end fitting: screen → standardize → Gram → initialize → train, and
//! the regression hold-out and classification repeated-CV protocols built on it.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::{anova_f_select, split, standardize, Dataset, StandardizationStats, Target, Task};
use crate::gram::{build_gram, DEFAULT_DELTA};
use crate::mlp::{init_model, train_on, Head, Targets, MlpModel, NetworkPenalty, Predictions, TrainConfig, TrainHistory};
use crate::penalty::{PenaltyConfig, PenaltyFamily};
use crate::rng::derive_seed;
use crate::simulate::{balanced_accuracy, compute_metrics, Metrics};
use crate::tune::{grid_search, kfold_split, CvPlan, GridResult};
use crate::{Error, Executor, Result, Sequential};

/// How a network is built and trained from a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    /// Hidden layer widths, e.g. `[64, 32]`.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Gram stabilization for Covridge/Sparridge.
    pub delta: f64,
    /// Keep only the top-`m` ANOVA-F features of the training rows (classification).
    pub screen_top: Option<usize>,
    pub init_seed: u64,
}

impl FitSpec {
    pub fn new(hidden: Vec<usize>, train: TrainConfig) -> Self {
        let init_seed = train.seed;
        FitSpec {
            hidden,
            train,
            delta: DEFAULT_DELTA,
            screen_top: None,
            init_seed,
        }
    }
}

/// A trained network together with the preprocessing learned on its training rows.
#[derive(Debug, Clone)]
pub struct FittedNetwork {
    /// Columns of the raw feature matrix fed to the network, when screening ran.
    pub selected: Option<Vec<usize>>,
    pub stats: StandardizationStats,
    pub model: MlpModel,
    pub history: TrainHistory,
    pub penalty: PenaltyConfig,
}

impl FittedNetwork {
    fn prepare(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.selected {
            Some(cols) => {
                if let Some(&bad) = cols.iter().find(|&&c| c >= features.ncols()) {
                    return Err(Error::DimensionMismatch {
                        context: "selected feature index vs input width",
                        expected: features.ncols(),
                        found: bad + 1,
                    });
                }
                self.stats.apply(&crate::linalg::select_columns(features, cols))
            }
            None => self.stats.apply(features),
        }
    }

    /// Predictions for raw (unstandardized, unscreened) feature rows.
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Predictions> {
        crate::mlp::predict(&self.model, &self.prepare(features)?)
    }
}

/// Fits `family(params)` on `train_data` following `spec`. Every data-dependent
/// step (screening, standardization, Gram) sees only `train_data`.
pub fn fit_network(train_data: &Dataset, spec: &FitSpec, family: PenaltyFamily, params: &[f64]) -> Result<FittedNetwork> {
    let selected = match (spec.screen_top, train_data.target()) {
        (Some(m), Target::Classes { labels, names }) => Some(anova_f_select(train_data.features(), labels, names.len(), m)?),
        (Some(_), Target::Values(_)) => return Err(Error::invalid("screen_top", "feature screening needs class labels")),
        (None, _) => None,
    };
    let raw = match &selected {
        Some(cols) => crate::linalg::select_columns(train_data.features(), cols),
        None => train_data.features().clone(),
    };
    let (stats, x) = standardize(&raw)?;
    let gram = if family.needs_gram() {
        Some(Arc::new(build_gram(&x, spec.delta)?))
    } else {
        None
    };
    let penalty = family.instantiate(params, gram)?;
    let head = match train_data.target() {
        Target::Values(_) => Head::Linear,
        Target::Classes { names, .. } => Head::Softmax { classes: names.len() },
    };
    let mut sizes = Vec::with_capacity(spec.hidden.len() + 2);
    sizes.push(x.ncols());
    sizes.extend_from_slice(&spec.hidden);
    sizes.push(head.output_dim());
    let model = init_model(&sizes, head, spec.init_seed)?;
    let (model, history) = train_on(
        &model,
        &x,
        Targets::from_target(train_data.target()),
        &spec.train,
        &NetworkPenalty::first_layer(penalty.clone()),
    )?;
    Ok(FittedNetwork {
        selected,
        stats,
        model,
        history,
        penalty,
    })
}

/// Where the penalty hyperparameters come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSource {
    Fixed(Vec<f64>),
    Tuned(CvPlan),
}

#[derive(Debug, Clone)]
pub struct RegressionReport {
    pub metrics: Metrics,
    pub params: Vec<f64>,
    pub tuning: Option<GridResult>,
    pub fitted: FittedNetwork,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Hold-out regression protocol: split, optionally tune on the training rows,
/// refit on all training rows and score the test rows.
pub fn regression_holdout<E: Executor>(
    data: &Dataset,
    family: PenaltyFamily,
    params: &ParamSource,
    spec: &FitSpec,
    test_fraction: f64,
    seed: u64,
    exec: &E,
) -> Result<RegressionReport> {
    if data.task() != Task::Regression {
        return Err(Error::invalid("dataset", "regression protocol needs a numeric target"));
    }
    let plan = split(data.n_rows(), test_fraction, seed)?;
    let train_data = data.select_rows(&plan.train_idx);
    let test_data = data.select_rows(&plan.test_idx);
    let (chosen, tuning) = resolve_params(&train_data, family, params, spec, exec)?;
    let fitted = fit_network(&train_data, spec, family, &chosen)?;
    let pred = match fitted.predict(test_data.features())? {
        Predictions::Values(v) => v,
        Predictions::Classes(_) => unreachable!("linear head"),
    };
    let metrics = compute_metrics(test_data.values().expect("regression target"), &pred)?;
    Ok(RegressionReport {
        metrics,
        params: chosen,
        tuning,
        fitted,
        train_rows: plan.train_idx.len(),
        test_rows: plan.test_idx.len(),
    })
}

fn resolve_params<E: Executor>(
    train_data: &Dataset,
    family: PenaltyFamily,
    params: &ParamSource,
    spec: &FitSpec,
    exec: &E,
) -> Result<(Vec<f64>, Option<GridResult>)> {
    match params {
        ParamSource::Fixed(p) => Ok((p.clone(), None)),
        ParamSource::Tuned(plan) => {
            let result = grid_search(train_data, family, plan, spec, exec)?;
            Ok((result.best.clone(), Some(result)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub repeat: usize,
    pub fold: usize,
    pub params: Vec<f64>,
    /// Balanced accuracy on the held-out fold, or the failure message.
    pub score: core::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub folds: Vec<FoldOutcome>,
    /// Mean balanced accuracy over all successful outer folds.
    pub mean: f64,
    /// Sample standard deviation over the same folds.
    pub std: f64,
}

impl ClassificationReport {
    pub fn failures(&self) -> usize {
        self.folds.iter().filter(|f| f.score.is_err()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationProtocol {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Screen once on all rows before cross-validation. This leaks the
    /// held-out labels into feature selection and exists only for comparison.
    pub screen_on_full_data: bool,
}

/// Repeated k-fold protocol for classification: for every outer fold the
/// training portion is screened, tuned (inner CV when `params` is
/// [`ParamSource::Tuned`]) and fitted, then scored by balanced accuracy.
pub fn classification_repeated_cv<E: Executor>(
    data: &Dataset,
    family: PenaltyFamily,
    params: &ParamSource,
    spec: &FitSpec,
    protocol: &ClassificationProtocol,
    exec: &E,
) -> Result<ClassificationReport> {
    let (labels, n_classes) = match data.target() {
        Target::Classes { labels, names } => (labels.clone(), names.len()),
        Target::Values(_) => return Err(Error::invalid("dataset", "classification protocol needs class labels")),
    };
    if protocol.repeats == 0 {
        return Err(Error::invalid("repeats", "must be at least 1"));
    }
    let (data, spec) = if protocol.screen_on_full_data {
        match spec.screen_top {
            Some(m) => {
                let cols = anova_f_select(data.features(), &labels, n_classes, m)?;
                let mut s = spec.clone();
                s.screen_top = None;
                (data.select_features(&cols), s)
            }
            None => (data.clone(), spec.clone()),
        }
    } else {
        (data.clone(), spec.clone())
    };
    let mut splits = Vec::with_capacity(protocol.repeats);
    for repeat in 0..protocol.repeats {
        splits.push(kfold_split(data.n_rows(), protocol.folds, protocol.seed.wrapping_add(repeat as u64))?);
    }
    let folds = exec.map(protocol.repeats * protocol.folds, |task| {
        let (repeat, fold) = (task / protocol.folds, task % protocol.folds);
        let val_idx = &splits[repeat][fold];
        let train_idx = complement(data.n_rows(), val_idx);
        let train_data = data.select_rows(&train_idx);
        let val_data = data.select_rows(val_idx);
        let mut fold_spec = spec.clone();
        fold_spec.train.seed = derive_seed(spec.train.seed, task as u64);
        let outcome = (|| -> Result<(Vec<f64>, f64)> {
            let (chosen, _) = resolve_params(&train_data, family, params, &fold_spec, &Sequential)?;
            let fitted = fit_network(&train_data, &fold_spec, family, &chosen)?;
            let pred = match fitted.predict(val_data.features())? {
                Predictions::Classes(c) => c,
                Predictions::Values(_) => unreachable!("softmax head"),
            };
            Ok((chosen, balanced_accuracy(val_data.labels().expect("labels"), &pred, n_classes)?))
        })();
        match outcome {
            Ok((p, s)) => FoldOutcome { repeat, fold, params: p, score: Ok(s) },
            Err(e) => FoldOutcome { repeat, fold, params: Vec::new(), score: Err(e.to_string()) },
        }
    });
    let scores: Vec<f64> = folds.iter().filter_map(|f| f.score.as_ref().ok().copied()).collect();
    let (mean, std) = mean_std(&scores);
    Ok(ClassificationReport { folds, mean, std })
}

/// Indices of `0..n` not in the sorted-or-unsorted set `held_out`.
pub fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = alloc::vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Mean and sample standard deviation (`NaN` for an empty slice, std 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
