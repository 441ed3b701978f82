//! k-fold cross-validated grid search over penalty hyperparameters.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::data::{Dataset, Target};
use crate::mlp::Predictions;
use crate::penalty::PenaltyFamily;
use crate::pipeline::{complement, fit_network, FitSpec};
use crate::rng::stream_rng;
use crate::simulate::balanced_accuracy;
use crate::{Error, Executor, Result};

/// Candidate values used for every tuning scalar in the simulation study.
pub const DEFAULT_GRID: [f64; 5] = [0.001, 0.01, 0.1, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Minimize mean validation MSE.
    MeanMse,
    /// Maximize mean validation balanced accuracy.
    MeanBalancedAccuracy,
}

impl Criterion {
    /// Score recorded for a fold whose training failed.
    pub fn failure_score(self) -> f64 {
        match self {
            Criterion::MeanMse => f64::INFINITY,
            Criterion::MeanBalancedAccuracy => 0.0,
        }
    }

    /// `Less` when `a` is the better score.
    fn compare(self, a: f64, b: f64) -> Ordering {
        match self {
            Criterion::MeanMse => a.total_cmp(&b),
            Criterion::MeanBalancedAccuracy => b.total_cmp(&a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Every combination of the per-parameter candidate lists.
    Cartesian,
    /// One pass over the parameters in order: each is tuned over its own list
    /// while the others stay at their current value (initially the first candidate).
    CoordinateWise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub folds: usize,
    /// One candidate list per penalty parameter.
    pub grid: Vec<Vec<f64>>,
    pub repeats: usize,
    pub seed: u64,
    pub criterion: Criterion,
    pub mode: GridMode,
}

impl CvPlan {
    /// Cartesian grid with the same candidates for each of the family's parameters.
    pub fn uniform(family: PenaltyFamily, candidates: &[f64], folds: usize, criterion: Criterion, seed: u64) -> Self {
        CvPlan {
            folds,
            grid: (0..family.arity()).map(|_| candidates.to_vec()).collect(),
            repeats: 1,
            seed,
            criterion,
            mode: GridMode::Cartesian,
        }
    }

    pub fn validate(&self, family: PenaltyFamily, n_train: usize) -> Result<()> {
        if self.grid.len() != family.arity() {
            return Err(Error::DimensionMismatch {
                context: "grid parameter count vs penalty arity",
                expected: family.arity(),
                found: self.grid.len(),
            });
        }
        if self.grid.iter().any(|g| g.is_empty()) {
            return Err(Error::invalid("grid", "every parameter needs at least one candidate"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats", "must be at least 1"));
        }
        if self.folds < 2 || self.folds > n_train {
            return Err(Error::invalid("folds", "need 2 <= folds <= training rows"));
        }
        Ok(())
    }
}

/// Seeded partition of `0..n` into `k` validation sets whose sizes differ by at
/// most one; the first `n mod k` folds get the extra row. Each set is sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid("k", "need at least 2 folds"));
    }
    if k > n {
        return Err(Error::invalid("k", "more folds than rows"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

/// One fold evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CvRecord {
    pub params: Vec<f64>,
    pub repeat: usize,
    pub fold: usize,
    pub score: f64,
    /// Why training failed, when it did (the score is then the criterion's failure value).
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: Vec<f64>,
    pub best_score: f64,
    /// Mean score per evaluated grid point, in evaluation order.
    pub scores: Vec<(Vec<f64>, f64)>,
    pub table: Vec<CvRecord>,
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn cartesian(grid: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut points: Vec<Vec<f64>> = alloc::vec![Vec::new()];
    for values in grid {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    points
}

fn fold_score(train_data: &Dataset, val: &Dataset, spec: &FitSpec, family: PenaltyFamily, params: &[f64], criterion: Criterion) -> Result<f64> {
    let fitted = fit_network(train_data, spec, family, params)?;
    let pred = fitted.predict(val.features())?;
    match (criterion, pred, val.target()) {
        (Criterion::MeanMse, Predictions::Values(p), Target::Values(y)) => {
            Ok(p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
        }
        (Criterion::MeanBalancedAccuracy, Predictions::Classes(p), Target::Classes { labels, names }) => {
            balanced_accuracy(labels, &p, names.len())
        }
        _ => Err(Error::invalid("criterion", "criterion does not match the task")),
    }
}

struct Folds {
    /// `(repeat, fold, train rows, validation rows)`
    splits: Vec<(usize, usize, Dataset, Dataset)>,
}

impl Folds {
    fn new(data: &Dataset, plan: &CvPlan) -> Result<Folds> {
        let n = data.n_rows();
        let mut splits = Vec::with_capacity(plan.folds * plan.repeats);
        for repeat in 0..plan.repeats {
            for (fold, val_idx) in kfold_split(n, plan.folds, plan.seed.wrapping_add(repeat as u64))?.into_iter().enumerate() {
                let train_idx = complement(n, &val_idx);
                splits.push((repeat, fold, data.select_rows(&train_idx), data.select_rows(&val_idx)));
            }
        }
        Ok(Folds { splits })
    }

    fn evaluate<E: Executor>(
        &self,
        points: &[Vec<f64>],
        family: PenaltyFamily,
        plan: &CvPlan,
        spec: &FitSpec,
        exec: &E,
    ) -> Vec<CvRecord> {
        let per_point = self.splits.len();
        exec.map(points.len() * per_point, |task| {
            let params = &points[task / per_point];
            let (repeat, fold, train_data, val) = &self.splits[task % per_point];
            let (score, error) = match fold_score(train_data, val, spec, family, params, plan.criterion) {
                Ok(s) if s.is_finite() => (s, None),
                Ok(s) => (plan.criterion.failure_score(), Some(alloc::format!("non-finite score {s}"))),
                Err(e) => (plan.criterion.failure_score(), Some(e.to_string())),
            };
            CvRecord {
                params: params.clone(),
                repeat: *repeat,
                fold: *fold,
                score,
                error,
            }
        })
    }
}

fn mean_scores(points: &[Vec<f64>], records: &[CvRecord], per_point: usize) -> Vec<(Vec<f64>, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let chunk = &records[i * per_point..(i + 1) * per_point];
            (p.clone(), chunk.iter().map(|r| r.score).sum::<f64>() / per_point as f64)
        })
        .collect()
}

fn select_best(scores: &[(Vec<f64>, f64)], criterion: Criterion) -> (Vec<f64>, f64) {
    let best = scores
        .iter()
        .min_by(|a, b| criterion.compare(a.1, b.1).then_with(|| lexicographic(&a.0, &b.0)))
        .expect("non-empty grid");
    (best.0.clone(), best.1)
}

/// Cross-validated grid search. Each fold refits the full preprocessing
/// (screening, standardization, Gram) on that fold's training rows only.
/// The score of a grid point is the mean over all folds and repeats; ties go
/// to the lexicographically smallest parameter tuple.
pub fn grid_search<E: Executor>(train_data: &Dataset, family: PenaltyFamily, plan: &CvPlan, spec: &FitSpec, exec: &E) -> Result<GridResult> {
    plan.validate(family, train_data.n_rows())?;
    let folds = Folds::new(train_data, plan)?;
    let per_point = folds.splits.len();
    match plan.mode {
        GridMode::Cartesian => {
            let points = cartesian(&plan.grid);
            let table = folds.evaluate(&points, family, plan, spec, exec);
            let scores = mean_scores(&points, &table, per_point);
            let (best, best_score) = select_best(&scores, plan.criterion);
            Ok(GridResult {
                best,
                best_score,
                scores,
                table,
            })
        }
        GridMode::CoordinateWise => {
            let mut current: Vec<f64> = plan.grid.iter().map(|g| g[0]).collect();
            let mut table = Vec::new();
            let mut scores: Vec<(Vec<f64>, f64)> = Vec::new();
            for (j, values) in plan.grid.iter().enumerate() {
                let points: Vec<Vec<f64>> = values
                    .iter()
                    .map(|&v| {
                        let mut p = current.clone();
                        p[j] = v;
                        p
                    })
                    .filter(|p| !scores.iter().any(|(q, _)| q == p))
                    .collect();
                let records = folds.evaluate(&points, family, plan, spec, exec);
                scores.extend(mean_scores(&points, &records, per_point));
                table.extend(records);
                let candidates: Vec<(Vec<f64>, f64)> = scores
                    .iter()
                    .filter(|(p, _)| p.iter().enumerate().all(|(i, v)| i == j || *v == current[i]))
                    .cloned()
                    .collect();
                current = select_best(&candidates, plan.criterion).0;
            }
            let (best, best_score) = select_best(&scores.iter().filter(|(p, _)| *p == current).cloned().collect::<Vec<_>>(), plan.criterion);
            Ok(GridResult {
                best,
                best_score,
                scores,
                table,
            })
        }
    }
}
