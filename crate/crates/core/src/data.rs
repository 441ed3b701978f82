//! Datasets, train-only standardization, seeded splits and ANOVA-F screening.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::linalg::{select_columns, select_rows};
use crate::rng::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(Vec<f64>),
    /// Labels in `0..names.len()`; `names[c]` is the original label text.
    Classes { labels: Vec<usize>, names: Vec<String> },
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Values(v) => v.len(),
            Target::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Target::Values(_) => Task::Regression,
            Target::Classes { .. } => Task::Classification,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self {
            Target::Values(_) => None,
            Target::Classes { names, .. } => Some(names.len()),
        }
    }

    fn select(&self, rows: &[usize]) -> Target {
        match self {
            Target::Values(v) => Target::Values(rows.iter().map(|&i| v[i]).collect()),
            Target::Classes { labels, names } => Target::Classes {
                labels: rows.iter().map(|&i| labels[i]).collect(),
                names: names.clone(),
            },
        }
    }
}

/// Feature matrix plus regression values or class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    target: Target,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, target: Target) -> Result<Self> {
        let (n, p) = features.shape();
        if n == 0 || p == 0 {
            return Err(Error::invalid("features", "need at least one row and one column"));
        }
        if target.len() != n {
            return Err(Error::DimensionMismatch {
                context: "dataset target length",
                expected: n,
                found: target.len(),
            });
        }
        for j in 0..p {
            for i in 0..n {
                if !features[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        match &target {
            Target::Values(v) => {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { row: i, col: p });
                }
            }
            Target::Classes { labels, names } => {
                let m = names.len();
                let mut seen = vec![false; m];
                for &l in labels {
                    if l >= m {
                        return Err(Error::invalid("labels", "label outside 0..n_classes"));
                    }
                    seen[l] = true;
                }
                if seen.iter().any(|s| !s) {
                    return Err(Error::invalid("labels", "class labels are not contiguous"));
                }
            }
        }
        Ok(Dataset {
            features,
            target,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                context: "feature names",
                expected: self.n_features(),
                found: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn task(&self) -> Task {
        self.target.task()
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.target {
            Target::Values(v) => Some(v),
            Target::Classes { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.target {
            Target::Values(_) => None,
            Target::Classes { labels, .. } => Some(labels),
        }
    }

    /// Subset of rows. Class names are kept even if a class is absent from the subset.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: select_rows(&self.features, rows),
            target: self.target.select(rows),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn select_features(&self, cols: &[usize]) -> Dataset {
        Dataset {
            features: select_columns(&self.features, cols),
            target: self.target.clone(),
            feature_names: self
                .feature_names
                .as_ref()
                .map(|names| cols.iter().map(|&j| names[j].clone()).collect()),
        }
    }

    /// Same target and names with a replacement feature matrix of equal shape.
    pub fn with_features(&self, features: DMatrix<f64>) -> Result<Dataset> {
        if features.shape() != self.features.shape() {
            return Err(Error::DimensionMismatch {
                context: "replacement features",
                expected: self.n_features(),
                found: features.ncols(),
            });
        }
        Ok(Dataset {
            features,
            target: self.target.clone(),
            feature_names: self.feature_names.clone(),
        })
    }
}

/// Per-column location and scale estimated on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    /// Population standard deviations (divide by n).
    pub stds: Vec<f64>,
    /// Columns with zero spread; they transform to all zeros.
    pub constant_flags: Vec<bool>,
}

impl StandardizationStats {
    pub fn fit(train: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = train.shape();
        if n < 2 {
            return Err(Error::invalid("train_features", "standardization needs at least 2 rows"));
        }
        let mut means = Vec::with_capacity(p);
        let mut stds = Vec::with_capacity(p);
        let mut constant_flags = Vec::with_capacity(p);
        for j in 0..p {
            let col = train.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            let constant = !(std > f64::EPSILON * mean.abs().max(1.0));
            means.push(mean);
            stds.push(if constant { 0.0 } else { std });
            constant_flags.push(constant);
        }
        Ok(StandardizationStats {
            means,
            stds,
            constant_flags,
        })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(m)?;
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            if self.constant_flags[j] {
                0.0
            } else {
                (m[(i, j)] - self.means[j]) / self.stds[j]
            }
        }))
    }

    /// Maps standardized values back to the original scale. Constant columns
    /// come back as their training mean.
    pub fn invert(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(m)?;
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            if self.constant_flags[j] {
                self.means[j]
            } else {
                m[(i, j)] * self.stds[j] + self.means[j]
            }
        }))
    }

    fn check_dim(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "standardization columns",
                expected: self.dim(),
                found: m.ncols(),
            });
        }
        Ok(())
    }
}

/// Fits statistics on `train` and returns them with the standardized matrix.
pub fn standardize(train: &DMatrix<f64>) -> Result<(StandardizationStats, DMatrix<f64>)> {
    let stats = StandardizationStats::fit(train)?;
    let transformed = stats.apply(train)?;
    Ok((stats, transformed))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// Seeded random partition with `round(n · test_fraction)` test rows.
///
/// Both index lists are returned in ascending order.
pub fn split(n: usize, test_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction", "must lie strictly between 0 and 1"));
    }
    if n < 4 {
        return Err(Error::invalid("n", "split needs at least 4 rows"));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::invalid("test_fraction", "split would leave an empty partition"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut test_idx = order[..n_test].to_vec();
    let mut train_idx = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(SplitPlan {
        train_idx,
        test_idx,
        seed,
    })
}

/// One-way ANOVA F statistic of every column against the class labels.
///
/// Columns with zero within-class spread and non-zero between-class spread get
/// `f64::INFINITY`; columns without any spread get 0.
pub fn f_statistics(features: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "ANOVA labels",
            expected: n,
            found: labels.len(),
        });
    }
    if n_classes < 2 {
        return Err(Error::invalid("labels", "ANOVA needs at least two classes"));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::invalid("labels", "label outside 0..n_classes"));
        }
        counts[l] += 1;
    }
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(Error::SmallClass {
            class,
            count,
            required: 2,
        });
    }
    let g = n_classes as f64;
    let df_between = g - 1.0;
    let df_within = n as f64 - g;

    let mut out = Vec::with_capacity(features.ncols());
    let mut sums = vec![0.0; n_classes];
    for j in 0..features.ncols() {
        let col = features.column(j);
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (x, &l) in col.iter().zip(labels) {
            sums[l] += x;
        }
        let grand = col.iter().sum::<f64>() / n as f64;
        let group_means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        let ssb: f64 = group_means
            .iter()
            .zip(&counts)
            .map(|(m, &c)| c as f64 * (m - grand) * (m - grand))
            .sum();
        let ssw: f64 = col
            .iter()
            .zip(labels)
            .map(|(x, &l)| (x - group_means[l]) * (x - group_means[l]))
            .sum();
        let sst: f64 = col.iter().map(|x| (x - grand) * (x - grand)).sum();
        let f = if ssw <= f64::EPSILON * sst {
            if ssb > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            (ssb / df_between) / (ssw / df_within)
        };
        out.push(f);
    }
    Ok(out)
}

/// Indices of the `m` columns with the largest F statistics, best first.
/// Ties go to the lower column index.
pub fn anova_f_select(features: &DMatrix<f64>, labels: &[usize], n_classes: usize, m: usize) -> Result<Vec<usize>> {
    if m > features.ncols() {
        return Err(Error::invalid("m", "cannot select more features than available"));
    }
    let scores = f_statistics(features, labels, n_classes)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(order)
}
