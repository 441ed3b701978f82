//! Synthetic regression designs, error metrics and the Monte Carlo runner.
//!
//! The first `k` features form an equicorrelated block built from a shared
//! latent factor, `xⱼ = √ρ·z + √(1−ρ)·eⱼ`; the remaining `p − k` are iid
//! standard normal. Coefficients `θⱼ ~ N(0, τ²)` for `j < k`, zero otherwise.
//! Each ingredient is drawn from its own stream of the dataset seed
//! (0: θ, 1: latent block, 2: noise features, 3: ε).

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::data::{split, Dataset, Target};
use crate::mlp::{Predictions, TrainConfig};
use crate::penalty::PenaltyFamily;
use crate::pipeline::{fit_network, FitSpec};
use crate::rng::{derive_seed, stream_rng, Rng};
use crate::tune::{grid_search, CvPlan};
use crate::{Error, Executor, Result, Sequential};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    /// `y = xᵀθ + ε`
    Linear,
    /// `y = Σⱼ θⱼ sin(xⱼ) + ε`
    SinNonlinear,
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::Linear => "linear",
            Form::SinNonlinear => "sin",
        }
    }

    pub fn parse(s: &str) -> Option<Form> {
        match s {
            "linear" => Some(Form::Linear),
            "sin" | "sin_nonlinear" | "nonlinear" => Some(Form::SinNonlinear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpConfig {
    pub n: usize,
    pub p: usize,
    /// Number of informative (correlated, non-zero coefficient) features.
    pub k: usize,
    pub rho: f64,
    pub sigma: f64,
    pub tau: f64,
    pub form: Form,
    pub seed: u64,
}

impl DgpConfig {
    /// `(n, p, k)` design with `τ = 1`.
    pub fn new(n: usize, p: usize, k: usize, rho: f64, sigma: f64, form: Form, seed: u64) -> Self {
        DgpConfig {
            n,
            p,
            k,
            rho,
            sigma,
            tau: 1.0,
            form,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::invalid("n/p", "must be positive"));
        }
        if self.k > self.p {
            return Err(Error::invalid("k", "cannot exceed p"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::invalid("rho", "must lie in [0, 1)"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid("sigma", "must be finite and non-negative"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau", "must be finite and positive"));
        }
        Ok(())
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one dataset and returns it with the true coefficient vector.
pub fn gen_dataset(config: &DgpConfig) -> Result<(Dataset, DVector<f64>)> {
    config.validate()?;
    let DgpConfig { n, p, k, rho, sigma, tau, form, seed } = *config;
    let mut theta_rng = stream_rng(seed, 0);
    let theta = DVector::from_fn(p, |j, _| if j < k { tau * normal(&mut theta_rng) } else { 0.0 });

    let mut x = DMatrix::zeros(n, p);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut block_rng = stream_rng(seed, 1);
    for i in 0..n {
        let z = normal(&mut block_rng);
        for j in 0..k {
            x[(i, j)] = a * z + b * normal(&mut block_rng);
        }
    }
    let mut noise_rng = stream_rng(seed, 2);
    for i in 0..n {
        for j in k..p {
            x[(i, j)] = normal(&mut noise_rng);
        }
    }

    let signal = match form {
        Form::Linear => &x * &theta,
        Form::SinNonlinear => DVector::from_fn(n, |i, _| (0..k).map(|j| theta[j] * x[(i, j)].sin()).sum()),
    };
    let mut eps_rng = stream_rng(seed, 3);
    let y: Vec<f64> = if sigma == 0.0 {
        signal.iter().copied().collect()
    } else {
        signal.iter().map(|s| s + sigma * normal(&mut eps_rng)).collect()
    };
    Ok((Dataset::new(x, Target::Values(y))?, theta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    /// `mean(ŷ − y)`.
    pub bias: f64,
    pub rmse: f64,
    /// `None` when `y_true` is constant.
    pub r2: Option<f64>,
}

pub fn compute_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            context: "prediction length",
            expected: y_true.len(),
            found: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::invalid("y_true", "need at least one value"));
    }
    let n = y_true.len() as f64;
    let (mut sse, mut sae, mut se) = (0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = p - t;
        sse += e * e;
        sae += e.abs();
        se += e;
    }
    let mean = y_true.iter().sum::<f64>() / n;
    let sst: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    let mse = sse / n;
    Ok(Metrics {
        mse,
        mae: sae / n,
        bias: se / n,
        rmse: mse.sqrt(),
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
    })
}

/// Mean per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(labels: &[usize], predicted: &[usize], n_classes: usize) -> Result<f64> {
    if labels.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            context: "prediction length",
            expected: labels.len(),
            found: predicted.len(),
        });
    }
    if let Some(&c) = labels.iter().chain(predicted).find(|&&c| c >= n_classes) {
        return Err(Error::invalid("predicted", alloc::format!("class {c} outside 0..{n_classes}")));
    }
    let mut totals = alloc::vec![0usize; n_classes];
    let mut hits = alloc::vec![0usize; n_classes];
    for (&t, &p) in labels.iter().zip(predicted) {
        totals[t] += 1;
        if t == p {
            hits[t] += 1;
        }
    }
    let present: Vec<f64> = (0..n_classes)
        .filter(|&c| totals[c] > 0)
        .map(|c| hits[c] as f64 / totals[c] as f64)
        .collect();
    if present.is_empty() {
        return Err(Error::invalid("labels", "need at least one labelled row"));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// A method in a Monte Carlo comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub family: PenaltyFamily,
    /// Hyperparameters used when the run is not tuned (or for families without any).
    pub params: Vec<f64>,
}

impl MethodSpec {
    pub fn new(family: PenaltyFamily, params: Vec<f64>) -> Self {
        MethodSpec {
            name: family.name().to_string(),
            family,
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    /// Scenario; its seed is replaced per replication.
    pub dgp: DgpConfig,
    pub methods: Vec<MethodSpec>,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub replications: usize,
    pub test_fraction: f64,
    pub delta: f64,
    /// Cross-validated tuning of every method with parameters; fixed `params` otherwise.
    /// A single candidate list is shared by all of a family's parameters.
    pub tuning: Option<CvPlan>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRecord {
    pub method: String,
    pub replication: usize,
    pub params: Vec<f64>,
    /// Test metrics, or the reason the replication failed for this method.
    pub outcome: core::result::Result<Metrics, String>,
    /// Frobenius norm of all trained weights.
    pub weight_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mse: f64,
    pub mae: f64,
    pub bias: f64,
    pub completed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub replications: usize,
    pub methods: Vec<String>,
    /// Ordered by replication, then method.
    pub records: Vec<McRecord>,
}

impl McResult {
    pub fn failures(&self) -> Vec<&McRecord> {
        self.records.iter().filter(|r| r.outcome.is_err()).collect()
    }

    pub fn method_records(&self, method: &str) -> Vec<&McRecord> {
        self.records.iter().filter(|r| r.method == method).collect()
    }

    /// Arithmetic means over successful replications, one row per method.
    pub fn aggregate(&self) -> Vec<MethodSummary> {
        self.methods
            .iter()
            .map(|m| {
                let ok: Vec<Metrics> = self.method_records(m).iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
                let n = ok.len() as f64;
                let mean = |f: fn(&Metrics) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(f).sum::<f64>() / n };
                MethodSummary {
                    method: m.clone(),
                    mse: mean(|x| x.mse),
                    mae: mean(|x| x.mae),
                    bias: mean(|x| x.bias),
                    completed: ok.len(),
                }
            })
            .collect()
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.train.validate()?;
        if self.replications == 0 {
            return Err(Error::invalid("replications", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "need at least one method"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::invalid("methods", alloc::format!("duplicate method name `{}`", m.name)));
            }
            if self.tuning.is_none() && m.params.len() != m.family.arity() {
                return Err(Error::DimensionMismatch {
                    context: "method parameters vs penalty arity",
                    expected: m.family.arity(),
                    found: m.params.len(),
                });
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid("test_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Seeds of replication `r`: dataset, split, network initialization, training, CV folds.
    fn replication_seeds(&self, r: usize) -> [u64; 5] {
        let base = derive_seed(self.seed, r as u64);
        [0, 1, 2, 3, 4].map(|i| derive_seed(base, i))
    }
}

fn run_method(cfg: &McConfig, method: &MethodSpec, train_data: &Dataset, test_data: &Dataset, seeds: &[u64; 5]) -> Result<(Vec<f64>, Metrics, f64)> {
    let mut spec = FitSpec::new(cfg.hidden.clone(), TrainConfig { seed: seeds[3], ..cfg.train.clone() });
    spec.delta = cfg.delta;
    spec.init_seed = seeds[2];
    let params = match (&cfg.tuning, method.family.arity()) {
        (Some(plan), a) if a > 0 => {
            let grid = match plan.grid.as_slice() {
                [shared] => alloc::vec![shared.clone(); a],
                lists => lists.to_vec(),
            };
            let plan = CvPlan { seed: seeds[4], grid, ..plan.clone() };
            grid_search(train_data, method.family, &plan, &spec, &Sequential)?.best
        }
        _ => method.params.clone(),
    };
    let fitted = fit_network(train_data, &spec, method.family, &params)?;
    let pred = match fitted.predict(test_data.features())? {
        Predictions::Values(v) => v,
        Predictions::Classes(_) => unreachable!("regression head"),
    };
    let metrics = compute_metrics(test_data.values().expect("regression target"), &pred)?;
    Ok((params, metrics, fitted.model.weight_norm()))
}

/// Runs every method on `replications` independent datasets.
///
/// Replication `r` derives all of its seeds from `(seed, r)`, so results do not
/// depend on how the executor schedules replications. Within a replication
/// every method sees the same split, initialization seed and fold assignment.
/// A failing method is recorded and the run continues.
pub fn run_monte_carlo<E: Executor>(cfg: &McConfig, exec: &E) -> Result<McResult> {
    cfg.validate()?;
    let per_rep: Vec<Result<Vec<McRecord>>> = exec.map(cfg.replications, |r| {
        let seeds = cfg.replication_seeds(r);
        let (data, _) = gen_dataset(&DgpConfig { seed: seeds[0], ..cfg.dgp })?;
        let plan = split(data.n_rows(), cfg.test_fraction, seeds[1])?;
        let train_data = data.select_rows(&plan.train_idx);
        let test_data = data.select_rows(&plan.test_idx);
        Ok(cfg
            .methods
            .iter()
            .map(|m| match run_method(cfg, m, &train_data, &test_data, &seeds) {
                Ok((params, metrics, weight_norm)) => McRecord {
                    method: m.name.clone(),
                    replication: r,
                    params,
                    outcome: Ok(metrics),
                    weight_norm,
                },
                Err(e) => McRecord {
                    method: m.name.clone(),
                    replication: r,
                    params: Vec::new(),
                    outcome: Err(e.to_string()),
                    weight_norm: f64::NAN,
                },
            })
            .collect())
    });
    let mut records = Vec::with_capacity(cfg.replications * cfg.methods.len());
    for (r, rep) in per_rep.into_iter().enumerate() {
        match rep {
            Ok(recs) => records.extend(recs),
            Err(e) => records.extend(cfg.methods.iter().map(|m| McRecord {
                method: m.name.clone(),
                replication: r,
                params: Vec::new(),
                outcome: Err(e.to_string()),
                weight_norm: f64::NAN,
            })),
        }
    }
    Ok(McResult {
        replications: cfg.replications,
        methods: cfg.methods.iter().map(|m| m.name.clone()).collect(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Optimizer;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn noiseless_linear_is_exact() {
        let cfg = DgpConfig::new(50, 8, 3, 0.5, 0.0, Form::Linear, 4);
        let (data, theta) = gen_dataset(&cfg).unwrap();
        let y = data.features() * &theta;
        assert_eq!(data.values().unwrap(), y.as_slice());
        assert!(theta.iter().skip(3).all(|t| *t == 0.0));
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn block_correlation_matches_rho() {
        for rho in [0.0, 0.75] {
            let (data, _) = gen_dataset(&DgpConfig::new(20_000, 5, 3, rho, 1.0, Form::Linear, 1)).unwrap();
            let x = data.features();
            let c = correlation(x.column(0).as_slice(), x.column(2).as_slice());
            assert!((c - rho).abs() < 0.03, "rho {rho}: {c}");
            let noise = correlation(x.column(0).as_slice(), x.column(4).as_slice());
            assert!(noise.abs() < 0.03);
        }
    }

    #[test]
    fn streams_are_separate() {
        let a = gen_dataset(&DgpConfig::new(30, 6, 2, 0.3, 1.0, Form::Linear, 8)).unwrap().0;
        let b = gen_dataset(&DgpConfig::new(30, 6, 2, 0.3, 5.0, Form::SinNonlinear, 8)).unwrap().0;
        // Noise level and signal form only affect y.
        assert_eq!(a.features(), b.features());
        assert!(DgpConfig::new(30, 6, 7, 0.3, 1.0, Form::Linear, 8).validate().is_err());
        assert!(DgpConfig::new(30, 6, 2, 1.2, 1.0, Form::Linear, 8).validate().is_err());
    }

    #[test]
    fn metric_hand_cases() {
        let m = compute_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mse, m.mae, m.bias, m.r2), (0.0, 0.0, 0.0, Some(1.0)));
        let m = compute_metrics(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!((m.mse, m.mae, m.bias, m.r2), (1.0, 1.0, 0.0, None));
        let m = compute_metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((m.mse - 2.0 / 3.0).abs() < 1e-15 && (m.mae - 2.0 / 3.0).abs() < 1e-15);
        // SSE = SST = 2: predicting the mean explains nothing.
        assert_eq!(m.r2, Some(0.0));
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn balanced_accuracy_hand_cases() {
        assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap(), 0.5);
        let b = balanced_accuracy(&[0, 1, 1, 2, 2], &[0, 1, 0, 2, 1], 3).unwrap();
        assert!((b - 2.0 / 3.0).abs() < 1e-15);
        assert!(balanced_accuracy(&[0, 1], &[0, 3], 2).is_err());
    }

    proptest! {
        #[test]
        fn metric_identities(values in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40)) {
            let (t, p): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
            let m = compute_metrics(&t, &p).unwrap();
            prop_assert!((m.mse - m.rmse * m.rmse).abs() <= 1e-12 * m.mse.max(1.0));
            prop_assert!(m.bias * m.bias <= m.mse + 1e-12);
        }
    }

    fn tiny_mc(replications: usize) -> McConfig {
        McConfig {
            dgp: DgpConfig::new(40, 5, 2, 0.5, 0.0, Form::Linear, 0),
            methods: vec![
                MethodSpec::new(PenaltyFamily::None, vec![]),
                MethodSpec::new(PenaltyFamily::Ridge, vec![1e3]),
                MethodSpec::new(PenaltyFamily::Sparridge, vec![0.1, 0.01]),
            ],
            hidden: vec![4],
            train: TrainConfig {
                optimizer: Optimizer::adam(0.01),
                ..TrainConfig::new(30, 8, 0)
            },
            replications,
            test_fraction: 0.25,
            delta: 1e-3,
            tuning: None,
            seed: 11,
        }
    }

    #[test]
    fn monte_carlo_is_complete_and_reproducible() {
        let cfg = tiny_mc(2);
        let a = run_monte_carlo(&cfg, &Sequential).unwrap();
        assert_eq!(a.records.len(), 6);
        assert!(a.failures().is_empty());
        assert!(a.records.iter().all(|r| r.outcome.as_ref().unwrap().mse.is_finite()));
        assert_eq!(a, run_monte_carlo(&cfg, &Sequential).unwrap());
        let agg = a.aggregate();
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[0].completed, 2);
    }

    #[test]
    fn shared_grid_covers_every_parameter() {
        let mut cfg = tiny_mc(1);
        cfg.tuning = Some(CvPlan::uniform(PenaltyFamily::Ridge, &[0.01, 0.5], 2, crate::tune::Criterion::MeanMse, 0));
        let r = run_monte_carlo(&cfg, &Sequential).unwrap();
        assert!(r.failures().is_empty());
        let spar = r.method_records("sparridge");
        assert_eq!(spar[0].params.len(), 2);
        assert!(spar[0].params.iter().all(|v| [0.01, 0.5].contains(v)));
    }

    #[test]
    fn heavy_ridge_shrinks_weights_in_monte_carlo() {
        let res = run_monte_carlo(&tiny_mc(1), &Sequential).unwrap();
        assert!(res.records[1].weight_norm < res.records[0].weight_norm);
    }
}
