//! Feedforward ReLU networks and their regularized training loop.
//!
//! Weights are stored `in × out`, so the first-layer weight is `p × r₁` and the
//! Gram quadratic `tr(WᵀC_δW)` applies to it directly. Activations are kept
//! batch-major (`rows × units`).

#[allow(unused_imports)]
use num_traits::Float;
use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::{Dataset, Target};
use crate::gram::{build_gram, StabilizedGram};
use crate::linalg::{gemm, select_rows};
use crate::penalty::PenaltyConfig;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Objective magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Single real output, squared-error loss.
    Linear,
    /// Softmax over `classes` outputs, cross-entropy loss.
    Softmax { classes: usize },
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Linear => 1,
            Head::Softmax { classes } => classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weight: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weight: DMatrix::zeros(self.weight.nrows(), self.weight.ncols()),
            offset: DVector::zeros(self.offset.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    head: Head,
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>, head: Head) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid("layers", "a network needs at least one hidden layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.nrows() == 0 || layer.weight.ncols() == 0 {
                return Err(Error::invalid("layers", "layer sizes must be positive"));
            }
            if layer.offset.len() != layer.weight.ncols() {
                return Err(Error::DimensionMismatch {
                    context: "layer offset length",
                    expected: layer.weight.ncols(),
                    found: layer.offset.len(),
                });
            }
            if i > 0 && layers[i - 1].weight.ncols() != layer.weight.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "consecutive layer sizes",
                    expected: layers[i - 1].weight.ncols(),
                    found: layer.weight.nrows(),
                });
            }
            if let Some(k) = layer.weight.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: k % layer.weight.nrows(),
                    col: k / layer.weight.nrows(),
                });
            }
            if let Some(k) = layer.offset.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: k, col: 0 });
            }
        }
        let last = layers[layers.len() - 1].weight.ncols();
        if last != head.output_dim() || matches!(head, Head::Softmax { classes } if classes < 2) {
            return Err(Error::DimensionMismatch {
                context: "output layer width vs head",
                expected: head.output_dim(),
                found: last,
            });
        }
        Ok(MlpModel { layers, head })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    /// Input width followed by every layer's output width.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.weight.ncols()));
        sizes
    }

    pub fn max_abs_param(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.offset.iter()))
            .fold(0.0, |m, v| if v.abs() > m || v.is_nan() { v.abs() } else { m })
    }

    /// `√Σ‖W_l‖_F²` over all weight matrices.
    pub fn weight_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Glorot-uniform weights, zero offsets. `sizes` lists the input width, the
/// hidden widths and the output width.
pub fn init_model(sizes: &[usize], head: Head, seed: u64) -> Result<MlpModel> {
    if sizes.len() < 3 {
        return Err(Error::invalid("layer_sizes", "need input, at least one hidden and an output size"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("layer_sizes", "layer sizes must be positive"));
    }
    let mut rng = stream_rng(seed, 0);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let weight = DMatrix::from_fn(w[0], w[1], |_, _| rng.random_range(-limit..limit));
            Layer {
                weight,
                offset: DVector::zeros(w[1]),
            }
        })
        .collect();
    MlpModel::new(layers, head)
}

fn check_input(model: &MlpModel, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "network input width",
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    Ok(())
}

fn affine(a: &DMatrix<f64>, layer: &Layer) -> DMatrix<f64> {
    let mut z = DMatrix::from_fn(a.nrows(), layer.weight.ncols(), |_, j| layer.offset[j]);
    gemm(&mut z, 1.0, a, false, &layer.weight, false, 1.0);
    z
}

fn relu_in_place(z: &mut DMatrix<f64>) {
    z.apply(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

fn softmax_rows(z: &mut DMatrix<f64>) {
    for i in 0..z.nrows() {
        let mut row = z.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Input plus post-activation of every hidden layer, then the raw output (logits).
fn forward_cache(model: &MlpModel, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let last = model.layers.len() - 1;
    let mut acts = Vec::with_capacity(model.layers.len() + 1);
    acts.push(x.clone());
    for (l, layer) in model.layers.iter().enumerate() {
        let mut z = affine(&acts[l], layer);
        if l < last {
            relu_in_place(&mut z);
        }
        acts.push(z);
    }
    acts
}

/// Network output: the linear prediction, or softmax probabilities per row.
pub fn forward(model: &MlpModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_input(model, x)?;
    let mut out = forward_cache(model, x).pop().expect("at least one layer");
    if let Head::Softmax { .. } = model.head {
        softmax_rows(&mut out);
    }
    Ok(out)
}

/// Post-activation values of hidden layer `layer` (1-based) for each row of `x`.
pub fn hidden_representation(model: &MlpModel, x: &DMatrix<f64>, layer: usize) -> Result<DMatrix<f64>> {
    check_input(model, x)?;
    if layer == 0 || layer >= model.layers.len() {
        return Err(Error::invalid("layer", "must name a hidden layer (1-based)"));
    }
    let mut a = x.clone();
    for l in &model.layers[..layer] {
        a = affine(&a, l);
        relu_in_place(&mut a);
    }
    Ok(a)
}

/// Stabilized Gram matrix of hidden layer `layer`'s activations.
pub fn gram_from_hidden(model: &MlpModel, x: &DMatrix<f64>, layer: usize, delta: f64) -> Result<StabilizedGram> {
    build_gram(&hidden_representation(model, x, layer)?, delta)
}

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Values(&'a [f64]),
    Classes(&'a [usize]),
}

impl<'a> Targets<'a> {
    pub fn from_target(target: &'a Target) -> Self {
        match target {
            Target::Values(v) => Targets::Values(v),
            Target::Classes { labels, .. } => Targets::Classes(labels),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_targets(model: &MlpModel, rows: usize, targets: Targets<'_>) -> Result<()> {
    if targets.len() != rows {
        return Err(Error::DimensionMismatch {
            context: "target length vs batch rows",
            expected: rows,
            found: targets.len(),
        });
    }
    match (model.head, targets) {
        (Head::Linear, Targets::Values(_)) => Ok(()),
        (Head::Softmax { classes }, Targets::Classes(labels)) => match labels.iter().find(|&&c| c >= classes) {
            Some(&c) => Err(Error::invalid("targets", alloc::format!("label {c} exceeds the {classes} output classes"))),
            None => Ok(()),
        },
        _ => Err(Error::invalid("targets", "target kind does not match the network head")),
    }
}

/// Mean data loss and its gradient with respect to the raw outputs.
fn data_loss(head: Head, out: &DMatrix<f64>, targets: Targets<'_>) -> (f64, DMatrix<f64>) {
    let b = out.nrows() as f64;
    match (head, targets) {
        (Head::Linear, Targets::Values(y)) => {
            let mut delta = out.clone();
            let mut loss = 0.0;
            for (i, yi) in y.iter().enumerate() {
                let r = out[(i, 0)] - yi;
                loss += r * r;
                delta[(i, 0)] = 2.0 * r / b;
            }
            (loss / b, delta)
        }
        (Head::Softmax { .. }, Targets::Classes(labels)) => {
            let mut probs = out.clone();
            let mut loss = 0.0;
            for (i, &c) in labels.iter().enumerate() {
                let row = out.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - out[(i, c)];
            }
            softmax_rows(&mut probs);
            for (i, &c) in labels.iter().enumerate() {
                probs[(i, c)] -= 1.0;
            }
            (loss / b, probs / b)
        }
        _ => unreachable!("targets checked against head"),
    }
}

/// A penalty spread over the network: the full config on `gram_layer`, its
/// Gram-free companion on every other weight matrix. Offsets are never penalized.
#[derive(Debug, Clone)]
pub struct NetworkPenalty {
    pub config: PenaltyConfig,
    pub gram_layer: usize,
    companion: PenaltyConfig,
}

impl NetworkPenalty {
    pub fn new(config: PenaltyConfig, gram_layer: usize) -> Self {
        let companion = config.companion();
        NetworkPenalty {
            config,
            gram_layer,
            companion,
        }
    }

    pub fn first_layer(config: PenaltyConfig) -> Self {
        NetworkPenalty::new(config, 0)
    }

    fn for_layer(&self, l: usize) -> &PenaltyConfig {
        if l == self.gram_layer {
            &self.config
        } else {
            &self.companion
        }
    }

    pub fn value(&self, model: &MlpModel) -> Result<f64> {
        let mut total = 0.0;
        for (l, layer) in model.layers.iter().enumerate() {
            total += self.for_layer(l).value(&layer.weight)?;
        }
        Ok(total)
    }
}

impl From<PenaltyConfig> for NetworkPenalty {
    fn from(config: PenaltyConfig) -> Self {
        NetworkPenalty::first_layer(config)
    }
}

/// Objective (possibly non-finite) and gradients for one batch.
fn objective_and_grads(
    model: &MlpModel,
    x: &DMatrix<f64>,
    targets: Targets<'_>,
    penalty: &NetworkPenalty,
) -> Result<(f64, Vec<Layer>)> {
    let acts = forward_cache(model, x);
    let n_layers = model.layers.len();
    let (loss, mut delta) = data_loss(model.head, &acts[n_layers], targets);
    let mut grads: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
    let mut objective = loss;
    for l in (0..n_layers).rev() {
        let layer = &model.layers[l];
        let g = &mut grads[l];
        gemm(&mut g.weight, 1.0, &acts[l], true, &delta, false, 0.0);
        for j in 0..delta.ncols() {
            g.offset[j] = delta.column(j).sum();
        }
        let pen = penalty.for_layer(l);
        objective += pen.value(&layer.weight)?;
        g.weight += pen.gradient(&layer.weight)?;
        if l > 0 {
            let mut prev = DMatrix::zeros(delta.nrows(), layer.weight.nrows());
            gemm(&mut prev, 1.0, &delta, false, &layer.weight, true, 0.0);
            prev.zip_apply(&acts[l], |d, a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            delta = prev;
        }
    }
    Ok((objective, grads))
}

/// Batch objective (mean loss plus network penalty) and its gradients, one
/// [`Layer`] of gradients per model layer.
pub fn loss_and_grads(
    model: &MlpModel,
    x: &DMatrix<f64>,
    targets: Targets<'_>,
    penalty: &NetworkPenalty,
) -> Result<(f64, Vec<Layer>)> {
    check_input(model, x)?;
    if x.nrows() == 0 {
        return Err(Error::invalid("batch", "must contain at least one row"));
    }
    check_targets(model, x.nrows(), targets)?;
    let (objective, grads) = objective_and_grads(model, x, targets, penalty)?;
    if !objective.is_finite() {
        return Err(Error::NonFiniteLoss {
            max_abs_param: model.max_abs_param(),
        });
    }
    Ok((objective, grads))
}

/// Mean data loss (no penalty) over all rows.
pub fn data_loss_on(model: &MlpModel, x: &DMatrix<f64>, targets: Targets<'_>) -> Result<f64> {
    check_input(model, x)?;
    check_targets(model, x.nrows(), targets)?;
    if x.nrows() == 0 {
        return Err(Error::invalid("batch", "must contain at least one row"));
    }
    let out = forward_cache(model, x).pop().expect("at least one layer");
    Ok(data_loss(model.head, &out, targets).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd {
        learning_rate: f64,
    },
    Adam {
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Optimizer::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lr, ok) = match *self {
            Optimizer::Sgd { learning_rate } => (learning_rate, true),
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => (
                learning_rate,
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0 && epsilon.is_finite(),
            ),
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive and finite"));
        }
        if !ok {
            return Err(Error::invalid("optimizer", "Adam needs betas in [0, 1) and a positive epsilon"));
        }
        Ok(())
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

/// Periodic rebuild of the Gram matrix from a hidden layer's activations; the
/// Gram-weighted term then applies to the weight fed by that layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramRefresh {
    /// 1-based hidden layer index.
    pub hidden_layer: usize,
    pub every: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
    pub gram_refresh: Option<GramRefresh>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            optimizer: Optimizer::default(),
            seed,
            early_stopping: None,
            gram_refresh: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        self.optimizer.validate()?;
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return Err(Error::invalid("validation_fraction", "must lie in (0, 1)"));
            }
            if es.patience == 0 {
                return Err(Error::invalid("patience", "must be at least 1"));
            }
        }
        if let Some(r) = self.gram_refresh {
            if r.every == 0 {
                return Err(Error::invalid("gram_refresh.every", "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean mini-batch objective (loss plus penalty) per epoch.
    pub train_loss: Vec<f64>,
    /// Validation data loss per epoch, when early stopping is configured.
    pub val_loss: Option<Vec<f64>>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

enum OptState {
    Sgd,
    Adam(Adam),
}

fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], a: &Adam, step: f64, c2: f64) {
    for k in 0..p.len() {
        m[k] = a.beta1 * m[k] + (1.0 - a.beta1) * g[k];
        v[k] = a.beta2 * v[k] + (1.0 - a.beta2) * g[k] * g[k];
        p[k] -= step * m[k] / ((v[k] / c2).sqrt() + a.epsilon);
    }
}

impl OptState {
    fn new(opt: &Optimizer, model: &MlpModel) -> Self {
        match *opt {
            Optimizer::Sgd { .. } => OptState::Sgd,
            Optimizer::Adam { beta1, beta2, epsilon, .. } => {
                let zeros: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
                OptState::Adam(Adam {
                    beta1,
                    beta2,
                    epsilon,
                    m: zeros.clone(),
                    v: zeros,
                    t: 0,
                })
            }
        }
    }

    fn step(&mut self, lr: f64, model: &mut MlpModel, grads: &[Layer]) {
        match self {
            OptState::Sgd => {
                for (layer, g) in model.layers.iter_mut().zip(grads) {
                    layer.weight -= &g.weight * lr;
                    layer.offset -= &g.offset * lr;
                }
            }
            OptState::Adam(a) => {
                a.t += 1;
                let c1 = 1.0 - a.beta1.powi(a.t);
                let c2 = 1.0 - a.beta2.powi(a.t);
                let step = lr / c1;
                for l in 0..grads.len() {
                    let (mut m, mut v) = (core::mem::take(&mut a.m[l]), core::mem::take(&mut a.v[l]));
                    let layer = &mut model.layers[l];
                    adam_update(layer.weight.as_mut_slice(), grads[l].weight.as_slice(), m.weight.as_mut_slice(), v.weight.as_mut_slice(), a, step, c2);
                    adam_update(layer.offset.as_mut_slice(), grads[l].offset.as_slice(), m.offset.as_mut_slice(), v.offset.as_mut_slice(), a, step, c2);
                    a.m[l] = m;
                    a.v[l] = v;
                }
            }
        }
    }
}

impl Default for Layer {
    fn default() -> Self {
        Layer {
            weight: DMatrix::zeros(0, 0),
            offset: DVector::zeros(0),
        }
    }
}

fn learning_rate(opt: &Optimizer) -> f64 {
    match *opt {
        Optimizer::Sgd { learning_rate } | Optimizer::Adam { learning_rate, .. } => learning_rate,
    }
}

fn gather_targets<'a>(targets: Targets<'_>, rows: &[usize], values: &'a mut Vec<f64>, classes: &'a mut Vec<usize>) -> Targets<'a> {
    match targets {
        Targets::Values(y) => {
            values.clear();
            values.extend(rows.iter().map(|&i| y[i]));
            Targets::Values(values)
        }
        Targets::Classes(c) => {
            classes.clear();
            classes.extend(rows.iter().map(|&i| c[i]));
            Targets::Classes(classes)
        }
    }
}

/// Trains a copy of `model` on `(x, targets)`.
///
/// Rows are reshuffled every epoch from a generator seeded by `config.seed`.
/// With early stopping a seeded fraction of rows is held out, and the
/// parameters of the epoch with the lowest validation loss are returned.
pub fn train_on(
    model: &MlpModel,
    x: &DMatrix<f64>,
    targets: Targets<'_>,
    config: &TrainConfig,
    penalty: &NetworkPenalty,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    check_input(model, x)?;
    check_targets(model, x.nrows(), targets)?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("dataset", "no training rows"));
    }

    let mut rows: Vec<usize> = (0..n).collect();
    let mut val_rows: Vec<usize> = Vec::new();
    if let Some(es) = config.early_stopping {
        if n < 2 {
            return Err(Error::invalid("early_stopping", "needs at least two rows"));
        }
        rows.shuffle(&mut stream_rng(config.seed, 1));
        let n_val = ((n as f64 * es.validation_fraction).round() as usize).clamp(1, n - 1);
        val_rows = rows.split_off(n - n_val);
        rows.sort_unstable();
        val_rows.sort_unstable();
    }
    let (mut vy, mut vc) = (Vec::new(), Vec::new());
    let val_x = select_rows(x, &val_rows);
    let val_targets = gather_targets(targets, &val_rows, &mut vy, &mut vc);
    let train_x = if config.early_stopping.is_some() { select_rows(x, &rows) } else { x.clone() };

    let mut current = model.clone();
    let mut penalty = penalty.clone();
    let mut opt = OptState::new(&config.optimizer, &current);
    let lr = learning_rate(&config.optimizer);
    let mut history = TrainHistory {
        val_loss: config.early_stopping.map(|_| Vec::new()),
        ..TrainHistory::default()
    };
    let mut best: Option<(f64, MlpModel)> = None;
    let mut shuffle_rng = stream_rng(config.seed, 2);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let (mut by, mut bc) = (Vec::new(), Vec::new());
    let mut batch_rows: Vec<usize> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        if let (Some(r), Some(_)) = (config.gram_refresh, penalty.config.gram()) {
            if epoch % r.every == 0 {
                let g = gram_from_hidden(&current, &train_x, r.hidden_layer, r.delta)?;
                penalty = NetworkPenalty::new(penalty.config.with_gram(Arc::new(g)), r.hidden_layer);
            }
        }
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch_rows.clear();
            batch_rows.extend(chunk.iter().map(|&i| rows[i]));
            let bx = select_rows(x, &batch_rows);
            let bt = gather_targets(targets, &batch_rows, &mut by, &mut bc);
            let (objective, grads) = objective_and_grads(&current, &bx, bt, &penalty)?;
            if !objective.is_finite() || objective > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    epoch,
                    objective,
                    history: Box::new(history),
                });
            }
            total += objective * chunk.len() as f64;
            opt.step(lr, &mut current, &grads);
        }
        history.train_loss.push(total / rows.len() as f64);

        match (config.early_stopping, history.val_loss.as_mut()) {
            (Some(es), Some(vl)) => {
                let out = forward_cache(&current, &val_x).pop().expect("at least one layer");
                let loss = data_loss(current.head, &out, val_targets).0;
                vl.push(loss);
                if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                    best = Some((loss, current.clone()));
                    history.best_epoch = Some(epoch);
                } else if epoch - history.best_epoch.unwrap_or(0) >= es.patience {
                    break;
                }
            }
            _ => history.best_epoch = Some(epoch),
        }
    }
    let trained = match best {
        Some((_, m)) => m,
        None => current,
    };
    Ok((trained, history))
}

/// Trains on a [`Dataset`]; the task must match the network head.
pub fn train(model: &MlpModel, dataset: &Dataset, config: &TrainConfig, penalty: &NetworkPenalty) -> Result<(MlpModel, TrainHistory)> {
    train_on(model, dataset.features(), Targets::from_target(dataset.target()), config, penalty)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Values(Vec<f64>),
    Classes(Vec<usize>),
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn predict(model: &MlpModel, x: &DMatrix<f64>) -> Result<Predictions> {
    let out = forward(model, x)?;
    Ok(match model.head {
        Head::Linear => Predictions::Values(out.column(0).iter().copied().collect()),
        Head::Softmax { .. } => Predictions::Classes((0..out.nrows()).map(|i| argmax(out.row(i).iter().copied())).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::build_gram;
    use crate::penalty::PenaltyFamily;
    use alloc::vec;
    use alloc::vec::Vec;

    fn tiny(w1: f64, b1: f64, w2: f64, b2: f64) -> MlpModel {
        MlpModel::new(
            vec![
                Layer {
                    weight: DMatrix::from_element(1, 1, w1),
                    offset: DVector::from_element(1, b1),
                },
                Layer {
                    weight: DMatrix::from_element(1, 1, w2),
                    offset: DVector::from_element(1, b2),
                },
            ],
            Head::Linear,
        )
        .unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let m = init_model(&[2, 3, 1], Head::Linear, 5).unwrap();
        assert_eq!(m.layers()[0].weight.shape(), (2, 3));
        assert_eq!(m.layers()[1].weight.shape(), (3, 1));
        assert_eq!(m.layers()[0].offset.len(), 3);
        assert_eq!(m, init_model(&[2, 3, 1], Head::Linear, 5).unwrap());
        let limit = (6.0f64 / 5.0).sqrt();
        assert!(m.layers()[0].weight.iter().all(|v| v.abs() <= limit));
        assert!(init_model(&[2, 0, 1], Head::Linear, 5).is_err());
        assert!(init_model(&[2, 1], Head::Linear, 5).is_err());
        assert_eq!(init_model(&[20, 64, 32, 1], Head::Linear, 1).unwrap().layer_sizes(), vec![20, 64, 32, 1]);
    }

    #[test]
    fn hand_forward_passes() {
        let x = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(forward(&tiny(1.0, -2.0, 1.0, 0.0), &x).unwrap()[(0, 0)], 0.0);
        assert_eq!(forward(&tiny(2.0, 0.0, 3.0, 1.0), &x).unwrap()[(0, 0)], 7.0);
        let zero = tiny(0.0, 0.0, 0.0, 0.0);
        assert_eq!(forward(&zero, &DMatrix::from_element(3, 1, 4.0)).unwrap(), DMatrix::zeros(3, 1));
        assert!(forward(&zero, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn softmax_tie_breaks_low() {
        let model = MlpModel::new(
            vec![
                Layer { weight: DMatrix::zeros(1, 1), offset: DVector::zeros(1) },
                Layer { weight: DMatrix::zeros(1, 2), offset: DVector::zeros(2) },
            ],
            Head::Softmax { classes: 2 },
        )
        .unwrap();
        let x = DMatrix::from_element(1, 1, 1.0);
        let p = forward(&model, &x).unwrap();
        assert_eq!((p[(0, 0)], p[(0, 1)]), (0.5, 0.5));
        assert_eq!(predict(&model, &x).unwrap(), Predictions::Classes(vec![0]));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ce_nonnegative() {
        let model = init_model(&[3, 5, 4], Head::Softmax { classes: 4 }, 2).unwrap();
        let x = DMatrix::from_fn(6, 3, |i, j| (i as f64 - 2.0) * (j as f64 + 0.5));
        let p = forward(&model, &x).unwrap();
        for i in 0..6 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
        let labels = [0, 1, 2, 3, 0, 1];
        assert!(data_loss_on(&model, &x, Targets::Classes(&labels)).unwrap() >= 0.0);
    }

    #[test]
    fn unpenalized_objective_is_mse() {
        let model = init_model(&[2, 3, 1], Head::Linear, 9).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let y = [0.3, -0.7];
        let out = forward(&model, &x).unwrap();
        let mse = ((out[(0, 0)] - 0.3).powi(2) + (out[(1, 0)] + 0.7).powi(2)) / 2.0;
        let (obj, _) = loss_and_grads(&model, &x, Targets::Values(&y), &PenaltyConfig::None.into()).unwrap();
        assert!((obj - mse).abs() < 1e-15);
    }

    fn gram_for(p: usize) -> Arc<StabilizedGram> {
        let h = DMatrix::from_fn(7, p, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0 + 0.1 * j as f64);
        Arc::new(build_gram(&h, 0.01).unwrap())
    }

    fn perturbed(model: &MlpModel, l: usize, offset: bool, k: usize, h: f64) -> MlpModel {
        let mut m = model.clone();
        if offset {
            m.layers[l].offset[k] += h;
        } else {
            m.layers[l].weight.as_mut_slice()[k] += h;
        }
        m
    }

    fn fd_check(model: &MlpModel, x: &DMatrix<f64>, t: Targets<'_>, pen: &NetworkPenalty) {
        let (_, grads) = loss_and_grads(model, x, t, pen).unwrap();
        let h = 1e-6;
        let obj = |m: &MlpModel| loss_and_grads(m, x, t, pen).unwrap().0;
        for l in 0..model.layers.len() {
            for (offset, count) in [(false, model.layers[l].weight.len()), (true, model.layers[l].offset.len())] {
                for k in 0..count {
                    let fd = (obj(&perturbed(model, l, offset, k, h)) - obj(&perturbed(model, l, offset, k, -h))) / (2.0 * h);
                    let an = if offset { grads[l].offset[k] } else { grads[l].weight.as_slice()[k] };
                    let err = (fd - an).abs() / an.abs().max(1e-3);
                    assert!(err < 1e-5, "layer {l} offset {offset} k {k}: fd {fd} vs {an}");
                }
            }
        }
    }

    fn all_penalties(p: usize) -> Vec<PenaltyConfig> {
        let g = gram_for(p);
        vec![
            PenaltyConfig::None,
            PenaltyConfig::Ridge { lambda: 0.3 },
            PenaltyConfig::Lasso { lambda: 0.2 },
            PenaltyConfig::ElasticNet { lambda: 0.3, alpha: 0.4 },
            PenaltyConfig::Covridge { lambda1: 0.5, lambda2: 0.2, gram: g.clone() },
            PenaltyConfig::Sparridge { lambda1: 0.5, gamma: 0.1, gram: g },
        ]
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = DMatrix::from_row_slice(4, 2, &[0.5, -1.0, 1.5, 0.3, -0.7, 0.8, 1.1, 1.2]);
        let y = [0.4, -0.2, 1.0, 0.1];
        let mut model = init_model(&[2, 3, 1], Head::Linear, 11).unwrap();
        model.layers[0].offset = DVector::from_vec(vec![0.05, -0.03, 0.1]);
        for pen in all_penalties(2) {
            fd_check(&model, &x, Targets::Values(&y), &pen.into());
        }
        let cls = init_model(&[2, 4, 3], Head::Softmax { classes: 3 }, 12).unwrap();
        for pen in all_penalties(2) {
            fd_check(&cls, &x, Targets::Classes(&[0, 2, 1, 2]), &pen.into());
        }
    }

    #[test]
    fn offsets_are_not_penalized() {
        // A zero network fitting zero targets has no data-loss gradient.
        let mut model = init_model(&[2, 3, 1], Head::Linear, 3).unwrap();
        for l in &mut model.layers {
            l.offset.fill(0.0);
        }
        model.layers[1].weight.fill(0.0);
        let x = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -2.0, -0.5]);
        for pen in all_penalties(2) {
            let cfg = TrainConfig {
                optimizer: Optimizer::Sgd { learning_rate: 0.1 },
                ..TrainConfig::new(5, 2, 1)
            };
            let (trained, _) = train_on(&model, &x, Targets::Values(&[0.0, 0.0]), &cfg, &pen.into()).unwrap();
            for l in 0..2 {
                assert_eq!(trained.layers[l].offset, model.layers[l].offset);
            }
        }
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let model = init_model(&[2, 3, 1], Head::Linear, 3).unwrap();
        let x = DMatrix::from_element(4, 2, 1.0);
        let (trained, hist) = train_on(&model, &x, Targets::Values(&[1.0; 4]), &TrainConfig::new(0, 2, 1), &PenaltyConfig::None.into()).unwrap();
        assert_eq!(trained, model);
        assert_eq!(hist.epochs_run(), 0);
        assert_eq!(hist.best_epoch, None);
    }

    fn regression_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, 5);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = (0..n).map(|i| x[(i, 0)] - 2.0 * x[(i, 1)] * x[(i, 2)] + 0.1 * rng.random::<f64>()).collect();
        (x, y)
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (x, y) = regression_data(40, 1);
        let model = init_model(&[3, 8, 1], Head::Linear, 4).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(0.01),
            ..TrainConfig::new(60, 8, 7)
        };
        let pen: NetworkPenalty = PenaltyConfig::Ridge { lambda: 1e-3 }.into();
        let (a, ha) = train_on(&model, &x, Targets::Values(&y), &cfg, &pen).unwrap();
        let (b, hb) = train_on(&model, &x, Targets::Values(&y), &cfg, &pen).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha.train_loss[59] < ha.train_loss[0]);
        assert_eq!(ha.best_epoch, Some(59));
    }

    #[test]
    fn heavy_ridge_shrinks_weights() {
        let (x, y) = regression_data(40, 2);
        let model = init_model(&[3, 8, 1], Head::Linear, 4).unwrap();
        let cfg = TrainConfig::new(200, 8, 7);
        let (free, _) = train_on(&model, &x, Targets::Values(&y), &cfg, &PenaltyConfig::None.into()).unwrap();
        let (shrunk, _) = train_on(&model, &x, Targets::Values(&y), &cfg, &PenaltyConfig::Ridge { lambda: 1e3 }.into()).unwrap();
        assert!(shrunk.weight_norm() < free.weight_norm());
    }

    #[test]
    fn covridge_without_gram_term_trains_like_ridge() {
        let (x, y) = regression_data(20, 3);
        let model = init_model(&[3, 8, 4, 1], Head::Linear, 4).unwrap();
        let g = Arc::new(build_gram(&x, 1e-3).unwrap());
        let lambda = 0.05;
        for epochs in [1, 7, 20] {
            let cfg = TrainConfig::new(epochs, 5, 9);
            let ridge = train_on(&model, &x, Targets::Values(&y), &cfg, &PenaltyConfig::Ridge { lambda }.into()).unwrap();
            let cov = PenaltyFamily::Covridge.instantiate(&[0.0, lambda], Some(g.clone())).unwrap();
            let cov = train_on(&model, &x, Targets::Values(&y), &cfg, &cov.into()).unwrap();
            assert_eq!(ridge, cov);
        }
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let (x, y) = regression_data(50, 4);
        let model = init_model(&[3, 16, 1], Head::Linear, 4).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::adam(0.05),
            early_stopping: Some(EarlyStopping { validation_fraction: 0.2, patience: 3 }),
            ..TrainConfig::new(300, 4, 3)
        };
        let (trained, hist) = train_on(&model, &x, Targets::Values(&y), &cfg, &PenaltyConfig::None.into()).unwrap();
        let vl = hist.val_loss.as_ref().unwrap();
        let best = hist.best_epoch.unwrap();
        assert_eq!(vl.len(), hist.epochs_run());
        assert!(vl.iter().all(|v| *v >= vl[best]));
        assert!(hist.epochs_run() <= best + 1 + 3);
        assert!(trained.max_abs_param().is_finite());
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let (x, y) = regression_data(20, 5);
        let y: Vec<f64> = y.iter().map(|v| v * 1e3).collect();
        let model = init_model(&[3, 8, 1], Head::Linear, 4).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd { learning_rate: 10.0 },
            ..TrainConfig::new(50, 4, 3)
        };
        match train_on(&model, &x, Targets::Values(&y), &cfg, &PenaltyConfig::None.into()) {
            Err(Error::Diverged { objective, .. }) => assert!(!(objective <= DIVERGENCE_LIMIT)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn hidden_gram_refresh_moves_penalty_to_that_layer() {
        let (x, y) = regression_data(30, 6);
        let model = init_model(&[3, 6, 4, 1], Head::Linear, 4).unwrap();
        let g = gram_from_hidden(&model, &x, 1, 1e-3).unwrap();
        assert_eq!(g.dim(), 6);
        let pen = PenaltyFamily::Covridge.instantiate(&[0.5, 0.01], Some(Arc::new(build_gram(&x, 1e-3).unwrap()))).unwrap();
        let cfg = TrainConfig {
            gram_refresh: Some(GramRefresh { hidden_layer: 1, every: 5, delta: 1e-3 }),
            ..TrainConfig::new(12, 10, 3)
        };
        let (trained, hist) = train_on(&model, &x, Targets::Values(&y), &cfg, &pen.into()).unwrap();
        assert_eq!(hist.epochs_run(), 12);
        assert!(trained.max_abs_param().is_finite());
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let model = init_model(&[2, 3, 1], Head::Linear, 1).unwrap();
        let x = DMatrix::zeros(2, 2);
        assert!(loss_and_grads(&model, &x, Targets::Classes(&[0, 1]), &PenaltyConfig::None.into()).is_err());
        assert!(loss_and_grads(&model, &x, Targets::Values(&[0.0]), &PenaltyConfig::None.into()).is_err());
    }
}
