//! Linear softmax reference classifier trained with Adam and early stopping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::KeyedRng;
use crate::schema::AnnotationTable;
use crate::shiftgen::SplitManifest;
use crate::synth::Raster;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no features loaded for instance `{0}`")]
    MissingFeatures(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

/// Maps an RGB raster to a channel-major vector with each byte `b` sent to
/// `b / 127.5 - 1`.
pub fn featurize(raster: &Raster, side: usize) -> Result<Vec<f32>, ModelError> {
    let plane = side * side;
    if raster.side != side || raster.pixels.len() != 3 * plane {
        return Err(ModelError::SizeMismatch {
            expected: 3 * plane,
            found: raster.pixels.len(),
        });
    }
    let mut out = vec![0.0f32; 3 * plane];
    for (p, px) in raster.pixels.chunks_exact(3).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            out[c * plane + p] = (f64::from(b) / 127.5 - 1.0) as f32;
        }
    }
    Ok(out)
}

/// Feature vectors keyed by instance id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, features: &[f32]) -> Result<(), ModelError> {
        if features.len() != self.dim {
            return Err(ModelError::SizeMismatch {
                expected: self.dim,
                found: features.len(),
            });
        }
        let id = id.into();
        if let Some(&slot) = self.index.get(&id) {
            self.data[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(features);
        } else {
            self.index.insert(id, self.data.len() / self.dim);
            self.data.extend_from_slice(features);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&slot| &self.data[slot * self.dim..(slot + 1) * self.dim])
    }
}

/// Borrowed feature rows with integer labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset<'a> {
    pub x: Vec<&'a [f32]>,
    pub y: Vec<usize>,
}

impl<'a> Dataset<'a> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: &'a [f32], y: usize) {
        self.x.push(x);
        self.y.push(y);
    }

    /// Rows for `ids`, labelled with the table's label attribute.
    pub fn from_ids(
        ids: &[String],
        table: &AnnotationTable,
        store: &'a FeatureStore,
    ) -> Result<Self, ModelError> {
        let mut ds = Dataset::default();
        for id in ids {
            let row = table
                .get(id)
                .ok_or_else(|| ModelError::MissingFeatures(id.clone()))?;
            let x = store
                .get(id)
                .ok_or_else(|| ModelError::MissingFeatures(id.clone()))?;
            ds.push(x, row.values[0]);
        }
        Ok(ds)
    }
}

/// Weights are `classes × dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

fn dot(w: &[f64], x: &[f32]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let wc = w.chunks_exact(LANES);
    let xc = x.chunks_exact(LANES);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        for l in 0..LANES {
            acc[l] += a[l] * f64::from(b[l]);
        }
    }
    let tail: f64 = wr.iter().zip(xr).map(|(a, &b)| a * f64::from(b)).sum();
    acc.iter().sum::<f64>() + tail
}

fn dot32(w: &[f32], x: &[f32]) -> f32 {
    const LANES: usize = 16;
    let mut acc = [0.0f32; LANES];
    let wc = w.chunks_exact(LANES);
    let xc = x.chunks_exact(LANES);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (a, b) in wc.zip(xc) {
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    let tail: f32 = wr.iter().zip(xr).map(|(a, b)| a * b).sum();
    acc.iter().sum::<f32>() + tail
}

fn axpy(out: &mut [f64], coef: f64, x: &[f32]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += coef * f64::from(v);
    }
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
        }
    }

    /// Entries uniform in `[-scale, scale]`.
    pub fn random(classes: usize, dim: usize, seed: u64, scale: f64) -> Self {
        let mut rng = KeyedRng::new(seed, "linear-init", 0);
        let mut draw = || (2.0 * rng.unit_f64() - 1.0) * scale;
        let weights = (0..classes * dim).map(|_| draw()).collect();
        let bias = (0..classes).map(|_| draw()).collect();
        Self {
            classes,
            dim,
            weights,
            bias,
        }
    }

    fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(self.row(c), x) + self.bias[c])
            .collect()
    }

    /// Top-1 class; ties go to the lowest index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let z = self.logits(x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Mean softmax cross-entropy over `batch` and its gradient.
pub fn loss_and_grad(model: &LinearModel, batch: &[(&[f32], usize)]) -> (f64, Gradient) {
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        bias: vec![0.0; model.classes],
    };
    if batch.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(x, y) in batch {
        let z = model.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += sum.ln() + max - z[y];
        for (c, e) in exps.iter().enumerate() {
            let delta = (e / sum - f64::from(u8::from(c == y))) * scale;
            grad.bias[c] += delta;
            axpy(
                &mut grad.weights[c * model.dim..(c + 1) * model.dim],
                delta,
                x,
            );
        }
    }
    (loss * scale, grad)
}

/// Single-precision counterpart of [`loss_and_grad`] used inside the training
/// loop; the loss and softmax stay in double precision. Writes the gradient
/// into `grad` (overwriting it) and returns the mean loss.
///
/// Both passes walk the features in blocks so the weight and gradient slices
/// of a block stay cache-resident while every sample of the batch visits it.
fn loss_and_grad_fast(
    weights: &[f32],
    bias: &[f64],
    batch: &[(&[f32], usize)],
    grad_w: &mut [f32],
    grad: &mut Gradient,
) -> f64 {
    const BLOCK: usize = 1024;
    let classes = bias.len();
    let dim = weights.len() / classes;
    let n = batch.len();
    let mut z = vec![0.0f64; n * classes];
    for k0 in (0..dim).step_by(BLOCK) {
        let k1 = (k0 + BLOCK).min(dim);
        for (zi, &(x, _)) in z.chunks_exact_mut(classes).zip(batch) {
            for (c, zc) in zi.iter_mut().enumerate() {
                *zc += f64::from(dot32(&weights[c * dim + k0..c * dim + k1], &x[k0..k1]));
            }
        }
    }

    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut deltas = vec![0.0f32; n * classes];
    grad.bias.fill(0.0);
    for ((zi, di), &(_, y)) in z
        .chunks_exact_mut(classes)
        .zip(deltas.chunks_exact_mut(classes))
        .zip(batch)
    {
        for (zc, b) in zi.iter_mut().zip(bias) {
            *zc += b;
        }
        let max = zi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = zi.iter().map(|&v| (v - max).exp()).sum();
        loss += sum.ln() + max - zi[y];
        for c in 0..classes {
            let delta = ((zi[c] - max).exp() / sum - f64::from(u8::from(c == y))) * scale;
            grad.bias[c] += delta;
            di[c] = delta as f32;
        }
    }

    grad_w.fill(0.0);
    for k0 in (0..dim).step_by(BLOCK) {
        let k1 = (k0 + BLOCK).min(dim);
        for (di, &(x, _)) in deltas.chunks_exact(classes).zip(batch) {
            let xs = &x[k0..k1];
            for (c, &d) in di.iter().enumerate() {
                for (o, &v) in grad_w[c * dim + k0..c * dim + k1].iter_mut().zip(xs) {
                    *o += d * v;
                }
            }
        }
    }
    for (g, &v) in grad.weights.iter_mut().zip(grad_w.iter()) {
        *g = f64::from(v);
    }
    loss * scale
}

/// Top-1 accuracy.
pub fn evaluate(model: &LinearModel, data: &Dataset) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptySplit("evaluation"));
    }
    let hits = data
        .x
        .iter()
        .zip(&data.y)
        .filter(|(x, &y)| model.predict(x) == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

pub const LEARNING_RATE_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub eval_interval: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_iterations: 10_000,
            eval_interval: 100,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0
            || self.max_iterations == 0
            || self.eval_interval == 0
            || self.patience == 0
        {
            return bad("batch_size, max_iterations, eval_interval and patience must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub val_accuracy: f64,
    /// Mean training loss over the iterations since the previous evaluation.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub learning_rate: f64,
    pub evaluations: Vec<Evaluation>,
    pub best_iteration: usize,
    pub best_val_accuracy: f64,
    pub iterations_run: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Evaluations recorded after the best one.
    pub fn evaluations_after_best(&self) -> usize {
        self.evaluations
            .iter()
            .filter(|e| e.iteration > self.best_iteration)
            .count()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One bias-corrected update over consecutive parameter blocks.
    fn step(&mut self, lr: f64, blocks: [(&mut [f64], &[f64]); 2]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let step = lr * c2.sqrt() / c1;
        let mut offset = 0;
        for (params, grad) in blocks {
            let m = &mut self.m[offset..offset + params.len()];
            let v = &mut self.v[offset..offset + params.len()];
            for (((p, &g), mi), vi) in params.iter_mut().zip(grad).zip(m).zip(v) {
                *mi = Self::BETA1 * *mi + (1.0 - Self::BETA1) * g;
                *vi = Self::BETA2 * *vi + (1.0 - Self::BETA2) * g * g;
                *p -= step * *mi / (vi.sqrt() + Self::EPS * c2.sqrt());
            }
            offset += params.len();
        }
    }
}

/// Cycles through shuffled epochs; a training set no larger than the batch
/// size is used whole every iteration.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    batch: usize,
    seed: u64,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            batch: batch.min(n),
            seed,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        if self.batch < self.order.len() {
            self.order.sort_unstable();
            KeyedRng::new(self.seed, "train-batches", self.epoch).shuffle(&mut self.order);
        }
        self.epoch += 1;
        self.cursor = 0;
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.reshuffle();
        }
        let start = self.cursor;
        self.cursor += self.batch;
        &self.order[start..start + self.batch]
    }
}

/// Adam from a zero initialization, validating every `eval_interval`
/// iterations. Keeps the best-validation snapshot and stops after `patience`
/// consecutive evaluations without a strict improvement.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    classes: usize,
    config: &TrainConfig,
) -> Result<(LinearModel, TrainHistory), ModelError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    let dim = train_set.x[0].len();
    let mut model = LinearModel::zeros(classes, dim);
    let mut adam = Adam::new(model.weights.len() + model.bias.len());
    let mut sampler = BatchSampler::new(train_set.len(), config.batch_size, config.seed);

    let mut best = model.clone();
    let mut history = TrainHistory {
        learning_rate: config.learning_rate,
        evaluations: Vec::new(),
        best_iteration: 0,
        best_val_accuracy: f64::NEG_INFINITY,
        iterations_run: 0,
        stopped_early: false,
    };
    let mut stale = 0usize;
    let mut loss_acc = 0.0;
    let mut loss_n = 0usize;
    let mut batch: Vec<(&[f32], usize)> = Vec::with_capacity(config.batch_size);
    let mut weights32 = vec![0.0f32; model.weights.len()];
    let mut grad_w32 = vec![0.0f32; model.weights.len()];
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        bias: vec![0.0; classes],
    };

    for iteration in 1..=config.max_iterations {
        batch.clear();
        batch.extend(
            sampler
                .next()
                .iter()
                .map(|&i| (train_set.x[i], train_set.y[i])),
        );
        for (w, &v) in weights32.iter_mut().zip(&model.weights) {
            *w = v as f32;
        }
        let loss = loss_and_grad_fast(&weights32, &model.bias, &batch, &mut grad_w32, &mut grad);
        loss_acc += loss;
        loss_n += 1;
        adam.step(
            config.learning_rate,
            [
                (&mut model.weights, &grad.weights),
                (&mut model.bias, &grad.bias),
            ],
        );
        history.iterations_run = iteration;

        if iteration % config.eval_interval == 0 {
            let acc = evaluate(&model, val_set)?;
            history.evaluations.push(Evaluation {
                iteration,
                val_accuracy: acc,
                train_loss: loss_acc / loss_n as f64,
            });
            loss_acc = 0.0;
            loss_n = 0;
            if acc > history.best_val_accuracy {
                history.best_val_accuracy = acc;
                history.best_iteration = iteration;
                best.clone_from(&model);
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if history.evaluations.is_empty() {
        // Fewer iterations than one evaluation interval: score the final model.
        let acc = evaluate(&model, val_set)?;
        history.evaluations.push(Evaluation {
            iteration: history.iterations_run,
            val_accuracy: acc,
            train_loss: loss_acc / loss_n.max(1) as f64,
        });
        history.best_val_accuracy = acc;
        history.best_iteration = history.iterations_run;
        best = model;
    }
    Ok((best, history))
}

pub struct GridResult {
    pub model: LinearModel,
    pub history: TrainHistory,
    /// One history per grid entry, in grid order.
    pub runs: Vec<TrainHistory>,
}

/// Trains once per learning rate and keeps the best validation accuracy
/// (ties go to the earlier grid entry).
pub fn train_grid(
    train_set: &Dataset,
    val_set: &Dataset,
    classes: usize,
    base: &TrainConfig,
    grid: &[f64],
) -> Result<GridResult, ModelError> {
    if grid.is_empty() {
        return Err(ModelError::InvalidConfig("empty learning-rate grid".into()));
    }
    let mut best: Option<(LinearModel, TrainHistory)> = None;
    let mut runs = Vec::with_capacity(grid.len());
    for &lr in grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..base.clone()
        };
        let (model, history) = train(train_set, val_set, classes, &cfg)?;
        runs.push(history.clone());
        let better = best
            .as_ref()
            .is_none_or(|(_, h)| history.best_val_accuracy > h.best_val_accuracy);
        if better {
            best = Some((model, history));
        }
    }
    let (model, history) = best.expect("grid is non-empty");
    Ok(GridResult {
        model,
        history,
        runs,
    })
}

/// Outcome of training and testing on one manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub config_id: String,
    pub test_accuracy: f64,
    pub learning_rate: f64,
    pub history: TrainHistory,
    pub grid: Vec<TrainHistory>,
}

/// Grid-searches on the manifest's train/val split and scores the test split.
pub fn run_manifest(
    table: &AnnotationTable,
    manifest: &SplitManifest,
    store: &FeatureStore,
    base: &TrainConfig,
    grid: &[f64],
) -> Result<ManifestRun, ModelError> {
    let train_set = Dataset::from_ids(&manifest.train_ids, table, store)?;
    let val_set = Dataset::from_ids(&manifest.val_ids, table, store)?;
    let test_set = Dataset::from_ids(&manifest.test_ids, table, store)?;
    if test_set.is_empty() {
        return Err(ModelError::EmptySplit("test"));
    }
    let classes = table.schema().label.cardinality();
    let base = TrainConfig {
        seed: manifest.config.seed,
        ..base.clone()
    };
    let result = train_grid(&train_set, &val_set, classes, &base, grid)?;
    Ok(ManifestRun {
        config_id: manifest.config.config_id.clone(),
        test_accuracy: evaluate(&result.model, &test_set)?,
        learning_rate: result.history.learning_rate,
        history: result.history,
        grid: result.runs,
    })
}
