//! Class forecasters: the trainable residual 1D-convolution classifier, the
//! evaluation metric suite, and causal sliding-window stream inference.

use crate::error::{Error, Result};
use crate::labeling::{label_series, LabeledDataset, LabeledSample, TargetSpec};
use crate::nn::{self, AdaDelta, ConvNet, ConvNetShape};
use crate::signal::EventSeries;
use crate::store::{read_container, write_container, ArrayData};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Anything that maps the three past input channels to a probability vector
/// over the N severity classes.
pub trait Forecaster: Send + Sync {
    fn n_classes(&self) -> usize;
    fn predict(&self, f: &[f64], df: &[f64], y: &[f64]) -> Vec<f64>;
}

pub const CLASSIFIER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub conv_blocks: usize,
    pub channels_per_block: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `lr_decay_epochs`.
    pub lr_decay: f64,
    pub lr_decay_epochs: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            conv_blocks: 3,
            channels_per_block: 16,
            learning_rate: 0.01,
            lr_decay: 0.5,
            lr_decay_epochs: 50,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks == 0 || self.channels_per_block == 0 || self.batch_size == 0 {
            return Err(Error::config("conv_blocks, channels_per_block and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("learning_rate must be positive, weight_decay nonnegative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must be in (0, 1]"));
        }
        if self.lr_decay_epochs == 0 {
            return Err(Error::config("lr_decay_epochs must be positive"));
        }
        Ok(())
    }
}

/// Fixed affine input scaling computed from the training set and stored in
/// the checkpoint. The f window is centered per sample because the absolute
/// signal level carries no information about upcoming drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub f_scale: f64,
    pub df_scale: f64,
}

impl InputNorm {
    fn from_dataset(data: &LabeledDataset) -> Self {
        let n = data.n_past;
        let step = (data.len() / 1024).max(1);
        let (mut f, mut df, mut y) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut f_sq = 0.0f64;
        let mut df_sq = 0.0f64;
        let mut count = 0usize;
        let mut i = 0;
        while i < data.len() {
            data.fill_channels(i, &mut f, &mut df, &mut y);
            let mean = f.iter().sum::<f64>() / n as f64;
            f_sq += f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
            df_sq += df.iter().map(|v| v * v).sum::<f64>();
            count += n;
            i += step;
        }
        let f_std = (f_sq / count.max(1) as f64).sqrt();
        let df_rms = (df_sq / count.max(1) as f64).sqrt();
        Self {
            f_scale: if f_std > 1e-9 { 1.0 / f_std } else { 1.0 },
            df_scale: if df_rms > 1e-9 { 1.0 / df_rms } else { 1.0 },
        }
    }

    /// Channel-major network input `[f | df | y]`.
    fn assemble(&self, f: &[f64], df: &[f64], y: &[f64]) -> Vec<f64> {
        let n = f.len();
        let mut x = Vec::with_capacity(3 * n);
        let mean = f.iter().sum::<f64>() / n as f64;
        x.extend(f.iter().map(|v| (v - mean) * self.f_scale));
        x.extend(df.iter().map(|v| v * self.df_scale));
        x.extend_from_slice(y);
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

/// A trained classifier: network shape, flat parameters, input scaling and
/// the recorded training curve.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub shape: ConvNetShape,
    pub params: Vec<f64>,
    pub norm: InputNorm,
    pub curve: Vec<EpochStats>,
    net: ConvNet,
}

impl TrainedClassifier {
    fn from_parts(
        config: ClassifierConfig,
        shape: ConvNetShape,
        params: Vec<f64>,
        norm: InputNorm,
        curve: Vec<EpochStats>,
    ) -> Self {
        let net = ConvNet::new(shape.clone());
        Self { config, shape, params, norm, curve, net }
    }

    pub fn n_past(&self) -> usize {
        self.shape.in_len
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let meta = ClassifierMeta {
            config: self.config.clone(),
            shape: self.shape.clone(),
            norm: self.norm.clone(),
            curve: self.curve.clone(),
        };
        write_container(w, b"CLS1", CLASSIFIER_SCHEMA_VERSION, &meta, &[("params", &ArrayData::F64(self.params.clone()))])
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let (meta, arrays): (ClassifierMeta, _) = read_container(r, b"CLS1", CLASSIFIER_SCHEMA_VERSION)?;
        let params = arrays
            .get("params")
            .ok_or_else(|| Error::data("checkpoint missing params array"))?
            .as_f64()?
            .to_vec();
        let net = ConvNet::new(meta.shape.clone());
        if params.len() != net.n_params() {
            return Err(Error::data(format!(
                "checkpoint has {} params, shape wants {}",
                params.len(),
                net.n_params()
            )));
        }
        Ok(Self::from_parts(meta.config, meta.shape, params, meta.norm, meta.curve))
    }
}

#[derive(Serialize, Deserialize)]
struct ClassifierMeta {
    config: ClassifierConfig,
    shape: ConvNetShape,
    norm: InputNorm,
    curve: Vec<EpochStats>,
}

impl Forecaster for TrainedClassifier {
    fn n_classes(&self) -> usize {
        self.shape.n_classes
    }

    fn predict(&self, f: &[f64], df: &[f64], y: &[f64]) -> Vec<f64> {
        let x = self.norm.assemble(f, df, y);
        self.net.probabilities(&self.params, &x)
    }
}

/// Always predicts one class.
#[derive(Debug, Clone)]
pub struct ConstantForecaster {
    pub class: usize,
    pub n_classes: usize,
}

impl Forecaster for ConstantForecaster {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict(&self, _f: &[f64], _df: &[f64], _y: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        p[self.class] = 1.0;
        p
    }
}

/// Uniform probabilities over all classes.
#[derive(Debug, Clone)]
pub struct UniformForecaster {
    pub n_classes: usize,
}

impl Forecaster for UniformForecaster {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn predict(&self, _f: &[f64], _df: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![1.0 / self.n_classes as f64; self.n_classes]
    }
}

pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Trains the classifier by minibatch gradient descent (AdaDelta steps, the
/// stepped learning-rate schedule, L2 weight decay). Deterministic given the
/// config seed.
pub fn train_classifier(
    train: &LabeledDataset,
    valid: &LabeledDataset,
    config: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if !train.balanced {
        return Err(Error::data("training set must be rebalanced before training"));
    }
    if train.spec != valid.spec || train.n_past != valid.n_past {
        return Err(Error::config("train and valid datasets must share spec and n_past"));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::data("train and valid datasets must be nonempty"));
    }

    let n_past = train.n_past;
    let n_classes = train.spec.n_classes;
    let shape = ConvNetShape {
        in_ch: 3,
        channels: config.channels_per_block,
        blocks: config.conv_blocks,
        kernel: 5,
        in_len: n_past,
        n_classes,
    };
    let net = ConvNet::new(shape.clone());
    let norm = InputNorm::from_dataset(train);
    let mut params = net.init_params(config.seed);
    let mut opt = AdaDelta::new(net.n_params(), config.learning_rate);
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr_scale = config.lr_decay.powi((epoch / config.lr_decay_epochs) as i32);
        let mut epoch_loss = 0.0f64;
        let mut epoch_correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let per_sample: Vec<(f64, Vec<f64>, bool)> = batch
                .par_iter()
                .map(|&i| {
                    let s = train.sample(i);
                    let x = norm.assemble(&s.window_f, &s.window_df, &s.window_y);
                    let (loss, grads, probs) = net.loss_and_grad(&params, &x, s.label as usize);
                    (loss, grads, argmax(&probs) == s.label as usize)
                })
                .collect();
            let mut grads = vec![0.0f64; net.n_params()];
            let mut batch_loss = 0.0f64;
            for (loss, g, correct) in &per_sample {
                batch_loss += loss;
                epoch_correct += *correct as usize;
                for (acc, v) in grads.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            for g in &mut grads {
                *g *= inv;
            }
            if !batch_loss.is_finite() {
                return Err(Error::training(format!("loss diverged at epoch {epoch}")));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            opt.step(&mut params, &grads, lr_scale, config.weight_decay);
        }
        let (valid_loss, valid_accuracy) = dataset_loss_accuracy(&net, &params, &norm, valid);
        curve.push(EpochStats {
            epoch,
            lr: config.learning_rate * lr_scale,
            train_loss: epoch_loss / train.len() as f64,
            train_accuracy: epoch_correct as f64 / train.len() as f64,
            valid_loss,
            valid_accuracy,
        });
    }

    Ok(TrainedClassifier::from_parts(config.clone(), shape, params, norm, curve))
}

fn dataset_loss_accuracy(
    net: &ConvNet,
    params: &[f64],
    norm: &InputNorm,
    data: &LabeledDataset,
) -> (f64, f64) {
    let results: Vec<(f64, bool)> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.sample(i);
            let x = norm.assemble(&s.window_f, &s.window_df, &s.window_y);
            let logits = net.logits(params, &x);
            let (loss, _) = nn::softmax_cross_entropy(&logits, s.label as usize);
            (loss, argmax(&logits) == s.label as usize)
        })
        .collect();
    let n = results.len().max(1) as f64;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = results.iter().filter(|r| r.1).count() as f64 / n;
    (loss, acc)
}

/// Classification metric suite. Macro averages run over classes whose
/// denominator is nonzero; per-class entries are absent (None) otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class_precision: Vec<Option<f64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub accuracy_vs_random: f64,
    pub f1_vs_random: f64,
    /// P(pred = N−1 | true = 0): overestimating danger.
    pub fp_edge: Option<f64>,
    /// P(pred = 0 | true = N−1): missing an extreme event.
    pub fn_edge: Option<f64>,
    pub label_marginals: Vec<f64>,
}

/// Metrics from aligned true/predicted label vectors.
pub fn metrics_from_labels(truth: &[u8], pred: &[u8], n_classes: usize) -> Result<MetricsReport> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::data("label vectors must be nonempty and aligned"));
    }
    let n = truth.len();
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t as usize][p as usize] += 1;
    }
    let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
    let accuracy = correct as f64 / n as f64;

    let mut per_class_precision = Vec::with_capacity(n_classes);
    let mut per_class_recall = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let pred_count: usize = (0..n_classes).map(|t| confusion[t][k]).sum();
        let true_count: usize = confusion[k].iter().sum();
        per_class_precision.push(if pred_count > 0 {
            Some(confusion[k][k] as f64 / pred_count as f64)
        } else {
            None
        });
        per_class_recall.push(if true_count > 0 {
            Some(confusion[k][k] as f64 / true_count as f64)
        } else {
            None
        });
    }
    let precision = macro_mean(&per_class_precision);
    let recall = macro_mean(&per_class_recall);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };

    let label_marginals: Vec<f64> =
        (0..n_classes).map(|k| confusion[k].iter().sum::<usize>() as f64 / n as f64).collect();

    // analytic uniform-random baseline on the same marginals
    let accuracy_random = 1.0 / n_classes as f64;
    let present: Vec<f64> = label_marginals.iter().cloned().filter(|&m| m > 0.0).collect();
    let precision_random = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let recall_random = 1.0 / n_classes as f64;
    let f1_random = if precision_random + recall_random > 0.0 {
        2.0 * precision_random * recall_random / (precision_random + recall_random)
    } else {
        0.0
    };

    let edge = n_classes - 1;
    let true0: usize = confusion[0].iter().sum();
    let true_edge: usize = confusion[edge].iter().sum();
    let fp_edge = if true0 > 0 { Some(confusion[0][edge] as f64 / true0 as f64) } else { None };
    let fn_edge = if true_edge > 0 { Some(confusion[edge][0] as f64 / true_edge as f64) } else { None };

    Ok(MetricsReport {
        n_samples: n,
        n_classes,
        accuracy,
        precision,
        recall,
        f1,
        per_class_precision,
        per_class_recall,
        accuracy_vs_random: accuracy / accuracy_random,
        f1_vs_random: if f1_random > 0.0 { f1 / f1_random } else { 0.0 },
        fp_edge,
        fn_edge,
        label_marginals,
    })
}

fn macro_mean(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().cloned().collect();
    if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

/// Evaluates a forecaster on a natural (not rebalanced) test set.
pub fn evaluate(forecaster: &dyn Forecaster, test: &LabeledDataset) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::data("test set is empty"));
    }
    if test.balanced {
        return Err(Error::data("test set must not be rebalanced"));
    }
    let n_classes = test.spec.n_classes;
    let pred: Vec<u8> = (0..test.len())
        .into_par_iter()
        .map(|i| {
            let s = test.sample(i);
            argmax(&forecaster.predict(&s.window_f, &s.window_df, &s.window_y)) as u8
        })
        .collect();
    let truth: Vec<u8> = (0..test.len()).map(|i| test.label(i)).collect();
    metrics_from_labels(&truth, &pred, n_classes)
}

/// Prediction stream aligned to absolute step indices: entry `i` is the
/// prediction made at time `start_t + i`, using only data before that time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub start_t: usize,
    pub n_classes: usize,
    pub classes: Vec<u8>,
    pub probabilities: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_at(&self, t: usize) -> Option<u8> {
        t.checked_sub(self.start_t).and_then(|i| self.classes.get(i)).copied()
    }

    /// One-hot prediction stream from known class indices (perfect-forecast
    /// controls and tests).
    pub fn from_classes(classes: Vec<u8>, start_t: usize, n_classes: usize) -> Self {
        let probabilities = classes
            .iter()
            .map(|&c| {
                let mut p = vec![0.0; n_classes];
                p[c as usize] = 1.0;
                p
            })
            .collect();
        Self { start_t, n_classes, classes, probabilities }
    }
}

/// Causal sliding-window inference over a whole stream. Predictions exist
/// for every t in `[n_past+tau, len]` — the prediction at `t` sees f and δf
/// up to `t-1` and past labels up to `t-τ-1`, so the final entry forecasts
/// one step beyond the observed series.
pub fn predict_stream(
    forecaster: &dyn Forecaster,
    events: &EventSeries,
    spec: &TargetSpec,
    n_past: usize,
) -> Result<Predictions> {
    spec.validate()?;
    let len = events.len();
    let tau = spec.tau;
    if len < n_past + tau {
        return Err(Error::data(format!(
            "series length {len} too short for one window (n_past {n_past} + tau {tau})"
        )));
    }
    let labels = label_series(events, spec)?;
    let scale = 1.0 / (spec.n_classes - 1).max(1) as f64;
    let start_t = n_past + tau;
    let results: Vec<(u8, Vec<f64>)> = (start_t..=len)
        .into_par_iter()
        .map(|t| {
            let f = &events.f[t - n_past..t];
            let df = &events.delta_f[t - n_past..t];
            let y: Vec<f64> =
                labels[t - n_past - tau..t - tau].iter().map(|&l| l as f64 * scale).collect();
            let probs = forecaster.predict(f, df, &y);
            (argmax(&probs) as u8, probs)
        })
        .collect();
    let (classes, probabilities): (Vec<u8>, Vec<Vec<f64>>) = results.into_iter().unzip();
    Ok(Predictions { start_t, n_classes: spec.n_classes, classes, probabilities })
}

/// Compares analytic gradients of a (small) classifier against central
/// finite differences on a batch; returns the max relative error.
pub fn gradient_check(
    config: &ClassifierConfig,
    batch: &[LabeledSample],
    n_classes: usize,
) -> Result<f64> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::data("gradient check needs a nonempty batch"));
    }
    let n_past = batch[0].window_f.len();
    let shape = ConvNetShape {
        in_ch: 3,
        channels: config.channels_per_block,
        blocks: config.conv_blocks,
        kernel: 5,
        in_len: n_past,
        n_classes,
    };
    let net = ConvNet::new(shape);
    if net.n_params() > 10_000 {
        return Err(Error::config(format!(
            "gradient check limited to 10^4 parameters, network has {}",
            net.n_params()
        )));
    }
    let params = net.init_params(config.seed);
    let norm = InputNorm { f_scale: 1.0, df_scale: 1.0 };
    let inputs: Vec<Vec<f64>> =
        batch.iter().map(|s| norm.assemble(&s.window_f, &s.window_df, &s.window_y)).collect();
    let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
    Ok(nn::finite_difference_check(&net, &params, &inputs, &labels, 1e-4))
}
