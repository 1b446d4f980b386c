//! Mini-batch training with backpropagation, evaluation metrics and
//! post-training quantization.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::fixed::{infer_fixed, FixedTensor, FixedWeights};
use crate::fxp::FxpFormat;
use crate::infer::{forward_trace, infer};
use crate::model::{LayerSpec, ModelError, ModelSpec, WeightSet};
use crate::ops;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// The learning rate is multiplied by `lr_decay` every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            lr_decay: 0.5,
            lr_step: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_step == 0 {
            return Err(TrainError::Config(
                "lr decay must be in (0, 1] with a step of at least 1",
            ));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * libm::pow(self.lr_decay, (epoch / self.lr_step) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("dataset needs at least two classes, has {0}")]
    Classes(usize),
    #[error("model has {model} outputs but dataset has {data} classes")]
    ClassMismatch { model: usize, data: usize },
    #[error("dataset frames are {data}x{data}, model expects {model}x{model}")]
    Side { model: usize, data: usize },
    #[error("empty split")]
    EmptySplit,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One training example converted to the training precision.
pub struct Example<T> {
    pub x: Tensor<T>,
    pub label: usize,
}

fn convert<T: Real>(x: &Tensor<f32>) -> Tensor<T> {
    x.map(|v| T::from(v).unwrap())
}

/// Index of the layer whose output is fed to the loss (the last `Dense`).
fn logits_layer(model: &ModelSpec) -> usize {
    model
        .layers()
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
        .expect("validated models end in a dense layer")
}

/// Softmax cross-entropy of one logit vector and its gradient.
fn cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let p = ops::softmax(logits);
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let lse = logits
        .iter()
        .fold(T::zero(), |a, &z| a + (z - max).exp())
        .ln()
        + max;
    let loss = lse - logits[label];
    let mut grad = p;
    grad[label] = grad[label] - T::one();
    (loss, grad)
}

/// Adds the gradient of one example's loss (scaled by `scale`) into `grads`
/// and returns the unscaled loss and the logits.
fn accumulate<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    ex: &Example<T>,
    scale: T,
    grads: &mut WeightSet<T>,
) -> Result<(T, Vec<T>), ModelError> {
    let trace = forward_trace(model, weights, &ex.x)?;
    let top = logits_layer(model);
    let logits = trace[top + 1].data().to_vec();
    let (loss, g) = cross_entropy(&logits, ex.label);
    let mut g = Tensor::vector(g.into_iter().map(|v| v * scale).collect());

    for i in (0..=top).rev() {
        let x = &trace[i];
        let want = i > 0;
        g = match &model.layers()[i] {
            LayerSpec::Conv(c) => {
                let p = weights.layers[i].as_ref().unwrap();
                let gp = grads.layers[i].as_mut().unwrap();
                match ops::conv_backward(x, c, p, &g, gp, want) {
                    Some(gi) => gi,
                    None => break,
                }
            }
            LayerSpec::Dense { .. } => {
                let p = weights.layers[i].as_ref().unwrap();
                let gp = grads.layers[i].as_mut().unwrap();
                match ops::dense_backward(x.data(), p, g.data(), gp, want) {
                    Some(gi) => Tensor::vector(gi),
                    None => break,
                }
            }
            LayerSpec::Relu => ops::relu_backward(x, &g),
            LayerSpec::Pool(p) => ops::pool_backward(x, p, &g),
            LayerSpec::Flatten => g.reshape(x.shape()).unwrap(),
            LayerSpec::Softmax => unreachable!("softmax sits above the logits"),
        };
    }
    Ok((loss, logits))
}

/// Mean softmax cross-entropy over `batch` and its gradient.
pub fn loss_and_grads<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    batch: &[Example<T>],
) -> Result<(T, WeightSet<T>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut grads = WeightSet::zeros(model);
    let scale = T::one() / T::from(batch.len()).unwrap();
    let mut total = T::zero();
    for ex in batch {
        total = total + accumulate(model, weights, ex, scale, &mut grads)?.0;
    }
    Ok((total * scale, grads))
}

/// Mean loss over `batch` without gradients.
pub fn loss<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    batch: &[Example<T>],
) -> Result<T, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let top = logits_layer(model);
    let mut total = T::zero();
    for ex in batch {
        let trace = forward_trace(model, weights, &ex.x)?;
        total = total + cross_entropy(trace[top + 1].data(), ex.label).0;
    }
    Ok(total / T::from(batch.len()).unwrap())
}

/// Optimizer state carried across steps.
pub struct OptState<T> {
    kind: Optimizer,
    m: WeightSet<T>,
    v: WeightSet<T>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl<T: Real> OptState<T> {
    pub fn new(model: &ModelSpec, kind: Optimizer) -> Self {
        OptState {
            kind,
            m: WeightSet::zeros(model),
            v: WeightSet::zeros(model),
            t: 0,
        }
    }

    pub fn step(&mut self, weights: &mut WeightSet<T>, grads: &WeightSet<T>, lr: f64) {
        self.t += 1;
        let lr_t = T::from(lr).unwrap();
        let (b1, b2) = (T::from(BETA1).unwrap(), T::from(BETA2).unwrap());
        let eps = T::from(EPS).unwrap();
        let c1 = T::one() / (T::one() - T::from(libm::pow(BETA1, self.t as f64)).unwrap());
        let c2 = T::one() / (T::one() - T::from(libm::pow(BETA2, self.t as f64)).unwrap());
        let layers = weights
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()));
        for ((w, g), (m, v)) in layers {
            let (Some(w), Some(g), Some(m), Some(v)) = (w, g, m, v) else {
                continue;
            };
            let pairs = [
                (&mut w.weights, &g.weights, &mut m.weights, &mut v.weights),
                (&mut w.bias, &g.bias, &mut m.bias, &mut v.bias),
            ];
            for (w, g, m, v) in pairs {
                match self.kind {
                    Optimizer::Sgd => {
                        for (wv, &gv) in w.iter_mut().zip(g.iter()) {
                            *wv = *wv - lr_t * gv;
                        }
                    }
                    Optimizer::Adam => {
                        for (((wv, &gv), mv), vv) in w
                            .iter_mut()
                            .zip(g.iter())
                            .zip(m.iter_mut())
                            .zip(v.iter_mut())
                        {
                            *mv = b1 * *mv + (T::one() - b1) * gv;
                            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                            *wv = *wv - lr_t * (*mv * c1) / ((*vv * c2).sqrt() + eps);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Fraction of training examples classified correctly while seen.
    pub accuracy: f64,
}

/// Shuffled example order for one epoch; a function of `(seed, epoch)` only.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn check_dataset(model: &ModelSpec, data: &Dataset) -> Result<(), TrainError> {
    if data.classes().len() != model.num_classes() {
        return Err(TrainError::ClassMismatch {
            model: model.num_classes(),
            data: data.classes().len(),
        });
    }
    if data.side() != model.side() {
        return Err(TrainError::Side {
            model: model.side(),
            data: data.side(),
        });
    }
    Ok(())
}

/// Trains from a seeded initialization; see [`fit_from`].
pub fn fit<T: Real>(
    model: &ModelSpec,
    config: &TrainConfig,
    data: &Dataset,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(WeightSet<T>, Vec<EpochLog>), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights = WeightSet::init(model, &mut rng);
    fit_from(model, config, data, weights, on_epoch)
}

/// Mini-batch training starting from `weights`. Bit-reproducible for a fixed
/// seed in a fixed build.
pub fn fit_from<T: Real>(
    model: &ModelSpec,
    config: &TrainConfig,
    data: &Dataset,
    mut weights: WeightSet<T>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(WeightSet<T>, Vec<EpochLog>), TrainError> {
    config.validate()?;
    if data.classes().len() < 2 {
        return Err(TrainError::Classes(data.classes().len()));
    }
    check_dataset(model, data)?;
    if data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    weights.check(model)?;
    let examples: Vec<Example<T>> = data
        .samples()
        .iter()
        .map(|s| Example {
            x: convert(&s.x),
            label: s.label,
        })
        .collect();
    let mut opt = OptState::new(model, config.optimizer);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let order = epoch_permutation(examples.len(), config.seed, epoch);
        let (mut loss_sum, mut batches, mut correct) = (0.0f64, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = WeightSet::zeros(model);
            let scale = T::one() / T::from(chunk.len()).unwrap();
            let mut total = T::zero();
            for &i in chunk {
                let (l, logits) = accumulate(model, &weights, &examples[i], scale, &mut grads)?;
                total = total + l;
                if ops::argmax(&logits) == examples[i].label {
                    correct += 1;
                }
            }
            let batch_loss = (total * scale).to_f64().unwrap();
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            opt.step(&mut weights, &grads, lr);
            loss_sum += batch_loss;
            batches += 1;
        }
        let entry = EpochLog {
            epoch,
            learning_rate: lr,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / examples.len() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok((weights, log))
}

/// Accuracy and confusion matrix (`confusion[true][predicted]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<f64>,
}

impl Metrics {
    pub fn from_predictions(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..classes).map(|i| confusion[i][i]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        Metrics {
            accuracy: if total == 0 {
                0.0
            } else {
                trace as f64 / total as f64
            },
            confusion,
            per_class,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Fixed-point results alongside the float ones.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedMetrics {
    pub format: FxpFormat,
    pub metrics: Metrics,
    /// Fraction of inputs on which float and fixed argmax agree.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub float: Metrics,
    pub fixed: Option<FixedMetrics>,
}

/// Float accuracy on `data`; with `fixed` also the fixed-point accuracy and
/// float/fixed argmax agreement.
pub fn evaluate<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    data: &Dataset,
    fixed: Option<&FixedWeights>,
) -> Result<Evaluation, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    check_dataset(model, data)?;
    let mut float_pairs = Vec::with_capacity(data.len());
    let mut fixed_pairs = Vec::new();
    let mut agree = 0usize;
    for s in data.samples() {
        let pred = infer(model, weights, &convert::<T>(&s.x))?.class;
        float_pairs.push((s.label, pred));
        if let Some(fw) = fixed {
            let xq = FixedTensor::quantize_f32(&s.x, fw.format);
            let fp = infer_fixed(model, fw, &xq).map_err(|e| match e {
                crate::fixed::FixedError::Model(m) => TrainError::Model(m),
                crate::fixed::FixedError::FormatMismatch { .. } => unreachable!(),
            })?;
            fixed_pairs.push((s.label, fp.class));
            agree += (fp.class == pred) as usize;
        }
    }
    let n = model.num_classes();
    Ok(Evaluation {
        float: Metrics::from_predictions(n, float_pairs),
        fixed: fixed.map(|fw| FixedMetrics {
            format: fw.format,
            metrics: Metrics::from_predictions(n, fixed_pairs),
            agreement: agree as f64 / data.len() as f64,
        }),
    })
}

/// Scale chosen for one parameterized layer by [`calibrate_ranges`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerRange {
    pub layer: usize,
    /// Largest |output| of the original layer over the calibration inputs.
    pub max_abs: f64,
    /// Power of two the layer's output is multiplied by after rescaling.
    pub scale: f64,
}

/// Rescales every Conv/Dense layer by a power of two so that, over the
/// calibration inputs, no layer output exceeds `headroom * fmt.max_value()`.
///
/// All layer kinds are positively homogeneous, so the rescaled network
/// computes the original scores times a power of two. Power-of-two products
/// are exact in binary floating point, so float predictions are unchanged
/// bit for bit (barring underflow). Weights are never scaled past the
/// format's range.
pub fn calibrate_ranges<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    calibration: &[Tensor<T>],
    fmt: FxpFormat,
    headroom: f64,
) -> Result<(WeightSet<T>, Vec<LayerRange>), TrainError> {
    weights.check(model)?;
    let n = model.layers().len();
    let mut max_abs = vec![0.0f64; n];
    for x in calibration {
        let trace = forward_trace(model, weights, x)?;
        for (i, m) in max_abs.iter_mut().enumerate() {
            for v in trace[i + 1].data() {
                *m = m.max(v.abs().to_f64().unwrap());
            }
        }
    }
    let target = headroom * fmt.max_value();
    let mut out = weights.clone();
    let mut ranges = Vec::new();
    // Cumulative scale of the activations feeding the current layer.
    let mut cum = 0i32;
    for i in 0..n {
        let Some(p) = out.layers[i].as_mut() else {
            continue;
        };
        let w_max = p
            .weights
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs().to_f64().unwrap()));
        let mut k = if max_abs[i] > 0.0 {
            libm::floor(libm::log2(target / max_abs[i])) as i32
        } else {
            cum
        };
        // Keep the weights themselves representable.
        if w_max > 0.0 {
            let limit = libm::floor(libm::log2(fmt.max_value() / w_max)) as i32;
            k = k.min(cum + limit);
        }
        let alpha = T::from(libm::ldexp(1.0, k - cum)).unwrap();
        let beta = T::from(libm::ldexp(1.0, k)).unwrap();
        p.weights.iter_mut().for_each(|w| *w = *w * alpha);
        p.bias.iter_mut().for_each(|b| *b = *b * beta);
        ranges.push(LayerRange {
            layer: i,
            max_abs: max_abs[i],
            scale: libm::ldexp(1.0, k),
        });
        cum = k;
    }
    Ok((out, ranges))
}

/// Per-layer quantization statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerQuantReport {
    pub layer: usize,
    pub max_abs_error: f64,
    /// Parameters that fell outside the format's range.
    pub saturated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub weights: FixedWeights,
    pub report: Vec<LayerQuantReport>,
}

impl Quantized {
    /// Layers with at least one saturated parameter.
    pub fn saturated_layers(&self) -> Vec<usize> {
        self.report
            .iter()
            .filter(|r| r.saturated > 0)
            .map(|r| r.layer)
            .collect()
    }
}

/// Rounds every weight and bias to `fmt`. Saturation is reported, not
/// treated as an error.
pub fn quantize_weights<T: Real>(weights: &WeightSet<T>, fmt: FxpFormat) -> Quantized {
    let mut report = Vec::new();
    let set = WeightSet {
        layers: weights
            .layers
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.as_ref().map(|p| {
                    let mut r = LayerQuantReport {
                        layer: i,
                        max_abs_error: 0.0,
                        saturated: 0,
                    };
                    let mut q = |v: T| {
                        let x = v.to_f64().unwrap();
                        let raw = fmt.quantize_raw(x);
                        if x > fmt.max_value() || x < fmt.min_value() {
                            r.saturated += 1;
                        }
                        let err = (fmt.dequantize_raw(raw) - x).abs();
                        if err > r.max_abs_error {
                            r.max_abs_error = err;
                        }
                        raw
                    };
                    let out = crate::model::Params {
                        weights: p.weights.iter().map(|&v| q(v)).collect(),
                        bias: p.bias.iter().map(|&v| q(v)).collect(),
                    };
                    report.push(r);
                    out
                })
            })
            .collect(),
    };
    Quantized {
        weights: FixedWeights { format: fmt, set },
        report,
    }
}
