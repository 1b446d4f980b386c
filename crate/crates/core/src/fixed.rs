//! Fixed-point inference.
//!
//! Every layer reads raw words from its input buffer, multiplies and
//! accumulates at full precision in a wide integer, and rounds once (to
//! nearest even, saturating) when writing its output buffer. The result
//! depends only on integer arithmetic, so it is identical on every platform.

use alloc::vec::Vec;

use crate::fxp::FxpFormat;
use crate::infer::{check_input, Prediction};
use crate::model::{LayerSpec, ModelError, ModelSpec, Params, PoolMode, WeightSet};
use crate::ops::{argmax, conv_accumulate};
use crate::tensor::{Shape, Tensor};

/// Raw words of a [`WeightSet`] together with their format.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedWeights {
    pub format: FxpFormat,
    pub set: WeightSet<i32>,
}

/// A tensor of raw words in `format`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTensor {
    pub format: FxpFormat,
    pub data: Tensor<i32>,
}

impl FixedTensor {
    pub fn quantize(x: &Tensor<f64>, format: FxpFormat) -> Self {
        FixedTensor {
            format,
            data: x.map(|v| format.quantize_raw(v)),
        }
    }

    pub fn quantize_f32(x: &Tensor<f32>, format: FxpFormat) -> Self {
        FixedTensor {
            format,
            data: x.map(|v| format.quantize_raw(v as f64)),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.data.map(|r| self.format.dequantize_raw(r))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixedError {
    #[error("input is {input} but weights are {weights}")]
    FormatMismatch {
        input: FxpFormat,
        weights: FxpFormat,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Wide accumulator; `i64` whenever a sum cannot overflow it.
trait Acc: Copy + Default + core::ops::Add<Output = Self> + core::ops::Mul<Output = Self> {
    fn from_raw(v: i32) -> Self;
    fn widen(self) -> i128;
}

impl Acc for i64 {
    fn from_raw(v: i32) -> Self {
        v as i64
    }
    fn widen(self) -> i128 {
        self as i128
    }
}

impl Acc for i128 {
    fn from_raw(v: i32) -> Self {
        v as i128
    }
    fn widen(self) -> i128 {
        self
    }
}

/// True when `terms` products of two `bits`-wide words plus a bias fit in i64.
fn fits_i64(bits: u32, terms: usize) -> bool {
    let log_terms = usize::BITS - terms.leading_zeros();
    2 * bits + log_terms + 1 < 63
}

fn conv_layer<A: Acc>(
    x: &Tensor<i32>,
    conv: &crate::model::ConvSpec,
    p: &Params<i32>,
    fmt: FxpFormat,
) -> Tensor<i32> {
    let frac = fmt.frac_bits();
    let acc = conv_accumulate(
        x.data(),
        x.shape(),
        conv,
        &p.weights,
        A::default(),
        |a, q, xv| a + A::from_raw(q) * A::from_raw(xv),
    );
    let plane = acc.shape().plane();
    let data = acc
        .data()
        .chunks(plane)
        .enumerate()
        .flat_map(|(f, y)| {
            let b = (p.bias[f] as i128) << frac;
            y.iter().map(move |&v| fmt.rescale(v.widen() + b, 2 * frac))
        })
        .collect();
    Tensor::from_vec(acc.shape(), data).unwrap()
}

fn dense_layer<A: Acc>(r: &[i32], units: usize, p: &Params<i32>, fmt: FxpFormat) -> Vec<i32> {
    let frac = fmt.frac_bits();
    let fan_in = r.len();
    (0..units)
        .map(|u| {
            let row = &p.weights[u * fan_in..(u + 1) * fan_in];
            let mut acc = A::default();
            for (&w, &x) in row.iter().zip(r) {
                acc = acc + A::from_raw(w) * A::from_raw(x);
            }
            fmt.rescale(acc.widen() + ((p.bias[u] as i128) << frac), 2 * frac)
        })
        .collect()
}

/// `round(num / den)` with ties to even, `den > 0`.
fn div_rne(num: i64, den: i64) -> i64 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        core::cmp::Ordering::Greater => q + 1,
        core::cmp::Ordering::Equal if q & 1 == 1 => q + 1,
        _ => q,
    }
}

fn pool_layer(x: &Tensor<i32>, size: usize, mode: PoolMode) -> Tensor<i32> {
    let xs = x.shape();
    let orows = xs.rows.div_ceil(size);
    let ocols = xs.cols.div_ceil(size);
    let mut out = Tensor::zeros(Shape::new(orows, ocols, xs.channels));
    for c in 0..xs.channels {
        for oi in 0..orows {
            for oj in 0..ocols {
                let mut best: Option<i32> = None;
                let mut sum = 0i64;
                for i in oi * size..(oi + 1) * size {
                    for j in oj * size..(oj + 1) * size {
                        let v = if i < xs.rows && j < xs.cols {
                            x.get(c, i, j)
                        } else {
                            0
                        };
                        sum += v as i64;
                        best = Some(best.map_or(v, |b| b.max(v)));
                    }
                }
                let v = match mode {
                    PoolMode::Max => best.unwrap(),
                    // A mean of in-range words is itself in range.
                    PoolMode::Avg => div_rne(sum, (size * size) as i64) as i32,
                };
                out.set(c, oi, oj, v);
            }
        }
    }
    out
}

fn apply<A: Acc>(
    layer: &LayerSpec,
    p: Option<&Params<i32>>,
    x: &Tensor<i32>,
    fmt: FxpFormat,
) -> Tensor<i32> {
    match layer {
        LayerSpec::Conv(c) => conv_layer::<A>(x, c, p.unwrap(), fmt),
        LayerSpec::Dense { units } => {
            Tensor::vector(dense_layer::<A>(x.data(), *units, p.unwrap(), fmt))
        }
        LayerSpec::Relu => x.map(|v| v.max(0)),
        LayerSpec::Pool(ps) => pool_layer(x, ps.size, ps.mode),
        LayerSpec::Flatten => x.clone().flatten(),
        // Monotone; skipping it leaves the argmax unchanged and keeps the
        // scores in the weight format.
        LayerSpec::Softmax => x.clone(),
    }
}

/// Largest number of products summed into one accumulator.
fn max_terms(model: &ModelSpec) -> usize {
    (0..model.layers().len())
        .filter(|&i| model.layers()[i].has_params())
        .map(|i| model.fan_in(i))
        .max()
        .unwrap_or(1)
}

/// Fixed-point forward pass returning every intermediate buffer.
pub fn fixed_trace(
    model: &ModelSpec,
    weights: &FixedWeights,
    x: &FixedTensor,
) -> Result<Vec<Tensor<i32>>, FixedError> {
    if x.format != weights.format {
        return Err(FixedError::FormatMismatch {
            input: x.format,
            weights: weights.format,
        });
    }
    check_input(model, x.data.shape())?;
    weights.set.check(model)?;
    let fmt = weights.format;
    let wide = !fits_i64(fmt.total_bits(), max_terms(model));
    let mut trace = Vec::with_capacity(model.layers().len() + 1);
    trace.push(x.data.clone());
    for (i, layer) in model.layers().iter().enumerate() {
        let p = weights.set.layers[i].as_ref();
        let y = if wide {
            apply::<i128>(layer, p, &trace[i], fmt)
        } else {
            apply::<i64>(layer, p, &trace[i], fmt)
        };
        trace.push(y);
    }
    Ok(trace)
}

/// Runs the model in fixed point. Scores are raw words in the weight format.
pub fn infer_fixed(
    model: &ModelSpec,
    weights: &FixedWeights,
    x: &FixedTensor,
) -> Result<Prediction<i32>, FixedError> {
    let scores = fixed_trace(model, weights, x)?.pop().unwrap().into_data();
    Ok(Prediction {
        class: argmax(&scores),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::infer;
    use crate::model::{ConvSpec, LayerSpec as L, PoolSpec};
    use alloc::string::String;
    use alloc::vec;
    use rand::{Rng, SeedableRng};

    fn model() -> ModelSpec {
        let names: Vec<String> = (0..3).map(|i| alloc::format!("c{i}")).collect();
        ModelSpec::new(
            8,
            &[
                L::Conv(ConvSpec::square(4, 3)),
                L::Relu,
                L::Pool(PoolSpec::max(3)),
                L::Dense { units: 6 },
                L::Relu,
                L::Dense { units: 3 },
            ],
            names,
        )
        .unwrap()
    }

    fn quantize_set(w: &WeightSet<f64>, fmt: FxpFormat) -> FixedWeights {
        FixedWeights {
            format: fmt,
            set: w.map(|v| fmt.quantize_raw(v)),
        }
    }

    #[test]
    fn zero_input_zero_scores() {
        let m = model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut w = WeightSet::<f64>::init(&m, &mut rng);
        for p in w.layers.iter_mut().flatten() {
            p.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let fw = quantize_set(&w, FxpFormat::Q2_14);
        let x = FixedTensor::quantize(&Tensor::zeros(m.input_shape()), FxpFormat::Q2_14);
        assert_eq!(infer_fixed(&m, &fw, &x).unwrap().scores, vec![0; 3]);
    }

    #[test]
    fn tracks_float_on_grid_values() {
        let m = model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let fmt = FxpFormat::Q2_14;
        let w = WeightSet::<f64>::init(&m, &mut rng)
            .map(|v| fmt.dequantize_raw(fmt.quantize_raw(v * 0.5)));
        let fw = quantize_set(&w, fmt);
        for _ in 0..20 {
            let x = Tensor::from_vec(
                m.input_shape(),
                (0..128)
                    .map(|_| fmt.dequantize_raw(fmt.quantize_raw(rng.random_range(-1.0..1.0))))
                    .collect(),
            )
            .unwrap();
            let float = infer(&m, &w, &x).unwrap();
            let fixed = infer_fixed(&m, &fw, &FixedTensor::quantize(&x, fmt)).unwrap();
            for (a, &b) in float.scores.iter().zip(&fixed.scores) {
                // three roundings of at most half an LSB each, amplified by
                // the downstream weights
                assert!((a - fmt.dequantize_raw(b)).abs() < 2e-3, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn format_mismatch_rejected() {
        let m = model();
        let fw = FixedWeights {
            format: FxpFormat::Q2_14,
            set: WeightSet::zeros(&m),
        };
        let other = FxpFormat::new(16, 12).unwrap();
        let x = FixedTensor::quantize(&Tensor::zeros(m.input_shape()), other);
        assert!(matches!(
            infer_fixed(&m, &fw, &x),
            Err(FixedError::FormatMismatch { .. })
        ));
    }

    #[test]
    fn wide_accumulator_agrees_with_narrow() {
        let m = model();
        let fmt = FxpFormat::Q2_14;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let w = quantize_set(&WeightSet::<f64>::init(&m, &mut rng), fmt);
        let x = FixedTensor::quantize(
            &Tensor::from_vec(
                m.input_shape(),
                (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            fmt,
        );
        let mut a = x.data.clone();
        let mut b = x.data.clone();
        for (i, layer) in m.layers().iter().enumerate() {
            let p = w.set.layers[i].as_ref();
            a = apply::<i64>(layer, p, &a, fmt);
            b = apply::<i128>(layer, p, &b, fmt);
        }
        assert_eq!(a, b);
    }

    #[test]
    fn rne_division() {
        assert_eq!(div_rne(9, 9), 1);
        assert_eq!(div_rne(5, 2), 2);
        assert_eq!(div_rne(7, 2), 4);
        assert_eq!(div_rne(-5, 2), -2);
        assert_eq!(div_rne(-7, 2), -4);
        assert_eq!(div_rne(-4, 9), 0);
        assert_eq!(div_rne(-5, 9), -1);
    }

    #[test]
    fn accumulator_width_choice() {
        assert!(fits_i64(16, 3000));
        assert!(!fits_i64(32, 2));
    }
}
