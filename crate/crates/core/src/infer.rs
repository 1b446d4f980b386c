//! Floating-point forward pass: a left fold of the layer functions.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::model::{LayerSpec, ModelError, ModelSpec, Params, WeightSet};
use crate::ops;
use crate::tensor::{Shape, Tensor};
use crate::Real;

/// Final-layer scores and the winning class (lowest index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub class: usize,
    pub scores: Vec<T>,
}

impl<T: PartialOrd + Copy> Prediction<T> {
    pub fn new(scores: Vec<T>) -> Self {
        Prediction {
            class: ops::argmax(&scores),
            scores,
        }
    }
}

fn shape_err(layer: usize, e: ops::ShapeError) -> ModelError {
    ModelError::Weights {
        layer,
        message: alloc::format!("{e}"),
    }
}

fn params<T>(weights: &WeightSet<T>, i: usize) -> Result<&Params<T>, ModelError> {
    weights
        .layers
        .get(i)
        .and_then(Option::as_ref)
        .ok_or_else(|| ModelError::Weights {
            layer: i,
            message: "missing parameters".into(),
        })
}

/// Applies layer `i` of `model` to `x`.
pub fn apply_layer<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    i: usize,
    x: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let expected = model.layer_input(i);
    if x.shape() != expected {
        return Err(ModelError::Shape {
            layer: i,
            expected: expected.to_string(),
            actual: x.shape().to_string(),
        });
    }
    Ok(match &model.layers()[i] {
        LayerSpec::Conv(c) => {
            ops::conv_forward(x, c, params(weights, i)?).map_err(|e| shape_err(i, e))?
        }
        LayerSpec::Dense { units } => Tensor::vector(
            ops::dense_forward(x.data(), *units, params(weights, i)?, false)
                .map_err(|e| shape_err(i, e))?,
        ),
        LayerSpec::Relu => ops::relu_forward(x),
        LayerSpec::Pool(p) => ops::pool_forward(x, p),
        LayerSpec::Flatten => x.clone().flatten(),
        LayerSpec::Softmax => Tensor::vector(ops::softmax(x.data())),
    })
}

/// Every intermediate value: `trace[0]` is the input and `trace[i + 1]` the
/// output of layer `i`.
pub fn forward_trace<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    x: &Tensor<T>,
) -> Result<Vec<Tensor<T>>, ModelError> {
    check_input(model, x.shape())?;
    weights.check(model)?;
    let mut trace = Vec::with_capacity(model.layers().len() + 1);
    trace.push(x.clone());
    for i in 0..model.layers().len() {
        let y = apply_layer(model, weights, i, &trace[i])?;
        trace.push(y);
    }
    Ok(trace)
}

pub(crate) fn check_input(model: &ModelSpec, shape: Shape) -> Result<(), ModelError> {
    if shape != model.input_shape() {
        return Err(ModelError::Input(shape));
    }
    Ok(())
}

/// Runs the model on one input. Scores are those of the last layer, so a
/// terminal `Softmax` yields probabilities.
pub fn infer<T: Real>(
    model: &ModelSpec,
    weights: &WeightSet<T>,
    x: &Tensor<T>,
) -> Result<Prediction<T>, ModelError> {
    check_input(model, x.shape())?;
    weights.check(model)?;
    let mut r = x.clone();
    for i in 0..model.layers().len() {
        r = apply_layer(model, weights, i, &r)?;
    }
    Ok(Prediction::new(r.into_data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvSpec, LayerSpec as L, PoolSpec};
    use alloc::string::String;
    use alloc::vec;
    use rand::SeedableRng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| alloc::format!("c{i}")).collect()
    }

    fn small() -> ModelSpec {
        ModelSpec::new(
            6,
            &[
                L::Conv(ConvSpec::square(3, 3)),
                L::Relu,
                L::Pool(PoolSpec::max(2)),
                L::Dense { units: 5 },
                L::Relu,
                L::Dense { units: 4 },
            ],
            names(4),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_scores_and_lowest_class() {
        let m = small();
        let w = WeightSet::<f64>::zeros(&m);
        let x = Tensor::from_vec(m.input_shape(), vec![0.5; 72]).unwrap();
        let p = infer(&m, &w, &x).unwrap();
        assert_eq!(p.scores, vec![0.0; 4]);
        assert_eq!(p.class, 0);
    }

    #[test]
    fn infer_equals_manual_fold() {
        let m = small();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = WeightSet::<f64>::init(&m, &mut rng);
        let x = Tensor::from_vec(
            m.input_shape(),
            (0..72).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let mut r = x.clone();
        for (i, layer) in m.layers().iter().enumerate() {
            r = match layer {
                L::Conv(c) => ops::conv_forward(&r, c, w.layers[i].as_ref().unwrap()).unwrap(),
                L::Relu => ops::relu_forward(&r),
                L::Pool(p) => ops::pool_forward(&r, p),
                L::Flatten => r.flatten(),
                L::Dense { units } => Tensor::vector(
                    ops::dense_forward(r.data(), *units, w.layers[i].as_ref().unwrap(), false)
                        .unwrap(),
                ),
                L::Softmax => unreachable!(),
            };
        }
        assert_eq!(infer(&m, &w, &x).unwrap().scores, r.into_data());
    }

    #[test]
    fn identity_dense_model_returns_input() {
        // A single linear layer still needs one conv block ahead of it, so
        // use a 1x1 identity conv on a 1x1 input.
        let m = ModelSpec::new(
            1,
            &[
                L::Conv(ConvSpec::square(2, 1)),
                L::Relu,
                L::Dense { units: 2 },
            ],
            names(2),
        )
        .unwrap();
        let mut w = WeightSet::<f64>::zeros(&m);
        w.layers[0].as_mut().unwrap().weights = vec![1.0, 0.0, 0.0, 1.0];
        let dense = m
            .layers()
            .iter()
            .position(|l| matches!(l, L::Dense { .. }))
            .unwrap();
        w.layers[dense].as_mut().unwrap().weights = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor::from_vec(m.input_shape(), vec![0.25, 0.75]).unwrap();
        assert_eq!(infer(&m, &w, &x).unwrap().scores, vec![0.25, 0.75]);
    }

    #[test]
    fn wrong_input_shape_is_reported() {
        let m = small();
        let w = WeightSet::<f64>::zeros(&m);
        let x = Tensor::zeros(Shape::new(5, 5, 2));
        assert!(matches!(infer(&m, &w, &x), Err(ModelError::Input(_))));
    }
}
