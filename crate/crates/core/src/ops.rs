//! Floating-point layer kernels (forward and backward).
//!
//! Convolution accumulates the taps of every output element in
//! `(channel, k, l)` order starting from zero and adds the bias last, so it
//! is bit-identical to a literal evaluation of the defining double sum.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{ConvSpec, Params, PoolMode, PoolSpec};
use crate::tensor::{Shape, Tensor};
use crate::Real;

/// Input/parameter geometry that does not match what a layer expects.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected {what} {expected}, got {actual}")]
pub struct ShapeError {
    pub what: &'static str,
    pub expected: usize,
    pub actual: usize,
}

fn check(what: &'static str, expected: usize, actual: usize) -> Result<(), ShapeError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ShapeError {
            what,
            expected,
            actual,
        })
    }
}

/// Output indices `i` in `0..out_len` for which `stride * i + off - k`
/// lands inside `0..in_len`.
#[inline]
fn valid_range(
    k: usize,
    off: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    // stride*i + off - k must lie in 0..in_len.
    if in_len + k <= off {
        return (0, 0);
    }
    let lo = if k > off {
        (k - off).div_ceil(stride)
    } else {
        0
    };
    let hi_excl = (in_len + k - off).div_ceil(stride);
    (lo.min(out_len), hi_excl.min(out_len))
}

pub fn conv_forward<T: Real>(
    x: &Tensor<T>,
    conv: &ConvSpec,
    params: &Params<T>,
) -> Result<Tensor<T>, ShapeError> {
    let xs = x.shape();
    check(
        "conv weights",
        conv.filters * conv.taps(xs.channels),
        params.weights.len(),
    )?;
    check("conv biases", conv.filters, params.bias.len())?;
    let mut out = conv_accumulate(
        x.data(),
        xs,
        conv,
        &params.weights,
        T::zero(),
        |acc, q, xv| acc + q * xv,
    );
    let plane = out.shape().plane();
    for (f, y) in out.data_mut().chunks_mut(plane).enumerate() {
        let b = params.bias[f];
        for v in y.iter_mut() {
            *v = *v + b;
        }
    }
    Ok(out)
}

/// Bias-free convolution sums shared by the float and fixed-point paths.
///
/// For every output element the taps are folded into `zero` in
/// `(channel, k, l)` order; taps that read padding are skipped.
pub(crate) fn conv_accumulate<X: Copy, A: Copy + Default>(
    xd: &[X],
    xs: Shape,
    conv: &ConvSpec,
    weights: &[X],
    zero: A,
    mac: impl Fn(A, X, X) -> A,
) -> Tensor<A> {
    let (h, w, s) = (conv.height, conv.width, conv.stride);
    let (orows, ocols) = conv.output_dims(xs.rows, xs.cols);
    let (oh, ow) = conv.offsets();
    let plane = orows * ocols;
    let col_ranges: Vec<(usize, usize)> = (0..w)
        .map(|l| valid_range(l, ow, s, xs.cols, ocols))
        .collect();
    let mut out = Tensor::from_vec(
        Shape::new(orows, ocols, conv.filters),
        vec![zero; plane * conv.filters],
    )
    .unwrap();

    let od = out.data_mut();
    for f in 0..conv.filters {
        let y = &mut od[f * plane..(f + 1) * plane];
        for c in 0..xs.channels {
            let xplane = &xd[c * xs.plane()..(c + 1) * xs.plane()];
            let qbase = (f * xs.channels + c) * h * w;
            for k in 0..h {
                let (i0, i1) = valid_range(k, oh, s, xs.rows, orows);
                for l in 0..w {
                    let q = weights[qbase + (h - 1 - k) * w + (w - 1 - l)];
                    let (j0, j1) = col_ranges[l];
                    if j0 >= j1 {
                        continue;
                    }
                    for i in i0..i1 {
                        let xr = s * i + oh - k;
                        let xrow = &xplane[xr * xs.cols..(xr + 1) * xs.cols];
                        let yrow = &mut y[i * ocols..(i + 1) * ocols];
                        if s == 1 {
                            let xs_ = &xrow[j0 + ow - l..j1 + ow - l];
                            for (yv, &xv) in yrow[j0..j1].iter_mut().zip(xs_) {
                                *yv = mac(*yv, q, xv);
                            }
                        } else {
                            for j in j0..j1 {
                                yrow[j] = mac(yrow[j], q, xrow[s * j + ow - l]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of a convolution. `grad_in` is skipped when `want_input` is
/// false (first layer).
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    conv: &ConvSpec,
    params: &Params<T>,
    grad_out: &Tensor<T>,
    grad_params: &mut Params<T>,
    want_input: bool,
) -> Option<Tensor<T>> {
    let xs = x.shape();
    let (h, w, s) = (conv.height, conv.width, conv.stride);
    let gs = grad_out.shape();
    let (orows, ocols) = (gs.rows, gs.cols);
    let (oh, ow) = conv.offsets();
    let plane = orows * ocols;
    let xd = x.data();
    let gd = grad_out.data();
    let mut grad_in = want_input.then(|| Tensor::<T>::zeros(xs));
    let col_ranges: Vec<(usize, usize)> = (0..w)
        .map(|l| valid_range(l, ow, s, xs.cols, ocols))
        .collect();

    for f in 0..conv.filters {
        let g = &gd[f * plane..(f + 1) * plane];
        let mut bsum = T::zero();
        for &v in g {
            bsum = bsum + v;
        }
        grad_params.bias[f] = grad_params.bias[f] + bsum;
        for c in 0..xs.channels {
            let xplane = &xd[c * xs.plane()..(c + 1) * xs.plane()];
            let qbase = (f * xs.channels + c) * h * w;
            for k in 0..h {
                let (i0, i1) = valid_range(k, oh, s, xs.rows, orows);
                for l in 0..w {
                    let (j0, j1) = col_ranges[l];
                    if j0 >= j1 || i0 >= i1 {
                        continue;
                    }
                    let qi = qbase + (h - 1 - k) * w + (w - 1 - l);
                    let q = params.weights[qi];
                    let mut acc = T::zero();
                    for i in i0..i1 {
                        let xr = s * i + oh - k;
                        let xrow = &xplane[xr * xs.cols..(xr + 1) * xs.cols];
                        let grow = &g[i * ocols..(i + 1) * ocols];
                        if s == 1 {
                            for (&gv, &xv) in
                                grow[j0..j1].iter().zip(&xrow[j0 + ow - l..j1 + ow - l])
                            {
                                acc = acc + gv * xv;
                            }
                        } else {
                            for j in j0..j1 {
                                acc = acc + grow[j] * xrow[s * j + ow - l];
                            }
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let gid = gi.data_mut();
                            let base = c * xs.plane() + xr * xs.cols;
                            for j in j0..j1 {
                                let idx = base + s * j + ow - l;
                                gid[idx] = gid[idx] + grow[j] * q;
                            }
                        }
                    }
                    grad_params.weights[qi] = grad_params.weights[qi] + acc;
                }
            }
        }
    }
    grad_in
}

/// `W r + b`, optionally followed by a ReLU.
pub fn dense_forward<T: Real>(
    r: &[T],
    units: usize,
    params: &Params<T>,
    relu: bool,
) -> Result<Vec<T>, ShapeError> {
    check("dense biases", units, params.bias.len())?;
    check("dense weights", units * r.len(), params.weights.len())?;
    let fan_in = r.len();
    Ok((0..units)
        .map(|u| {
            let row = &params.weights[u * fan_in..(u + 1) * fan_in];
            let mut acc = T::zero();
            for (&wv, &xv) in row.iter().zip(r) {
                acc = acc + wv * xv;
            }
            let v = acc + params.bias[u];
            if relu && v < T::zero() {
                T::zero()
            } else {
                v
            }
        })
        .collect())
}

/// Gradients of a linear dense layer; returns the gradient w.r.t. `r` when
/// requested.
pub fn dense_backward<T: Real>(
    r: &[T],
    params: &Params<T>,
    grad_out: &[T],
    grad_params: &mut Params<T>,
    want_input: bool,
) -> Option<Vec<T>> {
    let fan_in = r.len();
    let mut grad_in = want_input.then(|| vec![T::zero(); fan_in]);
    for (u, &g) in grad_out.iter().enumerate() {
        grad_params.bias[u] = grad_params.bias[u] + g;
        if g == T::zero() {
            continue;
        }
        let gw = &mut grad_params.weights[u * fan_in..(u + 1) * fan_in];
        for (gwv, &xv) in gw.iter_mut().zip(r) {
            *gwv = *gwv + g * xv;
        }
        if let Some(gi) = grad_in.as_mut() {
            let row = &params.weights[u * fan_in..(u + 1) * fan_in];
            for (giv, &wv) in gi.iter_mut().zip(row) {
                *giv = *giv + g * wv;
            }
        }
    }
    grad_in
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

/// Non-overlapping `p x p` pooling. Windows hanging over the bottom/right
/// edge read zeros there.
pub fn pool_forward<T: Real>(x: &Tensor<T>, pool: &PoolSpec) -> Tensor<T> {
    let xs = x.shape();
    let p = pool.size;
    let (orows, ocols) = pool.output_dims(xs.rows, xs.cols);
    let mut out = Tensor::zeros(Shape::new(orows, ocols, xs.channels));
    let norm = T::from(p * p).unwrap();
    for c in 0..xs.channels {
        for oi in 0..orows {
            for oj in 0..ocols {
                let v = match pool.mode {
                    PoolMode::Max => window_argmax(x, c, oi, oj, p).1,
                    PoolMode::Avg => {
                        let mut acc = T::zero();
                        for i in oi * p..((oi + 1) * p).min(xs.rows) {
                            for j in oj * p..((oj + 1) * p).min(xs.cols) {
                                acc = acc + x.get(c, i, j);
                            }
                        }
                        acc / norm
                    }
                };
                out.set(c, oi, oj, v);
            }
        }
    }
    out
}

/// First maximal position of a pooling window in row-major order, counting
/// padded cells as zeros. `None` when the maximum is a padded cell.
fn window_argmax<T: Real>(
    x: &Tensor<T>,
    c: usize,
    oi: usize,
    oj: usize,
    p: usize,
) -> (Option<(usize, usize)>, T) {
    let xs = x.shape();
    let mut best: Option<(Option<(usize, usize)>, T)> = None;
    for i in oi * p..(oi + 1) * p {
        for j in oj * p..(oj + 1) * p {
            let (pos, v) = if i < xs.rows && j < xs.cols {
                (Some((i, j)), x.get(c, i, j))
            } else {
                (None, T::zero())
            };
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((pos, v)),
            }
        }
    }
    best.unwrap()
}

pub fn pool_backward<T: Real>(x: &Tensor<T>, pool: &PoolSpec, grad_out: &Tensor<T>) -> Tensor<T> {
    let xs = x.shape();
    let p = pool.size;
    let gs = grad_out.shape();
    let mut grad_in = Tensor::zeros(xs);
    let norm = T::from(p * p).unwrap();
    for c in 0..xs.channels {
        for oi in 0..gs.rows {
            for oj in 0..gs.cols {
                let g = grad_out.get(c, oi, oj);
                match pool.mode {
                    PoolMode::Max => {
                        if let (Some((i, j)), _) = window_argmax(x, c, oi, oj, p) {
                            let cur = grad_in.get(c, i, j);
                            grad_in.set(c, i, j, cur + g);
                        }
                    }
                    PoolMode::Avg => {
                        for i in oi * p..((oi + 1) * p).min(xs.rows) {
                            for j in oj * p..((oj + 1) * p).min(xs.cols) {
                                let cur = grad_in.get(c, i, j);
                                grad_in.set(c, i, j, cur + g / norm);
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(scores: &[T]) -> Vec<T> {
    let max = scores
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Padding;
    use alloc::vec;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(rows, cols, 1), data.to_vec()).unwrap()
    }

    #[test]
    fn full_conv_shifts_input() {
        // Only Q[1,1] (1-based) is set, i.e. the flipped tap k = h-1, l = w-1.
        let x = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let conv = ConvSpec {
            filters: 1,
            height: 2,
            width: 2,
            stride: 1,
            padding: Padding::Full,
        };
        let params = Params {
            weights: vec![1.0, 0.0, 0.0, 0.0],
            bias: vec![0.0],
        };
        let y = conv_forward(&x, &conv, &params).unwrap();
        assert_eq!(y.shape(), Shape::new(3, 3, 1));
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn identity_filter_same_padding() {
        let x = t2(3, 3, &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0, 7.0, 8.0, 9.0]);
        let conv = ConvSpec::square(1, 1);
        let params = Params {
            weights: vec![1.0],
            bias: vec![0.0],
        };
        assert_eq!(conv_forward(&x, &conv, &params).unwrap(), x);
    }

    #[test]
    fn zero_input_zero_output() {
        let x = Tensor::<f64>::zeros(Shape::new(4, 4, 2));
        let conv = ConvSpec::square(3, 3);
        let params = Params {
            weights: vec![0.7; 3 * 18],
            bias: vec![0.0; 3],
        };
        let y = conv_forward(&x, &conv, &params).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_bad_weights() {
        let x = Tensor::<f64>::zeros(Shape::new(4, 4, 2));
        let params = Params {
            weights: vec![0.0; 5],
            bias: vec![0.0],
        };
        let err = conv_forward(&x, &ConvSpec::square(1, 3), &params).unwrap_err();
        assert_eq!(err.expected, 18);
        assert_eq!(err.actual, 5);
    }

    #[test]
    fn dense_examples() {
        let p = Params {
            weights: vec![1.0, 2.0, 3.0, 4.0],
            bias: vec![0.0, 1.0],
        };
        assert_eq!(
            dense_forward(&[1.0, 1.0], 2, &p, true).unwrap(),
            vec![3.0, 8.0]
        );
        let neg = Params {
            weights: vec![-1.0],
            bias: vec![0.0],
        };
        assert_eq!(dense_forward(&[5.0], 1, &neg, true).unwrap(), vec![0.0]);
        assert_eq!(dense_forward(&[5.0], 1, &neg, false).unwrap(), vec![-5.0]);
        let id = Params {
            weights: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
        };
        assert_eq!(
            dense_forward(&[0.3, -0.2], 2, &id, false).unwrap(),
            vec![0.3, -0.2]
        );
        assert!(dense_forward(&[1.0], 2, &id, false).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::vector(vec![-1.0f64, -3.0]);
        assert_eq!(relu_forward(&neg).data(), &[0.0, 0.0]);
    }

    #[test]
    fn pool_examples() {
        let x = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(pool_forward(&x, &PoolSpec::max(2)).data(), &[4.0]);
        assert_eq!(pool_forward(&x, &PoolSpec::max(1)), x);
        let avg = PoolSpec {
            size: 2,
            mode: PoolMode::Avg,
        };
        assert_eq!(pool_forward(&x, &avg).data(), &[2.5]);
    }

    #[test]
    fn pool_pads_with_zeros() {
        let x = t2(3, 3, &[-1.0, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0, -8.0, 9.0]);
        let y = pool_forward(&x, &PoolSpec::max(2));
        assert_eq!(y.shape(), Shape::new(2, 2, 1));
        assert_eq!(y.data(), &[-1.0, 0.0, 0.0, 9.0]);
        let g = pool_backward(
            &x,
            &PoolSpec::max(2),
            &Tensor::from_vec(y.shape(), vec![1.0; 4]).unwrap(),
        );
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f64, 2.0, 3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[2] > p[1] && p[1] > p[0]);
    }
}
