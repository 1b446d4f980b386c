//! Layer descriptions, the architecture grammar and per-layer parameters.
//!
//! Accepted layer sequences follow
//!
//! ```text
//! IN -> [ [Conv -> Relu]^N -> Pool^{0..P} ]^M -> [Dense -> Relu]^K -> Dense
//! ```
//!
//! with `M >= 1` and `K >= 0`. A `Flatten` is inserted before the first
//! `Dense` when the caller did not write one, and a terminal `Softmax` is
//! allowed after the output layer.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::tensor::Shape;
use crate::Real;

/// Number of input channels: one I plane and one Q plane.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Padding {
    /// Output keeps the input size at stride 1; the filter is centred.
    #[default]
    Same,
    /// Every partial overlap produces an output (`n + h - 1` rows at stride 1).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub filters: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn square(filters: usize, size: usize) -> Self {
        ConvSpec {
            filters,
            height: size,
            width: size,
            stride: 1,
            padding: Padding::Same,
        }
    }

    /// Output rows/cols for an `rows x cols` input.
    pub fn output_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        let s = self.stride;
        match self.padding {
            Padding::Full => (
                1 + (rows + self.height - 2) / s,
                1 + (cols + self.width - 2) / s,
            ),
            Padding::Same => (1 + (rows - 1) / s, 1 + (cols - 1) / s),
        }
    }

    /// Offset added to input indices: output (i, j), tap (k, l) reads input
    /// `(s*i - k + off_h, s*j - l + off_w)` (0-based).
    pub fn offsets(&self) -> (usize, usize) {
        match self.padding {
            Padding::Full => (0, 0),
            Padding::Same => ((self.height - 1) / 2, (self.width - 1) / 2),
        }
    }

    pub fn taps(&self, in_channels: usize) -> usize {
        self.height * self.width * in_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub size: usize,
    pub mode: PoolMode,
}

impl PoolSpec {
    pub fn max(size: usize) -> Self {
        PoolSpec {
            size,
            mode: PoolMode::Max,
        }
    }

    /// Windows past the edge are zero padded, so the output is `ceil(n / p)`.
    pub fn output_dims(&self, rows: usize, cols: usize) -> (usize, usize) {
        (rows.div_ceil(self.size), cols.div_ceil(self.size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Dense { units: usize },
    Relu,
    Pool(PoolSpec),
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv(_) => LayerKind::Conv,
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Pool(_) => LayerKind::Pool,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::Softmax => LayerKind::Softmax,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv(_) | LayerSpec::Dense { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Dense,
    Relu,
    Pool,
    Flatten,
    Softmax,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv => "Conv",
            LayerKind::Dense => "Dense",
            LayerKind::Relu => "Relu",
            LayerKind::Pool => "Pool",
            LayerKind::Flatten => "Flatten",
            LayerKind::Softmax => "Softmax",
        };
        f.write_str(s)
    }
}

/// Counts read off an accepted layer sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Pattern {
    /// Largest number of Conv->Relu pairs in one block.
    pub n: usize,
    /// Number of convolution blocks.
    pub m: usize,
    /// Number of hidden Dense->Relu pairs.
    pub k: usize,
    /// Largest number of pooling layers closing one block.
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("layer {position}: {message}")]
    Grammar { position: usize, message: String },
    #[error("layer {position}: invalid hyper-parameter: {message}")]
    Hyper { position: usize, message: String },
    #[error("layer {layer}: expected input {expected}, got {actual}")]
    Shape {
        layer: usize,
        expected: String,
        actual: String,
    },
    #[error("output layer has {units} units but {classes} classes are declared")]
    ClassCount { units: usize, classes: usize },
    #[error("input must be a non-empty square with {INPUT_CHANNELS} channels, got {0}")]
    Input(Shape),
    #[error("architecture string token {index} ({token:?}): {message}")]
    ArchString {
        index: usize,
        token: String,
        message: String,
    },
    #[error("weights for layer {layer}: {message}")]
    Weights { layer: usize, message: String },
}

fn grammar(position: usize, message: impl Into<String>) -> ModelError {
    ModelError::Grammar {
        position,
        message: message.into(),
    }
}

/// Checks a layer list against the architecture grammar and returns its
/// pattern counts. Errors name the first offending position.
pub fn validate_architecture(layers: &[LayerSpec]) -> Result<Pattern, ModelError> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Start,
        AfterConv,
        AfterConvRelu,
        AfterPool,
        AfterFlatten,
        AfterDense,
        AfterHiddenRelu,
        AfterSoftmax,
    }
    use LayerSpec as L;

    let mut pattern = Pattern::default();
    let mut state = State::Start;
    let mut block_convs = 0usize;
    let mut block_pools = 0usize;

    for (pos, layer) in layers.iter().enumerate() {
        check_hyper(pos, layer)?;
        state = match (state, layer) {
            (State::Start, L::Conv(_)) => {
                pattern.m = 1;
                pattern.n = 1;
                block_convs = 1;
                State::AfterConv
            }
            (State::Start, _) => {
                return Err(grammar(
                    pos,
                    format!("expected Conv, found {}", layer.kind()),
                ))
            }
            (State::AfterConv, L::Relu) => State::AfterConvRelu,
            (State::AfterConv, _) => {
                return Err(grammar(
                    pos,
                    format!("Conv must be followed by Relu, found {}", layer.kind()),
                ))
            }
            (State::AfterConvRelu, L::Conv(_)) => {
                block_convs += 1;
                pattern.n = pattern.n.max(block_convs);
                State::AfterConv
            }
            (State::AfterConvRelu | State::AfterPool, L::Pool(_)) => {
                block_pools += 1;
                pattern.p = pattern.p.max(block_pools);
                State::AfterPool
            }
            (State::AfterPool, L::Conv(_)) => {
                pattern.m += 1;
                block_convs = 1;
                block_pools = 0;
                State::AfterConv
            }
            (State::AfterConvRelu | State::AfterPool, L::Flatten) => State::AfterFlatten,
            (State::AfterConvRelu | State::AfterPool | State::AfterFlatten, L::Dense { .. }) => {
                State::AfterDense
            }
            (State::AfterConvRelu | State::AfterPool, _) => {
                return Err(grammar(
                    pos,
                    format!("expected Conv, Pool or Dense, found {}", layer.kind()),
                ))
            }
            (State::AfterFlatten, _) => {
                return Err(grammar(
                    pos,
                    format!("Flatten must be followed by Dense, found {}", layer.kind()),
                ))
            }
            (State::AfterDense, L::Relu) => {
                pattern.k += 1;
                State::AfterHiddenRelu
            }
            (State::AfterDense, L::Softmax) => State::AfterSoftmax,
            (State::AfterDense, _) => {
                return Err(grammar(
                    pos,
                    format!(
                        "Dense must be followed by Relu or end the model, found {}",
                        layer.kind()
                    ),
                ))
            }
            (State::AfterHiddenRelu, L::Dense { .. }) => State::AfterDense,
            (State::AfterHiddenRelu, _) => {
                return Err(grammar(
                    pos,
                    format!("expected Dense after hidden Relu, found {}", layer.kind()),
                ))
            }
            (State::AfterSoftmax, _) => {
                return Err(grammar(pos, "nothing may follow Softmax"));
            }
        };
    }

    match state {
        State::AfterDense | State::AfterSoftmax => Ok(pattern),
        State::Start => Err(grammar(0, "empty architecture")),
        _ => Err(grammar(
            layers.len(),
            "model must end with an output Dense layer",
        )),
    }
}

fn check_hyper(pos: usize, layer: &LayerSpec) -> Result<(), ModelError> {
    let bad = |message: &str| {
        Err(ModelError::Hyper {
            position: pos,
            message: message.to_string(),
        })
    };
    match layer {
        LayerSpec::Conv(c) => {
            if c.filters == 0 {
                return bad("Conv needs at least one filter");
            }
            if c.height == 0 || c.width == 0 {
                return bad("Conv filter must be at least 1x1");
            }
            if c.stride == 0 {
                return bad("Conv stride must be >= 1");
            }
        }
        LayerSpec::Dense { units: 0 } => return bad("Dense needs at least one unit"),
        LayerSpec::Pool(p) if p.size == 0 => return bad("Pool size must be >= 1"),
        _ => {}
    }
    Ok(())
}

/// Inserts a `Flatten` before the first `Dense` unless one is present.
fn with_flatten(layers: &[LayerSpec]) -> Vec<LayerSpec> {
    let mut out = Vec::with_capacity(layers.len() + 1);
    let mut seen_dense = false;
    for (i, layer) in layers.iter().enumerate() {
        if !seen_dense && matches!(layer, LayerSpec::Dense { .. }) {
            seen_dense = true;
            let prev_is_flatten = i > 0 && matches!(layers[i - 1], LayerSpec::Flatten);
            if !prev_is_flatten {
                out.push(LayerSpec::Flatten);
            }
        }
        out.push(*layer);
    }
    out
}

/// A validated network: input geometry, normalized layer list, class table
/// and the propagated tensor shape before and after every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input: Shape,
    layers: Vec<LayerSpec>,
    classes: Vec<String>,
    pattern: Pattern,
    shapes: Vec<Shape>,
}

impl ModelSpec {
    /// Builds a model for `side x side x 2` inputs.
    pub fn new(
        side: usize,
        layers: &[LayerSpec],
        classes: Vec<String>,
    ) -> Result<ModelSpec, ModelError> {
        let input = Shape::new(side, side, INPUT_CHANNELS);
        if side == 0 {
            return Err(ModelError::Input(input));
        }
        let pattern = validate_architecture(layers)?;
        let layers = with_flatten(layers);
        let shapes = propagate(input, &layers)?;
        let out = shapes[shapes.len() - 1];
        if out.len() != classes.len() {
            return Err(ModelError::ClassCount {
                units: out.len(),
                classes: classes.len(),
            });
        }
        Ok(ModelSpec {
            input,
            layers,
            classes,
            pattern,
            shapes,
        })
    }

    /// Parses an architecture string (see [`parse_arch`]) into a model.
    pub fn from_arch(
        side: usize,
        arch: &str,
        classes: Vec<String>,
    ) -> Result<ModelSpec, ModelError> {
        let layers = parse_arch(arch, classes.len())?;
        ModelSpec::new(side, &layers, classes)
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn side(&self) -> usize {
        self.input.rows
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn pattern(&self) -> Pattern {
        self.pattern
    }

    /// Shape entering layer `i`; `layer_input(len)` is the output shape.
    pub fn layer_input(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn layer_output(&self, i: usize) -> Shape {
        self.shapes[i + 1]
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes[self.layers.len()]
    }

    /// `(weight_len, bias_len)` for every layer that carries parameters.
    pub fn param_sizes(&self) -> Vec<Option<(usize, usize)>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let input = self.shapes[i];
                match layer {
                    LayerSpec::Conv(c) => Some((c.filters * c.taps(input.channels), c.filters)),
                    LayerSpec::Dense { units } => Some((units * input.len(), *units)),
                    _ => None,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes()
            .iter()
            .flatten()
            .map(|(w, b)| w + b)
            .sum()
    }

    /// Fan-in used for weight initialization of layer `i`.
    pub fn fan_in(&self, i: usize) -> usize {
        let input = self.shapes[i];
        match &self.layers[i] {
            LayerSpec::Conv(c) => c.taps(input.channels),
            LayerSpec::Dense { .. } => input.len(),
            _ => 0,
        }
    }

    /// Outputs each input value feeds, counted per receptive-field position.
    pub fn fan_out(&self, i: usize) -> usize {
        match &self.layers[i] {
            LayerSpec::Conv(c) => c.filters * c.height * c.width,
            LayerSpec::Dense { units } => *units,
            _ => 0,
        }
    }

    /// Human-readable layer summary, e.g. `conv24x3-pool3-fc16-out`.
    pub fn arch_string(&self) -> String {
        let mut tokens: Vec<String> = Vec::new();
        let last_dense = self
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }));
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv(c) => {
                    let mut t = if c.height == c.width {
                        format!("conv{}x{}", c.filters, c.height)
                    } else {
                        format!("conv{}x{}x{}", c.filters, c.height, c.width)
                    };
                    if c.stride != 1 {
                        t.push_str(&format!("s{}", c.stride));
                    }
                    if c.padding == Padding::Full {
                        t.push_str("full");
                    }
                    tokens.push(t);
                }
                LayerSpec::Pool(p) => tokens.push(match p.mode {
                    PoolMode::Max => format!("pool{}", p.size),
                    PoolMode::Avg => format!("avgpool{}", p.size),
                }),
                LayerSpec::Dense { .. } if Some(i) == last_dense => tokens.push("out".into()),
                LayerSpec::Dense { units } => tokens.push(format!("fc{units}")),
                LayerSpec::Softmax => tokens.push("softmax".into()),
                LayerSpec::Relu | LayerSpec::Flatten => {}
            }
        }
        tokens.join("-")
    }
}

fn propagate(input: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>, ModelError> {
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    let mut cur = input;
    shapes.push(cur);
    for (pos, layer) in layers.iter().enumerate() {
        cur = match layer {
            LayerSpec::Conv(c) => {
                let (r, col) = c.output_dims(cur.rows, cur.cols);
                Shape::new(r, col, c.filters)
            }
            LayerSpec::Pool(p) => {
                let (r, col) = p.output_dims(cur.rows, cur.cols);
                Shape::new(r, col, cur.channels)
            }
            LayerSpec::Dense { units } => {
                if cur.rows != 1 || cur.channels != 1 {
                    return Err(ModelError::Shape {
                        layer: pos,
                        expected: "a flat vector".into(),
                        actual: cur.to_string(),
                    });
                }
                Shape::vector(*units)
            }
            LayerSpec::Flatten => Shape::vector(cur.len()),
            LayerSpec::Relu | LayerSpec::Softmax => cur,
        };
        if cur.is_empty() {
            return Err(ModelError::Shape {
                layer: pos,
                expected: "a non-empty output".into(),
                actual: cur.to_string(),
            });
        }
        shapes.push(cur);
    }
    Ok(shapes)
}

/// Parses the architecture mini-language.
///
/// Tokens are separated by `-`:
///
/// | token | layers |
/// |---|---|
/// | `conv<F>x<K>` / `conv<F>x<H>x<W>` with optional `s<S>` and `full`/`same` | Conv, Relu |
/// | `pool<P>` / `avgpool<P>` | Pool (max / average) |
/// | `fc<U>` | Dense(U), Relu |
/// | `out` | Dense(`classes`) |
/// | `softmax` | Softmax |
///
/// Example: `conv24x3-pool3-fc16-out`.
pub fn parse_arch(arch: &str, classes: usize) -> Result<Vec<LayerSpec>, ModelError> {
    let mut layers = Vec::new();
    let tokens: Vec<&str> = arch.trim().split('-').collect();
    for (index, raw) in tokens.iter().enumerate() {
        let token = raw.trim().to_ascii_lowercase();
        let err = |message: &str| ModelError::ArchString {
            index,
            token: token.clone(),
            message: message.to_string(),
        };
        if let Some(rest) = token.strip_prefix("conv") {
            layers.push(LayerSpec::Conv(parse_conv(rest).map_err(err)?));
            layers.push(LayerSpec::Relu);
        } else if let Some(rest) = token.strip_prefix("avgpool") {
            let size = parse_num(rest).ok_or_else(|| err("expected avgpool<P>"))?;
            layers.push(LayerSpec::Pool(PoolSpec {
                size,
                mode: PoolMode::Avg,
            }));
        } else if let Some(rest) = token.strip_prefix("pool") {
            let size = parse_num(rest).ok_or_else(|| err("expected pool<P>"))?;
            layers.push(LayerSpec::Pool(PoolSpec::max(size)));
        } else if let Some(rest) = token.strip_prefix("fc") {
            let units = parse_num(rest).ok_or_else(|| err("expected fc<units>"))?;
            layers.push(LayerSpec::Dense { units });
            layers.push(LayerSpec::Relu);
        } else if token == "out" {
            layers.push(LayerSpec::Dense { units: classes });
        } else if token == "softmax" {
            layers.push(LayerSpec::Softmax);
        } else {
            return Err(err("unknown token"));
        }
    }
    validate_architecture(&layers).map_err(|e| match e {
        ModelError::Grammar { position, message } => {
            let index = token_of_layer(&tokens, position);
            ModelError::ArchString {
                index,
                token: tokens.get(index).unwrap_or(&"<end>").to_string(),
                message,
            }
        }
        other => other,
    })?;
    Ok(layers)
}

/// Maps a layer position back to the token that produced it.
fn token_of_layer(tokens: &[&str], position: usize) -> usize {
    let mut seen = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.trim().to_ascii_lowercase();
        let width = if t.starts_with("conv") || t.starts_with("fc") {
            2
        } else {
            1
        };
        if position < seen + width {
            return i;
        }
        seen += width;
    }
    tokens.len()
}

fn parse_num(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_conv(rest: &str) -> Result<ConvSpec, &'static str> {
    let mut padding = Padding::Same;
    let mut body = rest;
    if let Some(b) = body.strip_suffix("full") {
        padding = Padding::Full;
        body = b;
    } else if let Some(b) = body.strip_suffix("same") {
        body = b;
    }
    let (dims, stride) = match body.split_once('s') {
        Some((d, s)) => (d, parse_num(s).ok_or("bad stride")?),
        None => (body, 1),
    };
    let parts: Vec<&str> = dims.split('x').collect();
    let nums: Option<Vec<usize>> = parts.iter().map(|p| parse_num(p)).collect();
    let nums = nums.ok_or("expected conv<F>x<K>")?;
    let (filters, height, width) = match nums.as_slice() {
        [f, k] => (*f, *k, *k),
        [f, h, w] => (*f, *h, *w),
        _ => return Err("expected conv<F>x<K> or conv<F>x<H>x<W>"),
    };
    Ok(ConvSpec {
        filters,
        height,
        width,
        stride,
        padding,
    })
}

/// Weights and biases of one Conv or Dense layer.
///
/// Conv weights are laid out `[filter][in_channel][row][col]`; Dense weights
/// are `[unit][input]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameters for every layer of a model (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    pub layers: Vec<Option<Params<T>>>,
}

impl<T: Copy + Default> WeightSet<T> {
    pub fn zeros(model: &ModelSpec) -> Self {
        WeightSet {
            layers: model
                .param_sizes()
                .into_iter()
                .map(|s| {
                    s.map(|(w, b)| Params {
                        weights: vec![T::default(); w],
                        bias: vec![T::default(); b],
                    })
                })
                .collect(),
        }
    }

    /// Checks that every layer's parameter vectors match the model.
    pub fn check(&self, model: &ModelSpec) -> Result<(), ModelError> {
        let sizes = model.param_sizes();
        if sizes.len() != self.layers.len() {
            return Err(ModelError::Weights {
                layer: self.layers.len().min(sizes.len()),
                message: format!(
                    "model has {} layers, weight set has {}",
                    sizes.len(),
                    self.layers.len()
                ),
            });
        }
        for (i, (size, params)) in sizes.iter().zip(&self.layers).enumerate() {
            match (size, params) {
                (None, None) => {}
                (Some((w, b)), Some(p)) => {
                    if p.weights.len() != *w || p.bias.len() != *b {
                        return Err(ModelError::Weights {
                            layer: i,
                            message: format!(
                                "expected {w} weights + {b} biases, got {} + {}",
                                p.weights.len(),
                                p.bias.len()
                            ),
                        });
                    }
                }
                (Some(_), None) => {
                    return Err(ModelError::Weights {
                        layer: i,
                        message: "missing parameters".into(),
                    })
                }
                (None, Some(_)) => {
                    return Err(ModelError::Weights {
                        layer: i,
                        message: "layer takes no parameters".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> WeightSet<U> {
        WeightSet {
            layers: self
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Params {
                        weights: p.weights.iter().map(|&x| f(x)).collect(),
                        bias: p.bias.iter().map(|&x| f(x)).collect(),
                    })
                })
                .collect(),
        }
    }

    /// All parameters flattened in layer order, weights before biases.
    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::new();
        for p in self.layers.iter().flatten() {
            v.extend_from_slice(&p.weights);
            v.extend_from_slice(&p.bias);
        }
        v
    }
}

impl<T: Real> WeightSet<T> {
    /// Glorot-uniform weights, `±sqrt(6 / (fan_in + fan_out))`, and zero biases.
    ///
    /// The narrower fan-in-only range stalls the small modulation models on
    /// their first loss plateau for most of a training run.
    pub fn init<R: Rng>(model: &ModelSpec, rng: &mut R) -> Self {
        let mut ws = WeightSet::zeros(model);
        for (i, p) in ws.layers.iter_mut().enumerate() {
            if let Some(p) = p {
                let fans = model.fan_in(i) + model.fan_out(i);
                let limit = libm::sqrt(6.0 / fans as f64);
                for w in p.weights.iter_mut() {
                    *w = T::from(rng.random_range(-limit..limit)).unwrap();
                }
            }
        }
        ws
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use LayerSpec as L;

    fn conv() -> L {
        L::Conv(ConvSpec::square(4, 3))
    }

    fn pool() -> L {
        L::Pool(PoolSpec::max(3))
    }

    fn dense(units: usize) -> L {
        L::Dense { units }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn table_one_architecture() {
        let layers = [conv(), L::Relu, pool(), dense(16), L::Relu, dense(5)];
        assert_eq!(
            validate_architecture(&layers).unwrap(),
            Pattern {
                n: 1,
                m: 1,
                k: 1,
                p: 1
            }
        );
    }

    #[test]
    fn table_two_architecture() {
        let layers = [
            conv(),
            L::Relu,
            pool(),
            conv(),
            L::Relu,
            pool(),
            dense(16),
            L::Relu,
            dense(8),
            L::Relu,
            dense(5),
        ];
        let p = validate_architecture(&layers).unwrap();
        assert_eq!((p.n, p.m, p.k), (1, 2, 2));
    }

    #[test]
    fn leading_pool_rejected() {
        let err = validate_architecture(&[pool(), conv(), L::Relu, dense(2)]).unwrap_err();
        assert!(matches!(err, ModelError::Grammar { position: 0, .. }));
    }

    #[test]
    fn stacked_convs_count_n() {
        let layers = [conv(), L::Relu, conv(), L::Relu, pool(), pool(), dense(2)];
        assert_eq!(
            validate_architecture(&layers).unwrap(),
            Pattern {
                n: 2,
                m: 1,
                k: 0,
                p: 2
            }
        );
    }

    #[test]
    fn dense_without_relu_between_rejected() {
        let err = validate_architecture(&[conv(), L::Relu, dense(4), dense(2)]).unwrap_err();
        assert!(matches!(err, ModelError::Grammar { position: 3, .. }));
    }

    #[test]
    fn trailing_relu_rejected() {
        let err = validate_architecture(&[conv(), L::Relu, dense(4), L::Relu]).unwrap_err();
        assert!(matches!(err, ModelError::Grammar { position: 4, .. }));
    }

    #[test]
    fn explicit_flatten_and_softmax() {
        let layers = [conv(), L::Relu, L::Flatten, dense(2), L::Softmax];
        assert!(validate_architecture(&layers).is_ok());
        let m = ModelSpec::new(4, &layers, names(2)).unwrap();
        assert_eq!(m.layers().len(), 5);
        assert!(validate_architecture(&[conv(), L::Relu, dense(2), L::Softmax, L::Relu]).is_err());
    }

    #[test]
    fn bad_hyper_parameters() {
        let zero_stride = L::Conv(ConvSpec {
            stride: 0,
            ..ConvSpec::square(2, 3)
        });
        assert!(matches!(
            validate_architecture(&[zero_stride, L::Relu, dense(2)]),
            Err(ModelError::Hyper { position: 0, .. })
        ));
        assert!(matches!(
            validate_architecture(&[conv(), L::Relu, L::Pool(PoolSpec::max(0)), dense(2)]),
            Err(ModelError::Hyper { position: 2, .. })
        ));
    }

    #[test]
    fn model_shapes_propagate() {
        let m = ModelSpec::from_arch(32, "conv24x3-pool3-fc16-out", names(5)).unwrap();
        assert_eq!(m.layer_output(0), Shape::new(32, 32, 24));
        assert_eq!(m.layer_output(2), Shape::new(11, 11, 24));
        assert_eq!(m.layer_output(3), Shape::vector(11 * 11 * 24));
        assert_eq!(m.output_shape(), Shape::vector(5));
        assert_eq!(
            m.pattern(),
            Pattern {
                n: 1,
                m: 1,
                k: 1,
                p: 1
            }
        );
        assert_eq!(m.arch_string(), "conv24x3-pool3-fc16-out");
        let sizes = m.param_sizes();
        assert_eq!(sizes[0], Some((24 * 18, 24)));
        assert_eq!(sizes[4], Some((16 * 2904, 16)));
    }

    #[test]
    fn full_padding_and_stride_dims() {
        let c = ConvSpec {
            filters: 1,
            height: 2,
            width: 3,
            stride: 2,
            padding: Padding::Full,
        };
        assert_eq!(c.output_dims(5, 5), (1 + 5 / 2, 1 + 6 / 2));
        let same = ConvSpec {
            stride: 2,
            ..ConvSpec::square(1, 3)
        };
        assert_eq!(same.output_dims(5, 6), (3, 3));
    }

    #[test]
    fn class_count_checked() {
        assert!(matches!(
            ModelSpec::new(8, &[conv(), L::Relu, dense(3)], names(2)),
            Err(ModelError::ClassCount {
                units: 3,
                classes: 2
            })
        ));
    }

    #[test]
    fn arch_string_parsing() {
        let l = parse_arch("conv8x3s2full-avgpool2-fc4-out", 3).unwrap();
        assert_eq!(
            l[0],
            L::Conv(ConvSpec {
                filters: 8,
                height: 3,
                width: 3,
                stride: 2,
                padding: Padding::Full
            })
        );
        assert_eq!(
            l[2],
            L::Pool(PoolSpec {
                size: 2,
                mode: PoolMode::Avg
            })
        );
        assert_eq!(l[5], L::Dense { units: 3 });
        assert!(parse_arch("conv24x3-pool3-fc16-fc8-out", 5).is_ok());
        assert!(parse_arch("conv4x3x5-out", 2).is_ok());
    }

    #[test]
    fn arch_string_errors_point_at_token() {
        match parse_arch("pool3", 5) {
            Err(ModelError::ArchString { index: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_arch("conv4x3-pool3-fc8", 5) {
            Err(ModelError::ArchString { index: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_arch("conv4x3-bogus-out", 5) {
            Err(ModelError::ArchString { index: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weight_set_check() {
        let m = ModelSpec::from_arch(8, "conv2x3-fc4-out", names(2)).unwrap();
        let mut w = WeightSet::<f32>::zeros(&m);
        assert!(w.check(&m).is_ok());
        w.layers[0].as_mut().unwrap().bias.pop();
        assert!(matches!(
            w.check(&m),
            Err(ModelError::Weights { layer: 0, .. })
        ));
    }
}
