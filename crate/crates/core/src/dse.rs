//! HLS-style design-space exploration: lowering a model to loop nests,
//! scheduling them (sequential, pipelined, unrolled) and estimating
//! latency, FPGA resources and energy.
//!
//! Layers communicate through BRAM buffers, so a layer starts only after
//! its predecessor has finished; the total latency is the sum of the layer
//! latencies plus a fixed handoff per layer boundary.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::fxp::FxpFormat;
use crate::model::{LayerSpec, ModelSpec, PoolMode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DseError {
    #[error("layer {layer} has no loop named `{name}`")]
    UnknownLoop { layer: usize, name: String },
    #[error("schedule refers to layer {0}, which has no loop nest")]
    UnknownLayer(usize),
    #[error("layer {0}: at most one loop per nest may be pipelined")]
    MultiplePipelines(usize),
    #[error("layer {layer}, loop `{name}`: {message}")]
    Directive {
        layer: usize,
        name: String,
        message: String,
    },
    #[error("bad schedule `{0}`")]
    Parse(String),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("empty grid")]
    EmptyGrid,
}

/// Cycles for `trips` back-to-back iterations of a `depth`-cycle body.
pub fn latency_sequential(depth: u64, trips: u64) -> u64 {
    trips * depth
}

/// Cycles for `trips` iterations of a `depth`-cycle body started every `ii`
/// cycles.
pub fn latency_pipelined(depth: u64, trips: u64, ii: u64) -> u64 {
    depth + trips.saturating_sub(1) * ii
}

/// Energy in millijoules of running for `latency_ms` at `power_w` watts.
pub fn estimate_energy(latency_ms: f64, power_w: f64) -> Result<f64, DseError> {
    if !(latency_ms >= 0.0) || !(power_w >= 0.0) {
        return Err(DseError::NonPositive("latency and power"));
    }
    Ok(latency_ms * power_w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NestKind {
    /// Multiply-accumulate nest; the innermost loop is the reduction.
    Mac,
    /// One simple operation per innermost iteration (ReLU, compare, add).
    Elementwise,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub name: &'static str,
    pub trips: u64,
}

/// Operation counts of one innermost-loop iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BodyOps {
    pub macs: u64,
    /// Words read from each of the body's input buffers.
    pub loads: u64,
    pub stores: u64,
}

/// Loops of one layer, outermost first.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopNest {
    pub layer: usize,
    pub label: String,
    pub kind: NestKind,
    pub loops: Vec<Loop>,
    pub body: BodyOps,
    /// Pipeline stages of one body iteration (read, execute, write).
    pub body_depth: u64,
    /// Words in the layer's output buffer.
    pub output_words: u64,
    /// Parameter words (weights and biases) held in the layer's store.
    pub weight_words: u64,
}

impl LoopNest {
    pub fn iterations(&self) -> u64 {
        self.loops.iter().map(|l| l.trips).product()
    }

    pub fn macs(&self) -> u64 {
        self.iterations() * self.body.macs
    }

    pub fn loop_index(&self, name: &str) -> Option<usize> {
        self.loops.iter().position(|l| l.name == name)
    }
}

/// Lowers every layer that does work in hardware. `Flatten` is a re-index
/// of the same buffer and `Softmax` is left to the host, so neither gets a
/// nest.
pub fn lower(model: &ModelSpec) -> Vec<LoopNest> {
    let mut nests = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let inp = model.layer_input(i);
        let out = model.layer_output(i);
        let out_words = out.len() as u64;
        let nest = match layer {
            LayerSpec::Conv(c) => LoopNest {
                layer: i,
                label: format!("conv{}x{}x{}", c.filters, c.height, c.width),
                kind: NestKind::Mac,
                loops: vec![
                    Loop {
                        name: "filter",
                        trips: c.filters as u64,
                    },
                    Loop {
                        name: "row",
                        trips: out.rows as u64,
                    },
                    Loop {
                        name: "col",
                        trips: out.cols as u64,
                    },
                    Loop {
                        name: "mac",
                        trips: c.taps(inp.channels) as u64,
                    },
                ],
                body: BodyOps {
                    macs: 1,
                    loads: 1,
                    stores: 0,
                },
                body_depth: 3,
                output_words: out_words,
                weight_words: (c.filters * c.taps(inp.channels) + c.filters) as u64,
            },
            LayerSpec::Dense { units } => LoopNest {
                layer: i,
                label: format!("fc{units}"),
                kind: NestKind::Mac,
                loops: vec![
                    Loop {
                        name: "unit",
                        trips: *units as u64,
                    },
                    Loop {
                        name: "mac",
                        trips: inp.len() as u64,
                    },
                ],
                body: BodyOps {
                    macs: 1,
                    loads: 1,
                    stores: 0,
                },
                body_depth: 3,
                output_words: out_words,
                weight_words: (units * inp.len() + units) as u64,
            },
            LayerSpec::Relu => LoopNest {
                layer: i,
                label: "relu".into(),
                kind: NestKind::Elementwise,
                loops: vec![Loop {
                    name: "elem",
                    trips: inp.len() as u64,
                }],
                body: BodyOps {
                    macs: 0,
                    loads: 1,
                    stores: 1,
                },
                body_depth: 3,
                output_words: out_words,
                weight_words: 0,
            },
            LayerSpec::Pool(p) => LoopNest {
                layer: i,
                label: match p.mode {
                    PoolMode::Max => format!("pool{}", p.size),
                    PoolMode::Avg => format!("avgpool{}", p.size),
                },
                kind: NestKind::Elementwise,
                loops: vec![
                    Loop {
                        name: "chan",
                        trips: out.channels as u64,
                    },
                    Loop {
                        name: "row",
                        trips: out.rows as u64,
                    },
                    Loop {
                        name: "col",
                        trips: out.cols as u64,
                    },
                    Loop {
                        name: "win",
                        trips: (p.size * p.size) as u64,
                    },
                ],
                body: BodyOps {
                    macs: 0,
                    loads: 1,
                    stores: 0,
                },
                body_depth: 3,
                output_words: out_words,
                weight_words: 0,
            },
            LayerSpec::Flatten | LayerSpec::Softmax => continue,
        };
        nests.push(nest);
    }
    nests
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Directive {
    Sequential,
    /// Pipeline with the requested initiation interval; every loop inside
    /// is fully unrolled.
    Pipeline {
        ii: u64,
    },
    /// Replicate the body `factor` times; trips become `ceil(trips/factor)`.
    Unroll {
        factor: u64,
    },
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Sequential => f.write_str("seq"),
            Directive::Pipeline { ii: 1 } => f.write_str("pipeline"),
            Directive::Pipeline { ii } => write!(f, "pipeline{ii}"),
            Directive::Unroll { factor } => write!(f, "unroll{factor}"),
        }
    }
}

impl FromStr for Directive {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self, DseError> {
        let num = |rest: &str| -> Result<u64, DseError> {
            if rest.is_empty() {
                return Ok(1);
            }
            rest.parse::<u64>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| DseError::Parse(s.into()))
        };
        if s == "seq" || s == "sequential" {
            Ok(Directive::Sequential)
        } else if let Some(rest) = s.strip_prefix("pipeline") {
            Ok(Directive::Pipeline { ii: num(rest)? })
        } else if let Some(rest) = s.strip_prefix("unroll") {
            if rest.is_empty() {
                return Err(DseError::Parse(s.into()));
            }
            Ok(Directive::Unroll { factor: num(rest)? })
        } else {
            Err(DseError::Parse(s.into()))
        }
    }
}

/// A directive for one loop of one layer (layer index as in the model).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopDirective {
    pub layer: usize,
    pub loop_name: String,
    pub directive: Directive,
}

/// Which layers a preset applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Conv,
    Dense,
    AllMac,
}

/// Per-loop directives; loops not mentioned run sequentially.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    Sequential,
    /// Pipeline the innermost (reduction) loop of the selected layers.
    PipelineInner {
        scope: Scope,
        ii: u64,
    },
    /// Unroll the reduction loop of the selected layers.
    UnrollInner {
        scope: Scope,
        factor: u64,
    },
    Custom(Vec<LoopDirective>),
}

impl Schedule {
    /// Explicit directives for `nests`.
    pub fn directives(&self, nests: &[LoopNest], model: &ModelSpec) -> Vec<LoopDirective> {
        let pick = |scope: Scope, layer: usize| {
            matches!(
                (scope, &model.layers()[layer]),
                (Scope::Conv | Scope::AllMac, LayerSpec::Conv(_))
                    | (Scope::Dense | Scope::AllMac, LayerSpec::Dense { .. })
            )
        };
        let inner = |scope: Scope, directive: Directive| {
            nests
                .iter()
                .filter(|n| n.kind == NestKind::Mac && pick(scope, n.layer))
                .map(|n| LoopDirective {
                    layer: n.layer,
                    loop_name: "mac".into(),
                    directive,
                })
                .collect()
        };
        match self {
            Schedule::Sequential => Vec::new(),
            Schedule::PipelineInner { scope, ii } => inner(*scope, Directive::Pipeline { ii: *ii }),
            Schedule::UnrollInner { scope, factor } => {
                inner(*scope, Directive::Unroll { factor: *factor })
            }
            Schedule::Custom(d) => d.clone(),
        }
    }
}

fn scope_suffix(scope: Scope) -> &'static str {
    match scope {
        Scope::Conv => "-conv",
        Scope::Dense => "-fc",
        Scope::AllMac => "",
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Sequential => f.write_str("seq"),
            Schedule::PipelineInner { scope, ii } => {
                write!(
                    f,
                    "{}{}",
                    Directive::Pipeline { ii: *ii },
                    scope_suffix(*scope)
                )
            }
            Schedule::UnrollInner { scope, factor } => {
                write!(f, "unroll{factor}{}", scope_suffix(*scope))
            }
            Schedule::Custom(ds) => {
                for (k, d) in ds.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{}.{}={}", d.layer, d.loop_name, d.directive)?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Schedule {
    type Err = DseError;

    /// Presets: `seq`, `pipeline[II][-conv|-fc]`, `unroll<N>[-conv|-fc]`.
    /// Anything containing `=` is a comma-separated list of
    /// `<layer>.<loop>=<seq|pipeline[II]|unroll<N>>`.
    fn from_str(s: &str) -> Result<Self, DseError> {
        let s = s.trim();
        if s.contains('=') {
            let mut out = Vec::new();
            for item in s.split(',') {
                let (target, dir) = item
                    .split_once('=')
                    .ok_or_else(|| DseError::Parse(item.into()))?;
                let (layer, name) = target
                    .split_once('.')
                    .ok_or_else(|| DseError::Parse(item.into()))?;
                out.push(LoopDirective {
                    layer: layer
                        .trim()
                        .parse()
                        .map_err(|_| DseError::Parse(item.into()))?,
                    loop_name: name.trim().into(),
                    directive: dir.trim().parse()?,
                });
            }
            return Ok(Schedule::Custom(out));
        }
        let (base, scope) = if let Some(b) = s.strip_suffix("-conv") {
            (b, Scope::Conv)
        } else if let Some(b) = s.strip_suffix("-fc") {
            (b, Scope::Dense)
        } else {
            (s, Scope::AllMac)
        };
        match base.parse::<Directive>()? {
            Directive::Sequential if scope == Scope::AllMac => Ok(Schedule::Sequential),
            Directive::Sequential => Err(DseError::Parse(s.into())),
            Directive::Pipeline { ii } => Ok(Schedule::PipelineInner { scope, ii }),
            Directive::Unroll { factor } => Ok(Schedule::UnrollInner { scope, factor }),
        }
    }
}

/// Calibration constants of the cost model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelParams {
    /// Cycles per multiply-accumulate in a sequential reduction loop.
    pub cycles_per_mac: f64,
    /// Cycles per iteration of an element-wise loop.
    pub cycles_per_op: f64,
    /// Extra cycles per iteration of a loop that contains other loops.
    pub loop_overhead: f64,
    /// Cycles to hand a finished buffer to the next layer.
    pub handoff_cycles: u64,
    pub bram_bits_per_block: u64,
    /// Multiply-accumulates one DSP slice performs per cycle.
    pub macs_per_dsp: u64,
    pub lut_base: f64,
    pub lut_per_layer: f64,
    pub lut_per_parallel_mac: f64,
    /// Read ports per buffer bank.
    pub read_ports: u64,
    /// Banks each activation and weight buffer is split into.
    pub partition: u64,
}

impl Default for CostModelParams {
    fn default() -> Self {
        CostModelParams {
            cycles_per_mac: 2.64,
            cycles_per_op: 1.0,
            loop_overhead: 1.0,
            handoff_cycles: 8,
            bram_bits_per_block: 18 * 1024,
            macs_per_dsp: 1,
            lut_base: 18000.0,
            lut_per_layer: 1200.0,
            lut_per_parallel_mac: 150.0,
            read_ports: 2,
            partition: 1,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<(), DseError> {
        let checks = [
            (self.cycles_per_mac > 0.0, "cycles_per_mac"),
            (self.cycles_per_op > 0.0, "cycles_per_op"),
            (self.loop_overhead >= 0.0, "loop_overhead"),
            (self.bram_bits_per_block > 0, "bram_bits_per_block"),
            (self.macs_per_dsp > 0, "macs_per_dsp"),
            (self.read_ports > 0, "read_ports"),
            (self.partition > 0, "partition"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(DseError::NonPositive(name)),
            None => Ok(()),
        }
    }
}

/// Resources available on the target device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceBudget {
    pub dsp: u64,
    pub bram_blocks: u64,
    pub lut: u64,
}

impl Default for DeviceBudget {
    fn default() -> Self {
        DeviceBudget {
            dsp: 900,
            bram_blocks: 1090,
            lut: 218_600,
        }
    }
}

/// One point of the design space.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub model: ModelSpec,
    pub schedule: Schedule,
    pub format: FxpFormat,
    pub clock_mhz: f64,
    pub params: CostModelParams,
}

impl DesignPoint {
    pub fn new(model: ModelSpec, schedule: Schedule) -> Self {
        DesignPoint {
            model,
            schedule,
            format: FxpFormat::Q2_14,
            clock_mhz: 100.0,
            params: CostModelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerLatency {
    pub layer: usize,
    pub label: String,
    pub cycles: u64,
    /// Multiply-accumulate units working in parallel.
    pub parallel_macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub layers: Vec<LayerLatency>,
    pub handoff_cycles: u64,
    pub total_cycles: u64,
    pub millis: f64,
}

/// Per-nest schedule after validation: one directive per loop.
fn resolve(nests: &[LoopNest], dp: &DesignPoint) -> Result<Vec<Vec<Directive>>, DseError> {
    let mut per: Vec<Vec<Directive>> = nests
        .iter()
        .map(|n| vec![Directive::Sequential; n.loops.len()])
        .collect();
    for d in dp.schedule.directives(nests, &dp.model) {
        let k = nests
            .iter()
            .position(|n| n.layer == d.layer)
            .ok_or(DseError::UnknownLayer(d.layer))?;
        let li = nests[k]
            .loop_index(&d.loop_name)
            .ok_or_else(|| DseError::UnknownLoop {
                layer: d.layer,
                name: d.loop_name.clone(),
            })?;
        per[k][li] = d.directive;
    }
    for (n, dirs) in nests.iter().zip(&per) {
        if dirs
            .iter()
            .filter(|d| matches!(d, Directive::Pipeline { .. }))
            .count()
            > 1
        {
            return Err(DseError::MultiplePipelines(n.layer));
        }
    }
    Ok(per)
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn log2_ceil(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros() as u64
    }
}

/// Cycles and parallel MAC units of one nest under `dirs`.
fn nest_cost(nest: &LoopNest, dirs: &[Directive], p: &CostModelParams) -> (f64, u64) {
    let body = match nest.kind {
        NestKind::Mac => p.cycles_per_mac,
        NestKind::Elementwise => p.cycles_per_op,
    };
    let bandwidth = p.read_ports * p.partition;
    let pipelined = dirs
        .iter()
        .position(|d| matches!(d, Directive::Pipeline { .. }));
    // Work from the innermost loop that is not fully unrolled outward.
    let (mut cycles, mut units, start) = match pipelined {
        Some(k) => {
            let Directive::Pipeline { ii } = dirs[k] else {
                unreachable!()
            };
            let inner: u64 = nest.loops[k + 1..].iter().map(|l| l.trips).product();
            let port_ii = ceil_div(inner * nest.body.loads, bandwidth);
            let ii = ii.max(port_ii).max(1);
            let tree = if nest.kind == NestKind::Mac {
                log2_ceil(inner)
            } else {
                0
            };
            let depth = nest.body_depth + tree;
            let c = latency_pipelined(depth, nest.loops[k].trips, ii) as f64;
            let units = if nest.kind == NestKind::Mac {
                ceil_div(inner, ii)
            } else {
                0
            };
            (c, units, k)
        }
        None => {
            let k = nest.loops.len() - 1;
            let (trips, factor) = match dirs[k] {
                Directive::Unroll { factor } => (ceil_div(nest.loops[k].trips, factor), factor),
                _ => (nest.loops[k].trips, 1),
            };
            let port = ceil_div(factor * nest.body.loads, bandwidth) as f64;
            let per_iter = body.max(port);
            let units = if nest.kind == NestKind::Mac {
                factor
            } else {
                0
            };
            (trips as f64 * per_iter, units, k)
        }
    };
    for k in (0..start).rev() {
        let (trips, factor) = match dirs[k] {
            Directive::Unroll { factor } => (ceil_div(nest.loops[k].trips, factor), factor),
            _ => (nest.loops[k].trips, 1),
        };
        cycles = trips as f64 * (cycles + p.loop_overhead);
        units *= factor;
    }
    (cycles, units)
}

pub fn estimate_latency(dp: &DesignPoint) -> Result<LatencyReport, DseError> {
    dp.params.validate()?;
    if !(dp.clock_mhz > 0.0) {
        return Err(DseError::NonPositive("clock_mhz"));
    }
    let nests = lower(&dp.model);
    let dirs = resolve(&nests, dp)?;
    let layers: Vec<LayerLatency> = nests
        .iter()
        .zip(&dirs)
        .map(|(n, d)| {
            let (c, units) = nest_cost(n, d, &dp.params);
            LayerLatency {
                layer: n.layer,
                label: n.label.clone(),
                cycles: libm::ceil(c) as u64,
                parallel_macs: units,
            }
        })
        .collect();
    let handoff = dp.params.handoff_cycles * nests.len().saturating_sub(1) as u64;
    let total = layers.iter().map(|l| l.cycles).sum::<u64>() + handoff;
    Ok(LatencyReport {
        layers,
        handoff_cycles: handoff,
        total_cycles: total,
        millis: total as f64 / (dp.clock_mhz * 1e3),
    })
}

/// Fits `cycles_per_mac` so that `dp` takes exactly `target_ms`. Latency
/// is affine in `cycles_per_mac` for sequential MAC loops, so two
/// evaluations determine the fit.
pub fn calibrate(dp: &DesignPoint, target_ms: f64) -> Result<CostModelParams, DseError> {
    let target = target_ms * dp.clock_mhz * 1e3;
    let eval = |cpm: f64| -> Result<f64, DseError> {
        let mut d = dp.clone();
        d.params.cycles_per_mac = cpm;
        let nests = lower(&d.model);
        let dirs = resolve(&nests, &d)?;
        let cycles: f64 = nests
            .iter()
            .zip(&dirs)
            .map(|(n, dd)| nest_cost(n, dd, &d.params).0)
            .sum();
        Ok(cycles + (d.params.handoff_cycles * nests.len().saturating_sub(1) as u64) as f64)
    };
    let (a, b) = (eval(1.0)?, eval(2.0)?);
    let slope = b - a;
    if !(slope > 0.0) {
        return Err(DseError::NonPositive(
            "latency sensitivity to cycles_per_mac",
        ));
    }
    let cpm = 1.0 + (target - a) / slope;
    if !(cpm > 0.0) {
        return Err(DseError::NonPositive("fitted cycles_per_mac"));
    }
    Ok(CostModelParams {
        cycles_per_mac: cpm,
        ..dp.params
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerResources {
    pub layer: usize,
    pub label: String,
    pub weight_blocks: u64,
    pub buffer_blocks: u64,
    pub dsp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceReport {
    pub layers: Vec<LayerResources>,
    /// Double-buffered input frame.
    pub input_blocks: u64,
    pub bram_blocks: u64,
    pub dsp: u64,
    pub lut: f64,
    pub bram_pct: f64,
    pub dsp_pct: f64,
    pub lut_pct: f64,
}

/// Block RAMs for a `words`-word buffer of `word_bits`-wide words split into
/// `banks` banks.
pub fn bram_blocks(words: u64, word_bits: u64, banks: u64, bits_per_block: u64) -> u64 {
    if words == 0 {
        return 0;
    }
    banks * ceil_div(ceil_div(words, banks) * word_bits, bits_per_block)
}

/// DSP slices for one multiplier of `bits`-wide operands (25x18 slices).
fn dsp_per_multiplier(bits: u64) -> u64 {
    ceil_div(bits, 18) * ceil_div(bits, 25)
}

pub fn estimate_resources(
    dp: &DesignPoint,
    budget: &DeviceBudget,
) -> Result<ResourceReport, DseError> {
    let lat = estimate_latency(dp)?;
    let p = &dp.params;
    // Words are stored byte-aligned, as in the exported BRAM image.
    let bits = 8 * dp.format.word_bytes() as u64;
    let mult_bits = dp.format.total_bits() as u64;
    let nests = lower(&dp.model);
    let input_words = dp.model.input_shape().len() as u64;
    let input_blocks = 2 * bram_blocks(input_words, bits, p.partition, p.bram_bits_per_block);
    let layers: Vec<LayerResources> = nests
        .iter()
        .zip(&lat.layers)
        .map(|(n, l)| LayerResources {
            layer: n.layer,
            label: n.label.clone(),
            weight_blocks: bram_blocks(n.weight_words, bits, p.partition, p.bram_bits_per_block),
            buffer_blocks: 2 * bram_blocks(
                n.output_words,
                bits,
                p.partition,
                p.bram_bits_per_block,
            ),
            dsp: ceil_div(l.parallel_macs, p.macs_per_dsp) * dsp_per_multiplier(mult_bits),
        })
        .collect();
    let bram = input_blocks
        + layers
            .iter()
            .map(|l| l.weight_blocks + l.buffer_blocks)
            .sum::<u64>();
    let dsp = layers.iter().map(|l| l.dsp).sum::<u64>();
    let units: u64 = lat.layers.iter().map(|l| l.parallel_macs).sum();
    let lut =
        p.lut_base + p.lut_per_layer * nests.len() as f64 + p.lut_per_parallel_mac * units as f64;
    let pct = |v: f64, cap: u64| 100.0 * v / cap as f64;
    Ok(ResourceReport {
        input_blocks,
        bram_blocks: bram,
        dsp,
        lut,
        bram_pct: pct(bram as f64, budget.bram_blocks),
        dsp_pct: pct(dsp as f64, budget.dsp),
        lut_pct: pct(lut, budget.lut),
        layers,
    })
}

/// Latency, resources and (optionally) energy of one design point.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignReport {
    pub arch: String,
    pub schedule: String,
    pub cycles: u64,
    pub millis: f64,
    pub bram_blocks: u64,
    pub dsp: u64,
    pub lut: f64,
    pub energy_mj: Option<f64>,
}

impl DesignReport {
    /// True when `self` is no worse than `other` in latency, DSP and BRAM
    /// and strictly better in at least one.
    pub fn dominates(&self, other: &DesignReport) -> bool {
        let a = [self.cycles, self.dsp, self.bram_blocks];
        let b = [other.cycles, other.dsp, other.bram_blocks];
        a.iter().zip(&b).all(|(x, y)| x <= y) && a.iter().zip(&b).any(|(x, y)| x < y)
    }
}

pub fn evaluate_point(
    dp: &DesignPoint,
    budget: &DeviceBudget,
    power_w: Option<f64>,
) -> Result<DesignReport, DseError> {
    let lat = estimate_latency(dp)?;
    let res = estimate_resources(dp, budget)?;
    Ok(DesignReport {
        arch: dp.model.arch_string(),
        schedule: dp.schedule.to_string(),
        cycles: lat.total_cycles,
        millis: lat.millis,
        bram_blocks: res.bram_blocks,
        dsp: res.dsp,
        lut: res.lut,
        energy_mj: power_w
            .map(|w| estimate_energy(lat.millis, w))
            .transpose()?,
    })
}

/// Indices of the reports no other report dominates, in input order.
pub fn pareto_front(reports: &[DesignReport]) -> Vec<usize> {
    (0..reports.len())
        .filter(|&i| !reports.iter().any(|r| r.dominates(&reports[i])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// One row per (model, schedule) pair, models outermost.
    pub reports: Vec<DesignReport>,
    pub pareto: Vec<usize>,
}

/// Evaluates every model under every schedule.
pub fn sweep(
    models: &[ModelSpec],
    schedules: &[Schedule],
    format: FxpFormat,
    clock_mhz: f64,
    params: &CostModelParams,
    budget: &DeviceBudget,
    power_w: Option<f64>,
) -> Result<SweepResult, DseError> {
    if models.is_empty() || schedules.is_empty() {
        return Err(DseError::EmptyGrid);
    }
    let mut reports = Vec::with_capacity(models.len() * schedules.len());
    for m in models {
        for s in schedules {
            let dp = DesignPoint {
                model: m.clone(),
                schedule: s.clone(),
                format,
                clock_mhz,
                params: *params,
            };
            reports.push(evaluate_point(&dp, budget, power_w)?);
        }
    }
    let pareto = pareto_front(&reports);
    Ok(SweepResult { reports, pareto })
}
