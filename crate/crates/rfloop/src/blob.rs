//! RFLW weight blobs.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RFLW"
//! 4       2     version (1)
//! 6       1     element kind: 0 = float32, 1 = fixed point
//! 7       1     total bits (0 for float32)
//! 8       1     fractional bits (0 for float32)
//! 9       1     reserved (0)
//! 10      32    SHA-256 of the manifest the blob belongs to
//! 42      4     record count R
//! 46      ...   R records
//! ```
//!
//! Each record holds one tensor of one layer:
//!
//! ```text
//! 4   layer index (position in the manifest's layer list)
//! 1   role: 0 = weights, 1 = bias
//! 1   rank r
//! 4r  dimensions, outermost first
//! 8   payload length in bytes (= product(dims) x element bytes)
//! ... payload, little-endian, row-major
//! ```
//!
//! Conv weights have shape `[filters, in_channels, height, width]`, Dense
//! weights `[units, inputs]`, biases `[n]`. Fixed-point elements are
//! two's-complement words of 1, 2 or 4 bytes (see
//! [`FxpFormat::word_bytes`]).
//!
//! Worked example: one float layer-0 bias `[0.5]` starts its record with
//! `00 00 00 00  01  01  01 00 00 00  04 00 00 00 00 00 00 00  00 00 00 3f`.

use rfloop_core::fixed::FixedWeights;
use rfloop_core::model::Params;
use rfloop_core::{FxpFormat, LayerSpec, ModelSpec, WeightSet};

use crate::manifest::hex;
use crate::wire::{get_word, put_word, Reader};
use crate::FormatError;

pub const MAGIC: &[u8; 4] = b"RFLW";
pub const VERSION: u16 = 1;

/// Parameters in either representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Float(WeightSet<f32>),
    Fixed(FixedWeights),
}

impl Weights {
    pub fn format(&self) -> Option<FxpFormat> {
        match self {
            Weights::Float(_) => None,
            Weights::Fixed(f) => Some(f.format),
        }
    }

    pub fn check(&self, model: &ModelSpec) -> Result<(), FormatError> {
        match self {
            Weights::Float(w) => w.check(model)?,
            Weights::Fixed(f) => f.set.check(model)?,
        }
        Ok(())
    }
}

/// Tensor shapes of layer `i`'s weights and bias.
pub fn param_shapes(model: &ModelSpec, i: usize) -> Option<(Vec<u32>, Vec<u32>)> {
    let input = model.layer_input(i);
    match &model.layers()[i] {
        LayerSpec::Conv(c) => Some((
            vec![
                c.filters as u32,
                input.channels as u32,
                c.height as u32,
                c.width as u32,
            ],
            vec![c.filters as u32],
        )),
        LayerSpec::Dense { units } => {
            Some((vec![*units as u32, input.len() as u32], vec![*units as u32]))
        }
        _ => None,
    }
}

fn element(kind: &Weights) -> (u8, u8, u8, usize) {
    match kind {
        Weights::Float(_) => (0, 0, 0, 4),
        Weights::Fixed(f) => (
            1,
            f.format.total_bits() as u8,
            f.format.frac_bits() as u8,
            f.format.word_bytes(),
        ),
    }
}

pub fn encode(
    model: &ModelSpec,
    weights: &Weights,
    manifest_hash: &[u8; 32],
) -> Result<Vec<u8>, FormatError> {
    weights.check(model)?;
    let (kind, bits, frac, elem) = element(weights);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[kind, bits, frac, 0]);
    out.extend_from_slice(manifest_hash);
    let layers: Vec<usize> = (0..model.layers().len())
        .filter(|&i| model.layers()[i].has_params())
        .collect();
    out.extend_from_slice(&(2 * layers.len() as u32).to_le_bytes());
    for i in layers {
        let (ws, bs) = param_shapes(model, i).expect("layer has params");
        for (role, shape) in [(0u8, ws), (1u8, bs)] {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.push(role);
            out.push(shape.len() as u8);
            for d in &shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            let n: u64 = shape.iter().map(|&d| d as u64).product();
            out.extend_from_slice(&(n * elem as u64).to_le_bytes());
            match weights {
                Weights::Float(w) => {
                    let p = w.layers[i].as_ref().unwrap();
                    let v = if role == 0 { &p.weights } else { &p.bias };
                    v.iter()
                        .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                Weights::Fixed(f) => {
                    let p = f.set.layers[i].as_ref().unwrap();
                    let v = if role == 0 { &p.weights } else { &p.bias };
                    v.iter().for_each(|&x| put_word(&mut out, x, elem));
                }
            }
        }
    }
    Ok(out)
}

fn empty_params<T>() -> Params<T> {
    Params {
        weights: Vec::new(),
        bias: Vec::new(),
    }
}

/// Header fields readable without a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub format: Option<FxpFormat>,
    pub manifest_hash: [u8; 32],
    pub records: u32,
}

fn header(r: &mut Reader<'_>) -> Result<BlobHeader, FormatError> {
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::Version {
            what: "RFLW",
            found: version.into(),
            supported: VERSION.into(),
        });
    }
    let kind = r.u8("element kind")?;
    let bits = r.u8("total bits")?;
    let frac = r.u8("fractional bits")?;
    r.u8("reserved")?;
    let format = match kind {
        0 => None,
        1 => Some(
            FxpFormat::new(bits.into(), frac.into())
                .map_err(|e| FormatError::Invalid(format!("blob format: {e}")))?,
        ),
        k => return Err(FormatError::Invalid(format!("unknown element kind {k}"))),
    };
    let manifest_hash = r.take(32, "manifest hash")?.try_into().unwrap();
    let records = r.u32("record count")?;
    Ok(BlobHeader {
        format,
        manifest_hash,
        records,
    })
}

pub fn read_header(bytes: &[u8]) -> Result<BlobHeader, FormatError> {
    header(&mut Reader::new(bytes))
}

/// Decodes a blob against `model`, refusing it unless it was written for a
/// manifest hashing to `manifest_hash`.
pub fn decode(
    model: &ModelSpec,
    bytes: &[u8],
    manifest_hash: &[u8; 32],
) -> Result<Weights, FormatError> {
    let mut r = Reader::new(bytes);
    let h = header(&mut r)?;
    if &h.manifest_hash != manifest_hash {
        return Err(FormatError::HashMismatch {
            blob: hex(&h.manifest_hash),
            manifest: hex(manifest_hash),
        });
    }
    let elem = h.format.map_or(4, |f| f.word_bytes());
    let mut float: WeightSet<f32> = WeightSet {
        layers: vec![None; model.layers().len()],
    };
    let mut fixed: WeightSet<i32> = WeightSet {
        layers: vec![None; model.layers().len()],
    };
    let mut seen = vec![[false; 2]; model.layers().len()];
    for rec in 0..h.records {
        let what = |s: &str| format!("record {rec} {s}");
        let layer = r.u32(&what("layer index"))? as usize;
        let role = r.u8(&what("role"))? as usize;
        let rank = r.u8(&what("rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&what("dimension"))?);
        }
        let len = r.u64(&what("payload length"))?;
        let tag = format!(
            "layer {layer} {}",
            if role == 0 { "weights" } else { "bias" }
        );
        let Some((ws, bs)) = (layer < model.layers().len())
            .then(|| param_shapes(model, layer))
            .flatten()
        else {
            return Err(FormatError::Invalid(format!(
                "record {rec}: layer {layer} takes no parameters"
            )));
        };
        let expected_shape = match role {
            0 => ws,
            1 => bs,
            r => {
                return Err(FormatError::Invalid(format!(
                    "record {rec}: unknown role {r}"
                )))
            }
        };
        if shape != expected_shape {
            return Err(FormatError::Invalid(format!(
                "{tag}: shape {shape:?} does not match the model's {expected_shape:?}"
            )));
        }
        let n: u64 = shape.iter().map(|&d| d as u64).product();
        if n * elem as u64 != len {
            return Err(FormatError::PayloadLength {
                what: tag,
                shape,
                elem_bytes: elem,
                expected: n * elem as u64,
                actual: len,
            });
        }
        if std::mem::replace(&mut seen[layer][role], true) {
            return Err(FormatError::Invalid(format!("{tag} appears twice")));
        }
        if r.remaining() < len as usize {
            return Err(FormatError::PayloadLength {
                what: format!("{tag} (file ends inside the payload)"),
                shape,
                elem_bytes: elem,
                expected: len,
                actual: r.remaining() as u64,
            });
        }
        let payload = r.take(len as usize, &format!("{tag} payload"))?;
        match h.format {
            None => {
                let v = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let p = float.layers[layer].get_or_insert_with(empty_params);
                *(if role == 0 {
                    &mut p.weights
                } else {
                    &mut p.bias
                }) = v;
            }
            Some(_) => {
                let v = payload.chunks_exact(elem).map(get_word).collect();
                let p = fixed.layers[layer].get_or_insert_with(empty_params);
                *(if role == 0 {
                    &mut p.weights
                } else {
                    &mut p.bias
                }) = v;
            }
        }
    }
    r.finish()?;
    for (i, s) in seen.iter().enumerate() {
        if model.layers()[i].has_params() && s != &[true, true] {
            return Err(FormatError::Invalid(format!(
                "layer {i}: missing weight or bias record"
            )));
        }
    }
    let w = match h.format {
        None => Weights::Float(float),
        Some(format) => Weights::Fixed(FixedWeights { format, set: fixed }),
    };
    w.check(model)?;
    Ok(w)
}
