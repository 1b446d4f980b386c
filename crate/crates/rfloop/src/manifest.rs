//! TOML model manifests: everything about a model except its parameters.
//!
//! ```toml
//! format_version = 1
//! arch = "conv6x3-pool3-fc8-out"
//! classes = ["BPSK", "QPSK"]
//!
//! [input]
//! rows = 32
//! cols = 32
//! channels = 2
//!
//! [provenance]
//! seed = "0"
//! config_hash = "…"
//!
//! [[layers]]
//! kind = "conv"
//! filters = 6
//! height = 3
//! width = 3
//! stride = 1
//! padding = "same"
//!
//! [[layers]]
//! kind = "relu"
//! ```
//!
//! `seed` is a string because TOML integers stop at `i64::MAX`. The layer
//! list is the model's normalized list (with the explicit `flatten`) and is
//! re-validated against the architecture grammar on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rfloop_core::model::{ConvSpec, Padding, PoolMode, PoolSpec};
use rfloop_core::{FxpFormat, LayerSpec, ModelSpec};

use crate::wire::{read_file, write_file};
use crate::FormatError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDesc {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: String,
    /// SHA-256 (hex) of the effective training configuration.
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatDesc {
    pub total_bits: u32,
    pub frac_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDesc {
    Conv {
        filters: usize,
        height: usize,
        width: usize,
        stride: usize,
        padding: String,
    },
    Dense {
        units: usize,
    },
    Relu,
    Pool {
        size: usize,
        mode: String,
    },
    Flatten,
    Softmax,
}

impl LayerDesc {
    pub fn from_spec(layer: &LayerSpec) -> Self {
        match layer {
            LayerSpec::Conv(c) => LayerDesc::Conv {
                filters: c.filters,
                height: c.height,
                width: c.width,
                stride: c.stride,
                padding: match c.padding {
                    Padding::Same => "same",
                    Padding::Full => "full",
                }
                .into(),
            },
            LayerSpec::Dense { units } => LayerDesc::Dense { units: *units },
            LayerSpec::Relu => LayerDesc::Relu,
            LayerSpec::Pool(p) => LayerDesc::Pool {
                size: p.size,
                mode: match p.mode {
                    PoolMode::Max => "max",
                    PoolMode::Avg => "avg",
                }
                .into(),
            },
            LayerSpec::Flatten => LayerDesc::Flatten,
            LayerSpec::Softmax => LayerDesc::Softmax,
        }
    }

    pub fn to_spec(&self, position: usize) -> Result<LayerSpec, FormatError> {
        let bad = |what: &str, v: &str| {
            FormatError::Manifest(format!("layer {position}: unknown {what} `{v}`"))
        };
        Ok(match self {
            LayerDesc::Conv {
                filters,
                height,
                width,
                stride,
                padding,
            } => LayerSpec::Conv(ConvSpec {
                filters: *filters,
                height: *height,
                width: *width,
                stride: *stride,
                padding: match padding.as_str() {
                    "same" => Padding::Same,
                    "full" => Padding::Full,
                    other => return Err(bad("padding", other)),
                },
            }),
            LayerDesc::Dense { units } => LayerSpec::Dense { units: *units },
            LayerDesc::Relu => LayerSpec::Relu,
            LayerDesc::Pool { size, mode } => LayerSpec::Pool(PoolSpec {
                size: *size,
                mode: match mode.as_str() {
                    "max" => PoolMode::Max,
                    "avg" => PoolMode::Avg,
                    other => return Err(bad("pool mode", other)),
                },
            }),
            LayerDesc::Flatten => LayerSpec::Flatten,
            LayerDesc::Softmax => LayerSpec::Softmax,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    /// Informational; the layer list is authoritative.
    pub arch: String,
    pub classes: Vec<String>,
    /// Fixed-point format the model is meant to run in, if decided.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fxp: Option<FormatDesc>,
    pub input: InputDesc,
    pub provenance: Provenance,
    pub layers: Vec<LayerDesc>,
}

impl ModelManifest {
    pub fn new(model: &ModelSpec, provenance: Provenance) -> Self {
        let input = model.input_shape();
        ModelManifest {
            format_version: FORMAT_VERSION,
            arch: model.arch_string(),
            classes: model.classes().to_vec(),
            fxp: None,
            input: InputDesc {
                rows: input.rows,
                cols: input.cols,
                channels: input.channels,
            },
            provenance,
            layers: model.layers().iter().map(LayerDesc::from_spec).collect(),
        }
    }

    pub fn with_format(mut self, fmt: FxpFormat) -> Self {
        self.fxp = Some(FormatDesc {
            total_bits: fmt.total_bits(),
            frac_bits: fmt.frac_bits(),
        });
        self
    }

    pub fn format(&self) -> Result<Option<FxpFormat>, FormatError> {
        self.fxp
            .map(|f| {
                FxpFormat::new(f.total_bits, f.frac_bits)
                    .map_err(|e| FormatError::Manifest(e.to_string()))
            })
            .transpose()
    }

    /// Rebuilds and validates the model.
    pub fn model(&self) -> Result<ModelSpec, FormatError> {
        if self.format_version != FORMAT_VERSION {
            return Err(FormatError::Version {
                what: "manifest",
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let InputDesc {
            rows,
            cols,
            channels,
        } = self.input;
        if rows != cols || channels != 2 {
            return Err(FormatError::Manifest(format!(
                "input must be square with 2 channels, got {rows}x{cols}x{channels}"
            )));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.to_spec(i))
            .collect::<Result<Vec<_>, _>>()?;
        self.format()?;
        Ok(ModelSpec::new(rows, &layers, self.classes.clone())?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are TOML-representable")
    }

    pub fn from_toml(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| FormatError::Manifest(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering. Reformatting the file does
    /// not change it; editing any field does.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, self.to_toml().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| FormatError::Manifest(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml(text).map_err(|e| match e {
            FormatError::Manifest(m) => FormatError::Manifest(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 (hex) of arbitrary bytes, used for configuration hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
