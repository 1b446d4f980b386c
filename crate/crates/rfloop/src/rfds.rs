//! RFDS dataset files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RFDS"
//! 4       2     version (1)
//! 6       4     side ℓ (frames are ℓ x ℓ x 2)
//! 10      2     class count C (1..=256)
//! 12      ...   C class names: u16 byte length, UTF-8 bytes
//! ...     8     record count N
//! ...     ...   N records: u8 label, then 2ℓ² f32 values
//! ```
//!
//! Record values are channel-planar: the ℓ² I samples row-major, then the ℓ²
//! Q samples. All integers and floats are little-endian.
//!
//! Worked example, ℓ = 1, classes `["A"]`, one record (label 0, I = 1.0,
//! Q = -0.5):
//!
//! ```text
//! 52 46 44 53  01 00  01 00 00 00  01 00  01 00 41
//! 01 00 00 00 00 00 00 00
//! 00  00 00 80 3f  00 00 00 bf
//! ```

use std::path::Path;

use rfloop_core::data::{Dataset, Sample};
use rfloop_core::{Shape, Tensor};

use crate::wire::{read_file, write_file, Reader};
use crate::FormatError;

pub const MAGIC: &[u8; 4] = b"RFDS";
pub const VERSION: u16 = 1;

pub fn encode(data: &Dataset) -> Result<Vec<u8>, FormatError> {
    let classes = data.classes();
    if classes.is_empty() || classes.len() > 256 {
        return Err(FormatError::Invalid(format!(
            "RFDS holds 1 to 256 classes, dataset has {}",
            classes.len()
        )));
    }
    let side =
        u32::try_from(data.side()).map_err(|_| FormatError::Invalid("side too large".into()))?;
    let mut out = Vec::with_capacity(24 + data.len() * (1 + 8 * data.side() * data.side()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&side.to_le_bytes());
    out.extend_from_slice(&(classes.len() as u16).to_le_bytes());
    for c in classes {
        let b = c.as_bytes();
        let len = u16::try_from(b.len())
            .map_err(|_| FormatError::Invalid(format!("class name `{c}` too long")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(b);
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for s in data.samples() {
        out.push(s.label as u8);
        for v in s.x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(FormatError::Version {
            what: "RFDS",
            found: version.into(),
            supported: VERSION.into(),
        });
    }
    let side = r.u32("side")? as usize;
    if side == 0 {
        return Err(FormatError::Invalid("RFDS side is zero".into()));
    }
    let n_classes = r.u16("class count")? as usize;
    let mut classes = Vec::with_capacity(n_classes);
    for i in 0..n_classes {
        let len = r.u16("class name length")? as usize;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| FormatError::Invalid(format!("class {i} name is not UTF-8")))?;
        classes.push(name.to_string());
    }
    let count = r.u64("record count")?;
    let values = 2 * side * side;
    let record = 1 + 4 * values;
    let needed = (count as u128) * record as u128;
    if needed > r.remaining() as u128 {
        return Err(FormatError::Truncated {
            what: format!("RFDS payload ({count} records of {record} bytes)"),
            offset: bytes.len() - r.remaining(),
            needed: needed.min(usize::MAX as u128) as usize,
            available: r.remaining(),
        });
    }
    let shape = Shape::new(side, side, 2);
    let mut data = Dataset::new(side, classes);
    for _ in 0..count {
        let label = r.u8("label")? as usize;
        let raw = r.take(4 * values, "record")?;
        let x: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        data.push(Sample {
            x: Tensor::from_vec(shape, x).expect("length matches shape"),
            label,
        })?;
    }
    r.finish()?;
    Ok(data)
}

pub fn save(path: &Path, data: &Dataset) -> Result<(), FormatError> {
    write_file(path, &encode(data)?)
}

pub fn load(path: &Path) -> Result<Dataset, FormatError> {
    decode(&read_file(path)?)
}
