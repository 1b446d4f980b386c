//! Signed fixed-point numbers with round-to-nearest-even and saturation.
//!
//! A value is stored as a two's-complement integer `raw` together with the
//! number of fractional bits; its real value is `raw * 2^-frac_bits`.

use core::fmt;

/// Errors raised when building or combining fixed-point formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FxpError {
    #[error("total bits must be in 2..=32, got {0}")]
    TotalBits(u32),
    #[error("fractional bits ({frac}) must be smaller than total bits ({total})")]
    FracBits { total: u32, frac: u32 },
    #[error("format mismatch: {left} vs {right}")]
    FormatMismatch { left: FxpFormat, right: FxpFormat },
}

/// A signed fixed-point format: `total_bits` wide, `frac_bits` after the point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxpFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl FxpFormat {
    /// 16-bit word with 14 fractional bits, range [-2, 2).
    pub const Q2_14: FxpFormat = FxpFormat {
        total_bits: 16,
        frac_bits: 14,
    };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FxpError> {
        if !(2..=32).contains(&total_bits) {
            return Err(FxpError::TotalBits(total_bits));
        }
        if frac_bits >= total_bits {
            return Err(FxpError::FracBits {
                total: total_bits,
                frac: frac_bits,
            });
        }
        Ok(FxpFormat {
            total_bits: total_bits as u8,
            frac_bits: frac_bits as u8,
        })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits as u32
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits as u32
    }

    /// Always true; unsigned formats are not supported.
    pub fn signed(self) -> bool {
        true
    }

    pub fn raw_min(self) -> i32 {
        (-(1i64 << (self.total_bits - 1))) as i32
    }

    pub fn raw_max(self) -> i32 {
        ((1i64 << (self.total_bits - 1)) - 1) as i32
    }

    /// Smallest positive step, `2^-frac_bits`.
    pub fn resolution(self) -> f64 {
        libm::ldexp(1.0, -(self.frac_bits as i32))
    }

    pub fn min_value(self) -> f64 {
        self.raw_min() as f64 * self.resolution()
    }

    pub fn max_value(self) -> f64 {
        self.raw_max() as f64 * self.resolution()
    }

    /// Bytes needed to store one word of this format (1, 2 or 4).
    pub fn word_bytes(self) -> usize {
        match self.total_bits {
            0..=8 => 1,
            9..=16 => 2,
            _ => 4,
        }
    }

    pub fn saturate(self, raw: i128) -> i32 {
        raw.clamp(self.raw_min() as i128, self.raw_max() as i128) as i32
    }

    /// Quantizes `x` to a raw integer: round-to-nearest-even, saturating.
    /// NaN maps to zero.
    pub fn quantize_raw(self, x: f64) -> i32 {
        if x.is_nan() {
            return 0;
        }
        let scaled = round_half_even(libm::ldexp(x, self.frac_bits as i32));
        if scaled <= self.raw_min() as f64 {
            self.raw_min()
        } else if scaled >= self.raw_max() as f64 {
            self.raw_max()
        } else {
            scaled as i32
        }
    }

    pub fn dequantize_raw(self, raw: i32) -> f64 {
        libm::ldexp(raw as f64, -(self.frac_bits as i32))
    }

    /// Re-expresses `value * 2^-from_frac` in this format with a single
    /// round-to-nearest-even step followed by saturation.
    pub fn rescale(self, value: i128, from_frac: u32) -> i32 {
        let to_frac = self.frac_bits();
        let v = if from_frac > to_frac {
            shift_right_rne(value, from_frac - to_frac)
        } else {
            let shift = to_frac - from_frac;
            if value != 0 && value.unsigned_abs().leading_zeros() <= shift + 1 {
                if value > 0 {
                    i128::MAX
                } else {
                    i128::MIN
                }
            } else {
                value << shift
            }
        };
        self.saturate(v)
    }
}

impl Default for FxpFormat {
    fn default() -> Self {
        FxpFormat::Q2_14
    }
}

impl fmt::Display for FxpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q{}.{}",
            self.total_bits - self.frac_bits,
            self.frac_bits
        )
    }
}

/// Round half to even on an already-scaled value.
pub(crate) fn round_half_even(v: f64) -> f64 {
    let r = libm::round(v);
    if (r - v).abs() == 0.5 {
        2.0 * libm::round(v / 2.0)
    } else {
        r
    }
}

/// Arithmetic right shift with round-to-nearest-even on the dropped bits.
pub(crate) fn shift_right_rne(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    if shift >= 127 {
        return 0;
    }
    let q = v >> shift;
    let rem = v - (q << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && (q & 1) == 1) {
        q + 1
    } else {
        q
    }
}

/// One fixed-point value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxpWord {
    raw: i32,
    format: FxpFormat,
}

impl FxpWord {
    /// Builds a word from a raw integer, saturating it into range.
    pub fn from_raw(raw: i64, format: FxpFormat) -> Self {
        FxpWord {
            raw: format.saturate(raw as i128),
            format,
        }
    }

    pub fn zero(format: FxpFormat) -> Self {
        FxpWord { raw: 0, format }
    }

    pub fn max(format: FxpFormat) -> Self {
        FxpWord {
            raw: format.raw_max(),
            format,
        }
    }

    pub fn min(format: FxpFormat) -> Self {
        FxpWord {
            raw: format.raw_min(),
            format,
        }
    }

    pub fn raw(self) -> i32 {
        self.raw
    }

    pub fn format(self) -> FxpFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        self.format.dequantize_raw(self.raw)
    }
}

impl fmt::Display for FxpWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.to_f64(), self.format)
    }
}

pub fn quantize(x: f64, fmt: FxpFormat) -> FxpWord {
    FxpWord {
        raw: fmt.quantize_raw(x),
        format: fmt,
    }
}

pub fn dequantize(w: FxpWord) -> f64 {
    w.to_f64()
}

/// Full-precision product re-scaled into `out_fmt`.
pub fn fxp_mul(a: FxpWord, b: FxpWord, out_fmt: FxpFormat) -> Result<FxpWord, FxpError> {
    if a.format != b.format {
        return Err(FxpError::FormatMismatch {
            left: a.format,
            right: b.format,
        });
    }
    let product = a.raw as i128 * b.raw as i128;
    Ok(FxpWord {
        raw: out_fmt.rescale(product, 2 * a.format.frac_bits()),
        format: out_fmt,
    })
}

/// Saturating add of two words sharing a format.
pub fn fxp_add(a: FxpWord, b: FxpWord) -> Result<FxpWord, FxpError> {
    if a.format != b.format {
        return Err(FxpError::FormatMismatch {
            left: a.format,
            right: b.format,
        });
    }
    Ok(FxpWord {
        raw: a.format.saturate(a.raw as i128 + b.raw as i128),
        format: a.format,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn q(x: f64) -> FxpWord {
        quantize(x, FxpFormat::Q2_14)
    }

    #[test]
    fn format_validation() {
        assert!(FxpFormat::new(16, 14).is_ok());
        assert_eq!(
            FxpFormat::new(16, 16),
            Err(FxpError::FracBits {
                total: 16,
                frac: 16
            })
        );
        assert_eq!(FxpFormat::new(1, 0), Err(FxpError::TotalBits(1)));
        assert_eq!(FxpFormat::new(33, 0), Err(FxpError::TotalBits(33)));
        assert!(FxpFormat::new(32, 31).is_ok());
    }

    #[test]
    fn range_and_resolution() {
        let f = FxpFormat::Q2_14;
        assert_eq!(f.min_value(), -2.0);
        assert_eq!(f.max_value(), 2.0 - 1.0 / 16384.0);
        assert_eq!(f.resolution(), 1.0 / 16384.0);
        let w = FxpFormat::new(32, 0).unwrap();
        assert_eq!(w.raw_min(), i32::MIN);
        assert_eq!(w.raw_max(), i32::MAX);
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(q(0.0).raw(), 0);
        assert_eq!(q(0.5).raw(), 8192);
        assert_eq!(q(10.0).raw(), 32767);
        assert_eq!(q(-10.0).raw(), -32768);
        assert_eq!(q(f64::INFINITY).raw(), 32767);
        assert_eq!(q(f64::NAN).raw(), 0);
    }

    #[test]
    fn ties_round_to_even() {
        let f = FxpFormat::new(8, 0).unwrap();
        assert_eq!(f.quantize_raw(2.5), 2);
        assert_eq!(f.quantize_raw(3.5), 4);
        assert_eq!(f.quantize_raw(-2.5), -2);
        assert_eq!(f.quantize_raw(-3.5), -4);
        assert_eq!(f.quantize_raw(2.4999), 2);
        assert_eq!(shift_right_rne(5, 1), 2);
        assert_eq!(shift_right_rne(7, 1), 4);
        assert_eq!(shift_right_rne(-5, 1), -2);
        assert_eq!(shift_right_rne(-7, 1), -4);
        assert_eq!(shift_right_rne(-6, 2), -2);
    }

    #[test]
    fn mul_examples() {
        let f = FxpFormat::Q2_14;
        assert_eq!(fxp_mul(q(1.0), q(1.0), f).unwrap(), q(1.0));
        assert_eq!(fxp_mul(q(0.5), q(0.5), f).unwrap().to_f64(), 0.25);
        assert_eq!(fxp_mul(q(1.9999), q(1.9999), f).unwrap(), FxpWord::max(f));
        assert_eq!(fxp_mul(q(-2.0), q(1.5), f).unwrap(), FxpWord::min(f));
    }

    #[test]
    fn add_examples() {
        let f = FxpFormat::Q2_14;
        let step = FxpWord::from_raw(1, f);
        assert_eq!(fxp_add(FxpWord::max(f), step).unwrap(), FxpWord::max(f));
        assert_eq!(fxp_add(q(0.25), q(-0.75)).unwrap().to_f64(), -0.5);
        assert_eq!(fxp_add(q(0.3), FxpWord::zero(f)).unwrap(), q(0.3));
    }

    #[test]
    fn mismatched_formats_rejected() {
        let a = q(0.5);
        let b = quantize(0.5, FxpFormat::new(8, 4).unwrap());
        assert!(matches!(
            fxp_add(a, b),
            Err(FxpError::FormatMismatch { .. })
        ));
        assert!(fxp_mul(a, b, FxpFormat::Q2_14).is_err());
    }

    #[test]
    fn rescale_widening_saturates() {
        let narrow = FxpFormat::new(8, 7).unwrap();
        assert_eq!(narrow.rescale(1, 0), narrow.raw_max());
        assert_eq!(narrow.rescale(i128::MAX / 2, 0), narrow.raw_max());
        assert_eq!(narrow.rescale(-1, 0), narrow.raw_min());
        assert_eq!(FxpFormat::Q2_14.rescale(3, 12), 12);
    }

    #[test]
    fn display() {
        assert_eq!(FxpFormat::Q2_14.to_string(), "Q2.14");
    }
}
