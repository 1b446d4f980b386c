//! Synthetic I/Q frames: PSK/QAM modulators with root-raised-cosine
//! shaping, an OFDM transmitter, a simple impairment channel, and the
//! conversion of frames into `side x side x 2` tensors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Sample};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SigError {
    #[error("unknown signal class `{0}`")]
    UnknownClass(String),
    #[error("{bits} bits is not a multiple of {per_symbol} bits per symbol")]
    BitCount { bits: usize, per_symbol: usize },
    #[error("fft size must be one of 64, 128 or 256, got {0}")]
    FftSize(usize),
    #[error("frame has {have} samples, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("samples per symbol must be at least 1")]
    Sps,
}

/// Single-carrier modulation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    /// Differential QPSK: each dibit selects a phase increment of a
    /// multiple of pi/2, starting from phase 0, so symbols sit on the axes.
    Dqpsk,
    /// pi/4-shifted DQPSK: increments are odd multiples of pi/4.
    Pi4Dqpsk,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Bpsk,
        Scheme::Qpsk,
        Scheme::Psk8,
        Scheme::Qam16,
        Scheme::Dqpsk,
        Scheme::Pi4Dqpsk,
    ];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Scheme::Bpsk => 1,
            Scheme::Qpsk | Scheme::Dqpsk | Scheme::Pi4Dqpsk => 2,
            Scheme::Psk8 => 3,
            Scheme::Qam16 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Bpsk => "BPSK",
            Scheme::Qpsk => "QPSK",
            Scheme::Psk8 => "8PSK",
            Scheme::Qam16 => "16QAM",
            Scheme::Dqpsk => "DQPSK",
            Scheme::Pi4Dqpsk => "PI4DQPSK",
        }
    }

    pub fn is_differential(self) -> bool {
        matches!(self, Scheme::Dqpsk | Scheme::Pi4Dqpsk)
    }

    /// Constellation indexed by the symbol's bit label (MSB first). For the
    /// differential schemes these are the phase increments.
    pub fn constellation(self) -> Vec<C> {
        match self {
            Scheme::Bpsk => vec![C::new(1.0, 0.0), C::new(-1.0, 0.0)],
            Scheme::Qpsk => (0..4)
                .map(|b| {
                    let i = if b & 2 == 0 { 1.0 } else { -1.0 };
                    let q = if b & 1 == 0 { 1.0 } else { -1.0 };
                    C::new(i, q) * FRAC_1_SQRT_2
                })
                .collect(),
            Scheme::Psk8 => (0..8)
                .map(|b| C::from_polar(1.0, 2.0 * PI * gray_inverse(b) as f64 / 8.0))
                .collect(),
            Scheme::Qam16 => (0..16)
                .map(|b| C::new(pam4(b >> 2), pam4(b & 3)) / libm::sqrt(10.0))
                .collect(),
            Scheme::Dqpsk => (0..4)
                .map(|b| C::from_polar(1.0, PI / 2.0 * gray_inverse(b) as f64))
                .collect(),
            Scheme::Pi4Dqpsk => (0..4)
                .map(|b| C::from_polar(1.0, PI / 4.0 * (2 * gray_inverse(b) + 1) as f64))
                .collect(),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SigError;
    fn from_str(s: &str) -> Result<Self, SigError> {
        Scheme::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SigError::UnknownClass(s.into()))
    }
}

/// Position of Gray code `g` in the natural sequence.
fn gray_inverse(g: usize) -> usize {
    let mut n = g;
    let mut shift = g >> 1;
    while shift != 0 {
        n ^= shift;
        shift >>= 1;
    }
    n
}

/// Gray-coded 4-level amplitude: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
fn pam4(b: usize) -> f64 {
    [-3.0, -1.0, 3.0, 1.0][b]
}

/// Maps bits (one per byte, 0 or 1, MSB first within a symbol) to symbols.
pub fn map_symbols(bits: &[u8], scheme: Scheme) -> Result<Vec<C>, SigError> {
    let k = scheme.bits_per_symbol();
    if !bits.len().is_multiple_of(k) {
        return Err(SigError::BitCount {
            bits: bits.len(),
            per_symbol: k,
        });
    }
    let table = scheme.constellation();
    let labels = bits.chunks(k).map(|c| {
        c.iter()
            .fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize)
    });
    if scheme.is_differential() {
        let mut phase = C::new(1.0, 0.0);
        Ok(labels
            .map(|l| {
                phase *= table[l];
                phase
            })
            .collect())
    } else {
        Ok(labels.map(|l| table[l]).collect())
    }
}

/// Root-raised-cosine taps with roll-off `beta`, `span` symbols long,
/// normalized to unit energy.
pub fn rrc_taps(beta: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps / 2) as i64;
    let mut h: Vec<f64> = (-half..=half)
        .map(|n| {
            let t = n as f64 / sps as f64;
            if n == 0 {
                1.0 - beta + 4.0 * beta / PI
            } else if beta > 0.0 && (libm::fabs(4.0 * beta * t) - 1.0).abs() < 1e-12 {
                beta / libm::sqrt(2.0)
                    * ((1.0 + 2.0 / PI) * libm::sin(PI / (4.0 * beta))
                        + (1.0 - 2.0 / PI) * libm::cos(PI / (4.0 * beta)))
            } else {
                (libm::sin(PI * t * (1.0 - beta))
                    + 4.0 * beta * t * libm::cos(PI * t * (1.0 + beta)))
                    / (PI * t * (1.0 - (4.0 * beta * t) * (4.0 * beta * t)))
            }
        })
        .collect();
    let energy = libm::sqrt(h.iter().map(|v| v * v).sum::<f64>());
    h.iter_mut().for_each(|v| *v /= energy);
    h
}

/// Complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<C>,
}

impl IqFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Scales the frame to unit mean power (no-op on an all-zero frame).
    pub fn normalize_power(&mut self) {
        let p = self.power();
        if p > 0.0 {
            let g = 1.0 / libm::sqrt(p);
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
    }
}

/// Pulse shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaping {
    pub sps: usize,
    pub rolloff: f64,
    /// Filter length in symbols.
    pub span: usize,
}

impl Default for Shaping {
    fn default() -> Self {
        Shaping {
            sps: 8,
            rolloff: 0.35,
            span: 8,
        }
    }
}

/// Upsamples `symbols` and filters them with an RRC pulse. Sample
/// `k * sps` of the result is the centre of symbol `k`; the output has
/// `symbols.len() * sps` samples and, for long random sequences, unit mean
/// power.
pub fn shape(symbols: &[C], shaping: Shaping) -> Result<IqFrame, SigError> {
    let sps = shaping.sps;
    if sps == 0 {
        return Err(SigError::Sps);
    }
    let taps = rrc_taps(shaping.rolloff, sps, shaping.span);
    let delay = (taps.len() - 1) / 2;
    let n = symbols.len() * sps;
    let gain = libm::sqrt(sps as f64);
    let samples = (0..n)
        .map(|t| {
            // y[t] = sum_k s[k] h[t + delay - k*sps]
            let mut acc = C::new(0.0, 0.0);
            let hi = (t + delay) / sps;
            let lo = (t + delay).saturating_sub(taps.len() - 1).div_ceil(sps);
            for k in lo..=hi.min(symbols.len().saturating_sub(1)) {
                acc += symbols[k] * taps[t + delay - k * sps];
            }
            acc * gain
        })
        .collect();
    Ok(IqFrame { samples })
}

/// Maps `bits` with `scheme` and RRC-shapes them (roll-off 0.35, 8-symbol
/// span) at `sps` samples per symbol.
pub fn modulate(bits: &[u8], scheme: Scheme, sps: usize) -> Result<IqFrame, SigError> {
    let symbols = map_symbols(bits, scheme)?;
    shape(
        &symbols,
        Shaping {
            sps,
            ..Shaping::default()
        },
    )
}

/// In-place radix-2 FFT; `inverse` uses `e^{+j...}` and no scaling.
pub fn fft_in_place(x: &mut [C], inverse: bool) {
    let n = x.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two");
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            x.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let w = C::from_polar(1.0, sign * 2.0 * PI / len as f64);
        for start in (0..n).step_by(len) {
            let mut wk = C::new(1.0, 0.0);
            for k in 0..len / 2 {
                let a = x[start + k];
                let b = x[start + k + len / 2] * wk;
                x[start + k] = a + b;
                x[start + k + len / 2] = a - b;
                wk *= w;
            }
        }
        len <<= 1;
    }
}

pub const OFDM_SIZES: [usize; 3] = [64, 128, 256];

/// Occupied subcarriers `±1 ..= ±26` at every FFT size, the 802.11a-style
/// allocation SDR stacks keep when only the FFT length changes. A larger FFT
/// therefore means narrower subcarrier spacing and a narrower occupied band.
pub fn ofdm_active_bins(_fft_size: usize) -> Vec<i64> {
    (-26..=26).filter(|&k| k != 0).collect()
}

pub fn cp_len(fft_size: usize) -> usize {
    fft_size / 8
}

/// One OFDM symbol body (no cyclic prefix) from `(bin, value)` pairs, scaled
/// by `1 / sqrt(bins.len())` so that unit-power loads give unit mean power.
pub fn ofdm_symbol(fft_size: usize, bins: &[(i64, C)]) -> Vec<C> {
    let mut x = vec![C::new(0.0, 0.0); fft_size];
    for &(k, v) in bins {
        x[k.rem_euclid(fft_size as i64) as usize] += v;
    }
    fft_in_place(&mut x, true);
    let g = 1.0 / libm::sqrt(bins.len().max(1) as f64);
    x.iter_mut().for_each(|v| *v *= g);
    x
}

/// `n_symbols` QPSK-loaded OFDM symbols, each preceded by its cyclic
/// prefix, normalized to unit mean power.
pub fn gen_ofdm<R: Rng>(
    fft_size: usize,
    n_symbols: usize,
    rng: &mut R,
) -> Result<IqFrame, SigError> {
    if !OFDM_SIZES.contains(&fft_size) {
        return Err(SigError::FftSize(fft_size));
    }
    let qpsk = Scheme::Qpsk.constellation();
    let bins = ofdm_active_bins(fft_size);
    let cp = cp_len(fft_size);
    let mut samples = Vec::with_capacity(n_symbols * (fft_size + cp));
    for _ in 0..n_symbols {
        let loads: Vec<(i64, C)> = bins
            .iter()
            .map(|&k| (k, qpsk[rng.random_range(0..4)]))
            .collect();
        let body = ofdm_symbol(fft_size, &loads);
        samples.extend_from_slice(&body[fft_size - cp..]);
        samples.extend_from_slice(&body);
    }
    let mut frame = IqFrame { samples };
    frame.normalize_power();
    Ok(frame)
}

/// Impairments applied to a clean frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Signal-to-noise ratio; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    /// Static carrier phase rotation in radians.
    pub phase_offset: f64,
    /// Carrier frequency offset in cycles per sample.
    pub frequency_offset: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            snr_db: 10.0,
            phase_offset: 0.0,
            frequency_offset: 0.0,
            seed: 0,
        }
    }
}

/// Rotates, frequency-shifts and adds complex white Gaussian noise whose
/// power is the frame's measured power divided by `10^(snr/10)`.
pub fn apply_channel_with<R: Rng>(frame: &IqFrame, cfg: &ChannelConfig, rng: &mut R) -> IqFrame {
    let rotated: Vec<C> = if cfg.phase_offset == 0.0 && cfg.frequency_offset == 0.0 {
        frame.samples.clone()
    } else {
        frame
            .samples
            .iter()
            .enumerate()
            .map(|(n, &s)| {
                s * C::from_polar(
                    1.0,
                    cfg.phase_offset + 2.0 * PI * cfg.frequency_offset * n as f64,
                )
            })
            .collect()
    };
    if cfg.snr_db == f64::INFINITY {
        return IqFrame { samples: rotated };
    }
    let noise_power = frame.power() / libm::pow(10.0, cfg.snr_db / 10.0);
    let sigma = libm::sqrt(noise_power / 2.0);
    IqFrame {
        samples: rotated
            .into_iter()
            .map(|s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                s + C::new(re, im) * sigma
            })
            .collect(),
    }
}

/// [`apply_channel_with`] using a generator seeded from `cfg.seed`.
pub fn apply_channel(frame: &IqFrame, cfg: &ChannelConfig) -> IqFrame {
    apply_channel_with(frame, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// How a frame is scaled into `[-1, 1]` before tensorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Divide by the largest |I| or |Q| in the frame.
    MaxAbs,
    /// Divide by `k` times the per-component RMS, then clip to `[-1, 1]`.
    Rms(f64),
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Rms(3.0)
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::MaxAbs => f.write_str("max"),
            Normalization::Rms(k) => write!(f, "rms{k}"),
        }
    }
}

impl FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "max" {
            return Ok(Normalization::MaxAbs);
        }
        s.strip_prefix("rms")
            .and_then(|k| {
                if k.is_empty() {
                    Some(3.0)
                } else {
                    k.parse().ok()
                }
            })
            .filter(|&k: &f64| k > 0.0)
            .map(Normalization::Rms)
            .ok_or_else(|| format!("unknown normalization `{s}` (expected max or rms<k>)"))
    }
}

/// Lays the first `side^2` samples out row-major: channel 0 holds I,
/// channel 1 holds Q.
pub fn frame_to_tensor(
    frame: &IqFrame,
    side: usize,
    norm: Normalization,
) -> Result<Tensor<f32>, SigError> {
    let n = side * side;
    if frame.len() < n {
        return Err(SigError::TooShort {
            have: frame.len(),
            need: n,
        });
    }
    let s = &frame.samples[..n];
    let (scale, clip) = match norm {
        Normalization::MaxAbs => (
            s.iter()
                .fold(0.0f64, |m, v| m.max(v.re.abs()).max(v.im.abs())),
            false,
        ),
        Normalization::Rms(k) => (
            k * libm::sqrt(s.iter().map(|v| v.norm_sqr()).sum::<f64>() / (2 * n) as f64),
            true,
        ),
    };
    let inv = if scale > 0.0 { 1.0 / scale } else { 0.0 };
    let conv = |v: f64| {
        let y = v * inv;
        (if clip { y.clamp(-1.0, 1.0) } else { y }) as f32
    };
    let mut data = Vec::with_capacity(2 * n);
    data.extend(s.iter().map(|v| conv(v.re)));
    data.extend(s.iter().map(|v| conv(v.im)));
    Ok(Tensor::from_vec(Shape::new(side, side, 2), data).unwrap())
}

/// A class of generated signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalClass {
    Modulation(Scheme),
    /// OFDM with the given FFT size.
    Ofdm(usize),
}

impl fmt::Display for SignalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignalClass::Modulation(m) => f.write_str(m.name()),
            SignalClass::Ofdm(n) => write!(f, "OFDM{n}"),
        }
    }
}

impl FromStr for SignalClass {
    type Err = SigError;
    fn from_str(s: &str) -> Result<Self, SigError> {
        let upper = s.to_ascii_uppercase();
        if let Some(n) = upper.strip_prefix("OFDM") {
            let n: usize = n.parse().map_err(|_| SigError::UnknownClass(s.into()))?;
            if !OFDM_SIZES.contains(&n) {
                return Err(SigError::FftSize(n));
            }
            return Ok(SignalClass::Ofdm(n));
        }
        s.parse().map(SignalClass::Modulation)
    }
}

/// The five modulation classes.
pub fn modrec_classes() -> Vec<SignalClass> {
    [
        Scheme::Bpsk,
        Scheme::Qpsk,
        Scheme::Psk8,
        Scheme::Qam16,
        Scheme::Dqpsk,
    ]
    .into_iter()
    .map(SignalClass::Modulation)
    .collect()
}

/// The three OFDM FFT-size classes.
pub fn ofdm_classes() -> Vec<SignalClass> {
    OFDM_SIZES.into_iter().map(SignalClass::Ofdm).collect()
}

/// Everything that shapes a generated dataset besides its class list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub snr_db: f64,
    pub shaping: Shaping,
    /// Static phase rotation applied to every frame.
    pub phase_offset: f64,
    /// Standard deviation of an additional per-frame Gaussian phase error
    /// (residual carrier-recovery error), radians.
    pub phase_jitter: f64,
    pub frequency_offset: f64,
    pub norm: Normalization,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            snr_db: 10.0,
            shaping: Shaping::default(),
            phase_offset: 0.0,
            phase_jitter: 0.0,
            frequency_offset: 0.0,
            norm: Normalization::default(),
            seed: 0,
        }
    }
}

/// Clean unit-power frame of `len` samples starting at a random position
/// inside a longer transmission (so symbol timing is random too).
pub fn clean_frame<R: Rng>(
    class: SignalClass,
    len: usize,
    shaping: Shaping,
    rng: &mut R,
) -> IqFrame {
    let mut frame = match class {
        SignalClass::Modulation(scheme) => {
            let sps = shaping.sps;
            let guard = shaping.span;
            let nsym = len.div_ceil(sps) + 2 * guard + 1;
            let bits: Vec<u8> = (0..nsym * scheme.bits_per_symbol())
                .map(|_| rng.random_range(0..2u8))
                .collect();
            let shaped = modulate_with(&bits, scheme, shaping);
            let start = guard * sps + rng.random_range(0..sps);
            IqFrame {
                samples: shaped.samples[start..start + len].to_vec(),
            }
        }
        SignalClass::Ofdm(n) => {
            let period = n + cp_len(n);
            let nsym = len.div_ceil(period) + 1;
            let full = gen_ofdm(n, nsym, rng).expect("class holds a valid size");
            let start = rng.random_range(0..period);
            IqFrame {
                samples: full.samples[start..start + len].to_vec(),
            }
        }
    };
    frame.normalize_power();
    frame
}

fn modulate_with(bits: &[u8], scheme: Scheme, shaping: Shaping) -> IqFrame {
    shape(&map_symbols(bits, scheme).expect("whole symbols"), shaping).expect("sps >= 1")
}

/// Generator for frame `index`; depends only on `(seed, index)`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One impaired, tensorized frame.
pub fn gen_frame<R: Rng>(
    class: SignalClass,
    side: usize,
    cfg: &GenConfig,
    rng: &mut R,
) -> Tensor<f32> {
    let clean = clean_frame(class, side * side, cfg.shaping, rng);
    let jitter = if cfg.phase_jitter > 0.0 {
        cfg.phase_jitter * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    let ch = ChannelConfig {
        snr_db: cfg.snr_db,
        phase_offset: cfg.phase_offset + jitter,
        frequency_offset: cfg.frequency_offset,
        seed: 0,
    };
    let noisy = apply_channel_with(&clean, &ch, rng);
    frame_to_tensor(&noisy, side, cfg.norm).expect("frame has side^2 samples")
}

/// Balanced dataset of `per_class` frames per class, shuffled. Frame `i`
/// (in class-major order) draws from [`frame_rng`]`(seed, i)`, so the result
/// does not depend on generation order.
pub fn gen_dataset(
    classes: &[SignalClass],
    per_class: usize,
    side: usize,
    cfg: &GenConfig,
) -> Dataset {
    let names = classes.iter().map(|c| c.to_string()).collect();
    let mut data = Dataset::new(side, names);
    for (label, &class) in classes.iter().enumerate() {
        for k in 0..per_class {
            let index = (label * per_class + k) as u64;
            let x = gen_frame(class, side, cfg, &mut frame_rng(cfg.seed, index));
            data.push(Sample { x, label })
                .expect("shape and label are consistent");
        }
    }
    data.shuffle(cfg.seed ^ 0x5eed_5eed);
    data
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C, b: C) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn bpsk_on_the_real_axis() {
        let s = map_symbols(&[0, 1, 1, 0], Scheme::Bpsk).unwrap();
        assert_eq!(
            s,
            vec![
                C::new(1.0, 0.0),
                C::new(-1.0, 0.0),
                C::new(-1.0, 0.0),
                C::new(1.0, 0.0)
            ]
        );
    }

    #[test]
    fn constellations_have_unit_power_and_distinct_points() {
        for scheme in Scheme::ALL {
            let pts = scheme.constellation();
            assert_eq!(pts.len(), 1 << scheme.bits_per_symbol());
            let p = pts.iter().map(|c| c.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-9, "{scheme}: {p}");
            for i in 0..pts.len() {
                for j in 0..i {
                    assert!(!close(pts[i], pts[j]));
                }
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let pts = Scheme::Psk8.constellation();
        for a in 0..8usize {
            for b in 0..8usize {
                if (pts[a] - pts[b]).norm() < 0.8 && a != b {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
        let q = Scheme::Qam16.constellation();
        for a in 0..16usize {
            for b in 0..16usize {
                let d = (q[a] - q[b]).norm() * libm::sqrt(10.0);
                if (d - 2.0).abs() < 1e-9 {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
    }

    #[test]
    fn dqpsk_zero_bits_keep_constant_increment() {
        let s = map_symbols(&[0; 8], Scheme::Dqpsk).unwrap();
        assert!(s.iter().all(|&v| close(v, C::new(1.0, 0.0))));
        let s = map_symbols(&[0; 8], Scheme::Pi4Dqpsk).unwrap();
        for w in s.windows(2) {
            assert!(close(w[1] / w[0], C::from_polar(1.0, PI / 4.0)));
        }
    }

    #[test]
    fn indivisible_bits_rejected() {
        assert_eq!(
            map_symbols(&[0; 5], Scheme::Qam16),
            Err(SigError::BitCount {
                bits: 5,
                per_symbol: 4
            })
        );
    }

    #[test]
    fn rrc_is_a_nyquist_pulse_after_matching() {
        let sps = 8;
        let h = rrc_taps(0.35, sps, 16);
        let mid = h.len() - 1;
        let full: Vec<f64> = (0..2 * h.len() - 1)
            .map(|n| {
                (0..h.len())
                    .filter(|&k| n >= k && n - k < h.len())
                    .map(|k| h[k] * h[n - k])
                    .sum()
            })
            .collect();
        assert!((full[mid] - 1.0).abs() < 1e-9);
        for m in 1..8 {
            assert!(
                full[mid + m * sps].abs() < 5e-3,
                "{m}: {}",
                full[mid + m * sps]
            );
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x: Vec<C> = (0..16)
            .map(|i| C::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut y = x.clone();
        fft_in_place(&mut y, false);
        for (k, yk) in y.iter().enumerate() {
            let d: C = x
                .iter()
                .enumerate()
                .map(|(n, &xn)| xn * C::from_polar(1.0, -2.0 * PI * (k * n) as f64 / 16.0))
                .sum();
            assert!((d - yk).norm() < 1e-9);
        }
    }

    #[test]
    fn single_subcarrier_is_a_complex_exponential() {
        let body = ofdm_symbol(64, &[(5, C::new(1.0, 0.0))]);
        for (n, v) in body.iter().enumerate() {
            assert!(close(
                *v,
                C::from_polar(1.0, 2.0 * PI * 5.0 * n as f64 / 64.0)
            ));
        }
    }

    #[test]
    fn ofdm_framing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = gen_ofdm(128, 3, &mut rng).unwrap();
        assert_eq!(f.len(), 3 * (128 + 16));
        assert!((f.power() - 1.0).abs() < 1e-12);
        assert_eq!(&f.samples[..16], &f.samples[128..144]);
        assert_eq!(gen_ofdm(100, 1, &mut rng), Err(SigError::FftSize(100)));
    }

    #[test]
    fn cyclic_prefix_shows_up_as_an_autocorrelation_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gen_ofdm(64, 40, &mut rng).unwrap().samples;
        let r = |lag: usize| -> f64 {
            let s: C = (0..x.len() - lag).map(|n| x[n] * x[n + lag].conj()).sum();
            s.norm()
        };
        // Past the first few lags the band-limited correlation has died out.
        let peak = (8..=200).max_by(|&a, &b| r(a).total_cmp(&r(b))).unwrap();
        assert_eq!(peak, 64);
    }

    #[test]
    fn larger_ffts_occupy_a_narrower_band() {
        // Same active bins at every size, so the occupied fraction halves.
        let occupied = |n: usize| ofdm_active_bins(n).len() as f64 / n as f64;
        assert!((occupied(64) - 52.0 / 64.0).abs() < 1e-12);
        assert!((occupied(128) - occupied(64) / 2.0).abs() < 1e-12);
        assert!((occupied(256) - occupied(64) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn channel_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = gen_ofdm(64, 2, &mut rng).unwrap();
        let clean = ChannelConfig {
            snr_db: f64::INFINITY,
            ..ChannelConfig::default()
        };
        assert_eq!(apply_channel(&f, &clean), f);
        let flipped = apply_channel(
            &f,
            &ChannelConfig {
                phase_offset: PI,
                ..clean
            },
        );
        for (a, b) in f.samples.iter().zip(&flipped.samples) {
            assert!(close(-*a, *b));
        }
        let cfg = ChannelConfig::default();
        assert_eq!(apply_channel(&f, &cfg), apply_channel(&f, &cfg));
    }

    #[test]
    fn tensor_layout() {
        let frame = IqFrame {
            samples: vec![
                C::new(1.0, 5.0),
                C::new(2.0, 6.0),
                C::new(3.0, 7.0),
                C::new(4.0, 8.0),
            ],
        };
        let t = frame_to_tensor(&frame, 2, Normalization::MaxAbs).unwrap();
        let expect: Vec<f32> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
            .iter()
            .map(|v| v / 8.0)
            .collect();
        assert_eq!(t.data(), &expect[..]);
        assert!(frame_to_tensor(&frame, 3, Normalization::MaxAbs).is_err());
    }

    #[test]
    fn class_names_round_trip() {
        for c in modrec_classes().into_iter().chain(ofdm_classes()) {
            assert_eq!(c.to_string().parse::<SignalClass>().unwrap(), c);
        }
        assert!("OFDM100".parse::<SignalClass>().is_err());
        assert!("FSK".parse::<SignalClass>().is_err());
        assert_eq!(
            "rms2.5".parse::<Normalization>(),
            Ok(Normalization::Rms(2.5))
        );
    }

    #[test]
    fn clean_frames_have_unit_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in modrec_classes().into_iter().chain(ofdm_classes()) {
            let f = clean_frame(c, 1024, Shaping::default(), &mut rng);
            assert_eq!(f.len(), 1024);
            assert!((f.power() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn datasets_are_balanced_and_seeded() {
        let cfg = GenConfig::default();
        let d = gen_dataset(&modrec_classes(), 20, 8, &cfg);
        assert_eq!(d.len(), 100);
        assert_eq!(d.class_counts(), vec![20; 5]);
        assert_eq!(d, gen_dataset(&modrec_classes(), 20, 8, &cfg));
        let other = GenConfig { seed: 1, ..cfg };
        assert_ne!(d, gen_dataset(&modrec_classes(), 20, 8, &other));
    }
}
