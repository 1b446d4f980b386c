//! Raw BRAM images of one layer's fixed-point parameters.
//!
//! Word order is the order the inference engine reads them: all weights
//! row-major in the blob's tensor shape (`[filter][channel][row][col]` for
//! Conv, `[unit][input]` for Dense), then the biases. Each word is a
//! little-endian two's-complement integer of [`FxpFormat::word_bytes`] bytes.
//! The image is zero padded to a whole number of 18 Kbit blocks, so its size
//! in bits divided by 18432 is exactly the block count the cost model
//! assigns to the layer's weight store.
//!
//! A 1x1 conv with a single weight of 1.0 and zero bias in Q2.14 starts
//! `00 40 00 00` and is then zero padded to 2304 bytes.

use rfloop_core::dse::bram_blocks;
use rfloop_core::model::Params;
use rfloop_core::{FxpFormat, ModelSpec};

use crate::blob::Weights;
use crate::wire::{get_word, put_word};
use crate::FormatError;

pub const BLOCK_BITS: u64 = 18 * 1024;
pub const BLOCK_BYTES: usize = (BLOCK_BITS / 8) as usize;

fn layer_params<'a>(
    model: &ModelSpec,
    weights: &'a Weights,
    layer: usize,
) -> Result<(&'a Params<i32>, FxpFormat), FormatError> {
    let Weights::Fixed(f) = weights else {
        return Err(FormatError::FloatWeights);
    };
    weights.check(model)?;
    let p = f
        .set
        .layers
        .get(layer)
        .and_then(|p| p.as_ref())
        .ok_or_else(|| FormatError::Invalid(format!("layer {layer} has no parameters")))?;
    Ok((p, f.format))
}

/// Blocks needed for `words` words of `fmt`.
pub fn image_blocks(words: usize, fmt: FxpFormat) -> u64 {
    bram_blocks(words as u64, 8 * fmt.word_bytes() as u64, 1, BLOCK_BITS)
}

pub fn export_bram_image(
    model: &ModelSpec,
    weights: &Weights,
    layer: usize,
) -> Result<Vec<u8>, FormatError> {
    let (p, fmt) = layer_params(model, weights, layer)?;
    let bytes = fmt.word_bytes();
    let words = p.weights.len() + p.bias.len();
    let mut out = Vec::with_capacity(image_blocks(words, fmt) as usize * BLOCK_BYTES);
    for &w in p.weights.iter().chain(&p.bias) {
        put_word(&mut out, w, bytes);
    }
    out.resize(image_blocks(words, fmt) as usize * BLOCK_BYTES, 0);
    Ok(out)
}

/// Reads an image back into layer `layer`'s parameters.
pub fn import_bram_image(
    model: &ModelSpec,
    fmt: FxpFormat,
    layer: usize,
    image: &[u8],
) -> Result<Params<i32>, FormatError> {
    let (w, b) = model
        .param_sizes()
        .get(layer)
        .copied()
        .flatten()
        .ok_or_else(|| FormatError::Invalid(format!("layer {layer} has no parameters")))?;
    let bytes = fmt.word_bytes();
    let expected = image_blocks(w + b, fmt) as usize * BLOCK_BYTES;
    if image.len() != expected {
        return Err(FormatError::Invalid(format!(
            "BRAM image for layer {layer} must be {expected} bytes, got {}",
            image.len()
        )));
    }
    let used = (w + b) * bytes;
    if image[used..].iter().any(|&x| x != 0) {
        return Err(FormatError::Invalid(format!(
            "BRAM image for layer {layer} has non-zero padding"
        )));
    }
    let mut words = image[..used].chunks_exact(bytes).map(get_word);
    let weights = words.by_ref().take(w).collect();
    let bias = words.collect();
    Ok(Params { weights, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rfloop_core::fixed::FixedWeights;
    use rfloop_core::model::{ConvSpec, Padding};
    use rfloop_core::{LayerSpec, WeightSet};

    #[test]
    fn unit_weight_encodes_as_0x4000() {
        let conv = ConvSpec {
            filters: 1,
            height: 1,
            width: 1,
            stride: 1,
            padding: Padding::Same,
        };
        // A 1x1 conv over both channels has two taps.
        let m = ModelSpec::new(
            1,
            &[
                LayerSpec::Conv(conv),
                LayerSpec::Relu,
                LayerSpec::Dense { units: 1 },
            ],
            vec!["x".into()],
        )
        .unwrap();
        let mut set = WeightSet::<i32>::zeros(&m);
        set.layers[0].as_mut().unwrap().weights = vec![0x4000, 0];
        let w = Weights::Fixed(FixedWeights {
            format: FxpFormat::Q2_14,
            set,
        });
        let img = export_bram_image(&m, &w, 0).unwrap();
        assert_eq!(img.len(), BLOCK_BYTES);
        assert_eq!(&img[..2], &[0x00, 0x40]);
        assert!(img[2..].iter().all(|&b| b == 0));
        let back = import_bram_image(&m, FxpFormat::Q2_14, 0, &img).unwrap();
        assert_eq!(back.weights, vec![0x4000, 0]);
        assert!(export_bram_image(&m, &w, 1).is_err());
    }

    #[test]
    fn float_weights_rejected() {
        let m = ModelSpec::from_arch(4, "conv1x1-out", vec!["x".into()]).unwrap();
        let w = Weights::Float(WeightSet::zeros(&m));
        assert!(matches!(
            export_bram_image(&m, &w, 0),
            Err(FormatError::FloatWeights)
        ));
    }
}
