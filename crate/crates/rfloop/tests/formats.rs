//! Round-trip and truncation properties of the three file formats.

use proptest::prelude::*;
use rfloop::blob::{self, Weights};
use rfloop::manifest::{ModelManifest, Provenance};
use rfloop::rfds;
use rfloop_core::data::{Dataset, Sample};
use rfloop_core::train::quantize_weights;
use rfloop_core::{FxpFormat, ModelSpec, Shape, Tensor, WeightSet};

const ARCHS: [&str; 4] = [
    "conv2x3-out",
    "conv3x2-pool2-fc4-out",
    "conv2x3s2-conv2x1-fc3-fc2-out",
    "conv1x1-pool2-fc5-out",
];

fn model(arch: usize, side: usize, classes: usize) -> ModelSpec {
    let names = (0..classes).map(|i| format!("k{i}")).collect();
    ModelSpec::from_arch(side, ARCHS[arch], names).unwrap()
}

/// Weights built from raw bit patterns, so NaNs and subnormals are included.
fn weights_from_bits(model: &ModelSpec, bits: &[u32]) -> WeightSet<f32> {
    let mut w = WeightSet::<f32>::zeros(model);
    let mut it = bits.iter().cycle();
    for p in w.layers.iter_mut().flatten() {
        for v in p.weights.iter_mut().chain(p.bias.iter_mut()) {
            *v = f32::from_bits(*it.next().unwrap());
        }
    }
    w
}

fn dataset(side: usize, classes: usize, frames: &[(u8, Vec<u32>)]) -> Dataset {
    let mut d = Dataset::new(side, (0..classes).map(|i| format!("c{i}")).collect());
    let shape = Shape::new(side, side, 2);
    for (label, bits) in frames {
        let data = bits
            .iter()
            .cycle()
            .take(shape.len())
            .map(|b| f32::from_bits(*b))
            .collect();
        let x = Tensor::from_vec(shape, data).unwrap();
        d.push(Sample {
            x,
            label: *label as usize % classes,
        })
        .unwrap();
    }
    d
}

fn manifest(m: &ModelSpec) -> ModelManifest {
    ModelManifest::new(
        m,
        Provenance {
            seed: "18446744073709551615".into(),
            config_hash: "ab".repeat(32),
        },
    )
}

proptest! {
    #[test]
    fn rfds_reencodes_to_the_same_bytes(
        side in 1usize..6,
        classes in 1usize..5,
        frames in prop::collection::vec((any::<u8>(), prop::collection::vec(any::<u32>(), 1..8)), 0..6),
    ) {
        let bytes = rfds::encode(&dataset(side, classes, &frames)).unwrap();
        let back = rfds::decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        prop_assert_eq!(rfds::encode(&back).unwrap(), bytes);
    }

    #[test]
    fn float_blob_reencodes_to_the_same_bytes(
        arch in 0..ARCHS.len(),
        bits in prop::collection::vec(any::<u32>(), 1..32),
    ) {
        let m = model(arch, 6, 3);
        let hash = manifest(&m).hash();
        let w = Weights::Float(weights_from_bits(&m, &bits));
        let bytes = blob::encode(&m, &w, &hash).unwrap();
        let back = blob::decode(&m, &bytes, &hash).unwrap();
        prop_assert_eq!(blob::encode(&m, &back, &hash).unwrap(), bytes);
    }

    #[test]
    fn fixed_blob_round_trips_exactly(
        arch in 0..ARCHS.len(),
        total in 4u32..=32,
        frac_pct in 0u32..=100,
        values in prop::collection::vec(-8.0f32..8.0, 1..32),
    ) {
        let fmt = FxpFormat::new(total, (total - 1) * frac_pct / 100).unwrap();
        let m = model(arch, 5, 2);
        let hash = manifest(&m).with_format(fmt).hash();
        let bits: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
        let q = quantize_weights(&weights_from_bits(&m, &bits), fmt).weights;
        let w = Weights::Fixed(q);
        let bytes = blob::encode(&m, &w, &hash).unwrap();
        prop_assert_eq!(blob::decode(&m, &bytes, &hash).unwrap(), w);
    }

    #[test]
    fn every_proper_prefix_is_rejected(arch in 0..ARCHS.len(), cut in any::<prop::sample::Index>()) {
        let m = model(arch, 4, 2);
        let hash = manifest(&m).hash();
        let w = Weights::Float(weights_from_bits(&m, &[0x3f80_0000]));
        let bytes = blob::encode(&m, &w, &hash).unwrap();
        prop_assert!(blob::decode(&m, &bytes[..cut.index(bytes.len())], &hash).is_err());

        let d = rfds::encode(&dataset(3, 2, &[(0, vec![1]), (1, vec![2])])).unwrap();
        prop_assert!(rfds::decode(&d[..cut.index(d.len())]).is_err());
    }

    #[test]
    fn manifest_survives_toml(arch in 0..ARCHS.len(), side in 4usize..9, classes in 2usize..6) {
        let m = model(arch, side, classes);
        let man = manifest(&m);
        let back = ModelManifest::from_toml(&man.to_toml()).unwrap();
        prop_assert_eq!(back.hash(), man.hash());
        prop_assert_eq!(back.model().unwrap(), m);
        prop_assert_eq!(back, man);
    }
}
