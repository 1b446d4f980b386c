//! Property tests for the core invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfloop_core::dse::{
    self, estimate_latency, estimate_resources, latency_pipelined, latency_sequential,
    pareto_front, DesignPoint, DesignReport, DeviceBudget, Directive, LoopDirective, Schedule,
};
use rfloop_core::fxp::{fxp_add, fxp_mul, quantize, FxpFormat, FxpWord};
use rfloop_core::infer::{apply_layer, infer};
use rfloop_core::model::{validate_architecture, ConvSpec, LayerSpec as L, Padding, PoolSpec};
use rfloop_core::ops::conv_forward;
use rfloop_core::siggen::{self, GenConfig, Scheme, SignalClass};
use rfloop_core::train::{
    epoch_permutation, loss, loss_and_grads, Example, Metrics, OptState, Optimizer,
};
use rfloop_core::{ModelSpec, Params, Shape, Tensor, WeightSet};

// ---------- fixed point ----------

fn format() -> impl Strategy<Value = FxpFormat> {
    (2u32..=32)
        .prop_flat_map(|t| (Just(t), 0..t))
        .prop_map(|(t, f)| FxpFormat::new(t, f).unwrap())
}

fn word(fmt: FxpFormat) -> impl Strategy<Value = FxpWord> {
    (fmt.raw_min() as i64..=fmt.raw_max() as i64).prop_map(move |r| FxpWord::from_raw(r, fmt))
}

proptest! {
    #[test]
    fn representable_values_round_trip(w in format().prop_flat_map(word)) {
        let x = w.to_f64();
        prop_assert_eq!(quantize(x, w.format()), w);
    }

    #[test]
    fn quantize_is_monotone(fmt in format(), a in -1e4f64..1e4, b in -1e4f64..1e4) {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(x, fmt).raw() <= quantize(y, fmt).raw());
    }

    #[test]
    fn saturating_add_commutes((a, b) in format().prop_flat_map(|f| (word(f), word(f)))) {
        prop_assert_eq!(fxp_add(a, b).unwrap(), fxp_add(b, a).unwrap());
    }

    #[test]
    fn add_is_exact_when_representable((a, b) in format().prop_flat_map(|f| (word(f), word(f)))) {
        let fmt = a.format();
        let exact = a.raw() as i64 + b.raw() as i64;
        let sum = fxp_add(a, b).unwrap();
        if (fmt.raw_min() as i64..=fmt.raw_max() as i64).contains(&exact) {
            prop_assert_eq!(sum.raw() as i64, exact);
        } else {
            prop_assert_eq!(sum.raw(), if exact > 0 { fmt.raw_max() } else { fmt.raw_min() });
        }
    }

    #[test]
    fn mul_is_exact_when_representable((a, b) in format().prop_flat_map(|f| (word(f), word(f)))) {
        // Rational product a*b / 2^(2f); representable iff divisible by 2^f and in range.
        let fmt = a.format();
        let f = fmt.frac_bits();
        let p = a.raw() as i128 * b.raw() as i128;
        let p_mul = fxp_mul(a, b, fmt).unwrap();
        if p % (1i128 << f) == 0 {
            let exact = p >> f;
            if (fmt.raw_min() as i128..=fmt.raw_max() as i128).contains(&exact) {
                prop_assert_eq!(p_mul.raw() as i128, exact);
            }
        }
    }
}

// ---------- convolution ----------

/// The convolution sum written literally with 1-based indices:
/// `Y[f](i,j) = sum_c sum_k sum_l Q[f][c](h-k, w-l) * X[c](1 + s(i-1) - k + off_h, 1 + s(j-1) - l + off_w)`
/// for `k` in `0..h`, `l` in `0..w`, zero outside the input, bias added last.
fn literal_conv(x: &Tensor<f32>, c: &ConvSpec, p: &Params<f32>) -> Tensor<f32> {
    let s = x.shape();
    let (n2, m2) = c.output_dims(s.rows, s.cols);
    let (oh, ow) = c.offsets();
    let (h, w, st) = (c.height as i64, c.width as i64, c.stride as i64);
    let q = |f: usize, ch: usize, r1: i64, c1: i64| {
        p.weights
            [((f * s.channels + ch) * c.height + (r1 - 1) as usize) * c.width + (c1 - 1) as usize]
    };
    let mut y = Tensor::zeros(Shape::new(n2, m2, c.filters));
    for f in 0..c.filters {
        for i in 1..=n2 as i64 {
            for j in 1..=m2 as i64 {
                let mut acc = 0.0f32;
                for ch in 0..s.channels {
                    for k in 0..h {
                        for l in 0..w {
                            let xv = x.padded(
                                ch,
                                1 + st * (i - 1) - k + oh as i64,
                                1 + st * (j - 1) - l + ow as i64,
                            );
                            acc += q(f, ch, h - k, w - l) * xv;
                        }
                    }
                }
                y.set(f, (i - 1) as usize, (j - 1) as usize, acc + p.bias[f]);
            }
        }
    }
    y
}

#[derive(Debug, Clone)]
struct ConvCase {
    x: Tensor<f32>,
    conv: ConvSpec,
    params: Params<f32>,
}

fn conv_case(zero_bias: bool) -> impl Strategy<Value = ConvCase> {
    (
        1usize..=8,
        1usize..=8,
        1usize..=3,
        1usize..=3,
        1usize..=4,
        1usize..=4,
        1usize..=2,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(move |(n, m, ch, filters, h, w, stride, full, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let conv = ConvSpec {
                filters,
                height: h,
                width: w,
                stride,
                padding: if full { Padding::Full } else { Padding::Same },
            };
            let mut v = |len| {
                (0..len)
                    .map(|_| rng.random_range(-1.0f32..1.0))
                    .collect::<Vec<_>>()
            };
            let x = Tensor::from_vec(Shape::new(n, m, ch), v(n * m * ch)).unwrap();
            let weights = v(filters * conv.taps(ch));
            let bias = if zero_bias {
                vec![0.0; filters]
            } else {
                v(filters)
            };
            ConvCase {
                x,
                conv,
                params: Params { weights, bias },
            }
        })
}

/// Relative closeness; values below 1 in magnitude are compared absolutely.
fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()).max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn conv_matches_literal_sum(case in conv_case(false)) {
        let fast = conv_forward(&case.x, &case.conv, &case.params).unwrap();
        prop_assert_eq!(fast, literal_conv(&case.x, &case.conv, &case.params));
    }

    #[test]
    fn conv_is_linear(case in conv_case(true), a in -4.0f64..4.0, seed in any::<u64>()) {
        let params = Params {
            weights: case.params.weights.iter().map(|&v| v as f64).collect(),
            bias: case.params.bias.iter().map(|&v| v as f64).collect(),
        };
        let f = |x: &Tensor<f64>| conv_forward(x, &case.conv, &params).unwrap().into_data();
        let x = case.x.map(|v| v as f64);
        let fx: Vec<f64> = f(&x).iter().map(|v| a * v).collect();
        prop_assert!(close(&f(&x.map(|v| a * v)), &fx, 1e-6));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let other = Tensor::from_vec(
            x.shape(),
            (0..x.shape().len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ).unwrap();
        let sum = Tensor::from_vec(x.shape(), x.data().iter().zip(other.data()).map(|(p, q)| p + q).collect())
            .unwrap();
        let parts: Vec<f64> = f(&x).iter().zip(f(&other)).map(|(p, q)| p + q).collect();
        prop_assert!(close(&f(&sum), &parts, 1e-6));
    }

    #[test]
    fn conv_is_shift_equivariant(case in conv_case(true)) {
        let mut conv = case.conv;
        conv.stride = 1;
        let s = case.x.shape();
        // Shift down and right by one pixel.
        let mut shifted = Tensor::zeros(s);
        for ch in 0..s.channels {
            for i in 1..s.rows {
                for j in 1..s.cols {
                    shifted.set(ch, i, j, case.x.get(ch, i - 1, j - 1));
                }
            }
        }
        let y = conv_forward(&case.x, &conv, &case.params).unwrap();
        let ys = conv_forward(&shifted, &conv, &case.params).unwrap();
        let (oh, ow) = conv.offsets();
        // Interior: every tap of y(i,j) and ys(i+1,j+1) reads inside the
        // input, away from the first row/column the shift zeroes.
        for f in 0..conv.filters {
            for i in 0..y.shape().rows.saturating_sub(1) {
                for j in 0..y.shape().cols.saturating_sub(1) {
                    let rows_ok = i + oh + 1 >= conv.height && i + oh < s.rows - 1;
                    let cols_ok = j + ow + 1 >= conv.width && j + ow < s.cols - 1;
                    if rows_ok && cols_ok {
                        prop_assert_eq!(ys.get(f, i + 1, j + 1), y.get(f, i, j));
                    }
                }
            }
        }
    }
}

// ---------- models ----------

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn random_weights(model: &ModelSpec, seed: u64) -> WeightSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: WeightSet<f64> = WeightSet::init(model, &mut rng);
    for p in w.layers.iter_mut().flatten() {
        p.bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    w
}

fn random_input(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(
        shape,
        (0..shape.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

const ARCHS: [&str; 4] = [
    "conv4x3-pool2-fc6-out",
    "conv3x3-pool2-conv2x2-pool2-fc6-fc4-out",
    "conv2x3s2full-avgpool2-out",
    "conv3x2-conv2x3full-pool3-out-softmax",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn infer_is_left_fold_of_layers(arch in prop::sample::select(&ARCHS[..]), side in 5usize..10, seed in any::<u64>()) {
        let model = ModelSpec::from_arch(side, arch, names(3)).unwrap();
        let w = random_weights(&model, seed);
        let x = random_input(model.input_shape(), &mut ChaCha8Rng::seed_from_u64(!seed));
        let folded = (0..model.layers().len())
            .try_fold(x.clone(), |acc, i| apply_layer(&model, &w, i, &acc))
            .unwrap();
        prop_assert_eq!(infer(&model, &w, &x).unwrap().scores, folded.into_data());
    }
}

fn conv() -> L {
    L::Conv(ConvSpec::square(24, 3))
}

fn pool() -> L {
    L::Pool(PoolSpec::max(3))
}

#[test]
fn grammar_accepts_tables_and_rejects_deletions() {
    let dense = |units| L::Dense { units };
    let table_one = vec![conv(), L::Relu, pool(), dense(16), L::Relu, dense(5)];
    let table_two = vec![
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
    for arch in [table_one, table_two] {
        validate_architecture(&arch).unwrap();
        for i in 0..arch.len() {
            let mut cut = arch.clone();
            let removed = cut.remove(i);
            let verdict = validate_architecture(&cut);
            if removed == pool() {
                // Pooling is optional per block, so dropping one stays valid.
                assert!(verdict.is_ok(), "removing pool at {i}");
            } else {
                assert!(
                    verdict.is_err(),
                    "removing layer {i} ({removed:?}) was accepted"
                );
            }
        }
    }
}

// ---------- trainer ----------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_sgd_step_decreases_loss(arch in prop::sample::select(&ARCHS[..3]), seed in any::<u64>()) {
        let model = ModelSpec::from_arch(6, arch, names(3)).unwrap();
        let w = random_weights(&model, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let batch: Vec<Example<f64>> = (0..4)
            .map(|k| Example { x: random_input(model.input_shape(), &mut rng), label: k % 3 })
            .collect();
        let (before, grads) = loss_and_grads(&model, &w, &batch).unwrap();
        let decreased = [1e-2, 1e-3, 1e-4].iter().any(|&lr| {
            let mut w2 = w.clone();
            OptState::new(&model, Optimizer::Sgd).step(&mut w2, &grads, lr);
            loss(&model, &w2, &batch).unwrap() < before
        });
        prop_assert!(decreased);
    }
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let m = Metrics::from_predictions(4, pairs.iter().copied());
        let trace: usize = (0..4).map(|i| m.confusion[i][i]).sum();
        prop_assert_eq!(m.total(), pairs.len());
        prop_assert_eq!(m.accuracy, trace as f64 / m.total() as f64);
        for class in 0..4 {
            let n = pairs.iter().filter(|p| p.0 == class).count();
            prop_assert_eq!(m.confusion[class].iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn permutation_depends_on_seed_and_epoch(n in 2usize..300, seed in any::<u64>(), epoch in 0usize..50) {
        let p = epoch_permutation(n, seed, epoch);
        prop_assert_eq!(&p, &epoch_permutation(n, seed, epoch));
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }
}

// ---------- signal generator ----------

fn classes() -> Vec<SignalClass> {
    let mut c: Vec<SignalClass> = Scheme::ALL
        .into_iter()
        .map(SignalClass::Modulation)
        .collect();
    c.extend(siggen::ofdm_classes());
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_frames_have_unit_power(class in prop::sample::select(classes()), side in 8usize..40, seed in any::<u64>()) {
        let frame = siggen::clean_frame(class, side * side, Default::default(), &mut siggen::frame_rng(seed, 0));
        prop_assert!((frame.power() - 1.0).abs() < 1e-3);
    }
}

#[test]
fn generation_is_seeded() {
    let classes = [SignalClass::Modulation(Scheme::Qpsk), SignalClass::Ofdm(64)];
    let cfg = GenConfig {
        seed: 11,
        ..Default::default()
    };
    let a = siggen::gen_dataset(&classes, 4, 8, &cfg);
    let b = siggen::gen_dataset(&classes, 4, 8, &cfg);
    let bits = |d: &rfloop_core::data::Dataset| {
        d.samples()
            .iter()
            .flat_map(|s| s.x.data().iter().map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    let c = siggen::gen_dataset(&classes, 4, 8, &GenConfig { seed: 12, ..cfg });
    assert_ne!(bits(&a), bits(&c));
}

// ---------- cost model ----------

proptest! {
    #[test]
    fn pipelining_never_loses(depth in 1u64..64, trips in 1u64..10_000, ii in 1u64..64) {
        prop_assume!(ii <= depth);
        prop_assert!(latency_pipelined(depth, trips, ii) <= latency_sequential(depth, trips));
    }
}

#[test]
fn three_stage_pipeline_speedup() {
    let speedup = latency_sequential(3, 100) as f64 / latency_pipelined(3, 100, 1) as f64;
    assert!((2.9..=3.0).contains(&speedup), "{speedup}");
}

fn cycles(side: usize, arch: &str, schedule: &Schedule) -> u64 {
    let model = ModelSpec::from_arch(side, arch, names(5)).unwrap();
    estimate_latency(&DesignPoint::new(model, schedule.clone()))
        .unwrap()
        .total_cycles
}

fn schedule() -> impl Strategy<Value = Schedule> {
    prop::sample::select(vec![
        "seq",
        "pipeline-conv",
        "pipeline",
        "unroll2",
        "unroll4-fc",
        "pipeline2-conv",
    ])
    .prop_map(|s| s.parse().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn cycles_grow_with_model_size(
        f in 1usize..32, k in 1usize..5, u in 1usize..32, side in 4usize..40, sched in schedule(),
    ) {
        let arch = |f: usize, u: usize| format!("conv{f}x{k}-pool2-fc{u}-out");
        let base = cycles(side, &arch(f, u), &sched);
        prop_assert!(cycles(side, &arch(f + 1, u), &sched) > base);
        prop_assert!(cycles(side, &arch(f, u + 1), &sched) > base);
        // Pool output only grows with the input every second side length.
        prop_assert!(cycles(side + 2, &arch(f, u), &sched) > base);
    }

    #[test]
    fn directive_order_is_irrelevant(sched in schedule(), seed in any::<u64>()) {
        let model = ModelSpec::from_arch(16, "conv12x3-pool3-fc16-fc8-out", names(5)).unwrap();
        let nests = dse::lower(&model);
        let mut directives: Vec<LoopDirective> = sched.directives(&nests, &model);
        // Also unroll some outer loops so there is something to reorder.
        for n in &nests {
            if n.loops.len() > 1 {
                directives.push(LoopDirective {
                    layer: n.layer,
                    loop_name: n.loops[0].name.into(),
                    directive: Directive::Unroll { factor: 2 },
                });
            }
        }
        let point = |d: Vec<LoopDirective>| DesignPoint::new(model.clone(), Schedule::Custom(d));
        let mut shuffled = directives.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let budget = DeviceBudget::default();
        let a = point(directives);
        let b = point(shuffled);
        prop_assert_eq!(estimate_resources(&a, &budget).unwrap(), estimate_resources(&b, &budget).unwrap());
        prop_assert_eq!(estimate_latency(&a).unwrap(), estimate_latency(&b).unwrap());
    }

    #[test]
    fn pareto_front_is_exactly_the_undominated_set(
        pts in prop::collection::vec((1u64..20, 1u64..20, 1u64..20), 1..40),
    ) {
        let reports: Vec<DesignReport> = pts
            .iter()
            .map(|&(cycles, dsp, bram_blocks)| DesignReport {
                arch: String::new(),
                schedule: String::new(),
                cycles,
                millis: 0.0,
                bram_blocks,
                dsp,
                lut: 0.0,
                energy_mj: None,
            })
            .collect();
        let front = pareto_front(&reports);
        let dominated = |i: usize| {
            pts.iter().any(|q| {
                let p = pts[i];
                q.0 <= p.0 && q.1 <= p.1 && q.2 <= p.2 && q != &p
            })
        };
        for i in 0..pts.len() {
            prop_assert_eq!(front.contains(&i), !dominated(i));
        }
    }
}
