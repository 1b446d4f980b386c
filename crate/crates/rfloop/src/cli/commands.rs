use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rfloop_core::data::Dataset;
use rfloop_core::dse::{self, CostModelParams, DesignPoint, DeviceBudget, Schedule};
use rfloop_core::fixed::{infer_fixed, FixedTensor};
use rfloop_core::infer::infer as infer_float;
use rfloop_core::siggen::{self, GenConfig, Normalization, Shaping, SignalClass};
use rfloop_core::train::{self, Metrics, Optimizer, TrainConfig, TrainError};
use rfloop_core::{FxpFormat, ModelSpec};

use super::{invalid, resolve_seed, CliError, Report};
use crate::blob::Weights;
use crate::manifest::{sha256_hex, Provenance};
use crate::store::{self, LoadedModel};
use crate::{rfds, FormatError};

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone()
        .ok_or_else(|| invalid(format!("missing --{flag}")))
}

fn config_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
        other => invalid(other),
    }
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    rfds::load(path).map_err(|e| with_file(path, e))
}

fn load_model(stem: &Path) -> Result<LoadedModel, CliError> {
    store::load_stem(stem).map_err(|e| with_file(stem, e))
}

fn with_file(path: &Path, e: FormatError) -> CliError {
    match CliError::from(e) {
        CliError::Io(m) if !m.starts_with(&*path.display().to_string()) => {
            CliError::Io(format!("{}: {m}", path.display()))
        }
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn fxp_format(bits: u32, frac: u32) -> Result<FxpFormat, CliError> {
    FxpFormat::new(bits, frac).map_err(invalid)
}

/// Class list: `modrec`, `ofdm` or comma-separated names.
pub fn parse_classes(spec: &str) -> Result<Vec<SignalClass>, CliError> {
    match spec.trim().to_ascii_lowercase().as_str() {
        "modrec" => Ok(siggen::modrec_classes()),
        "ofdm" => Ok(siggen::ofdm_classes()),
        _ => spec
            .split(',')
            .map(|s| s.trim().parse::<SignalClass>().map_err(invalid))
            .collect(),
    }
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct GenDataArgs {
    /// `modrec`, `ofdm` or a comma-separated list such as `BPSK,QPSK,OFDM64`.
    #[arg(long)]
    pub classes: Option<String>,
    /// Frames per class.
    #[arg(long)]
    pub count: Option<usize>,
    /// Frame side ℓ; frames hold ℓ² complex samples.
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `rms<k>` (clip at k times the RMS) or `max`.
    #[arg(long)]
    pub norm: Option<String>,
    #[arg(long)]
    pub sps: Option<usize>,
    #[arg(long)]
    pub rolloff: Option<f64>,
    /// Static carrier phase offset, radians.
    #[arg(long, allow_negative_numbers = true)]
    pub phase_offset: Option<f64>,
    /// Std. dev. of the per-frame phase error, radians.
    #[arg(long)]
    pub phase_jitter: Option<f64>,
    /// Carrier frequency offset, cycles per sample.
    #[arg(long, allow_negative_numbers = true)]
    pub frequency_offset: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn gen_data(a: &GenDataArgs) -> Result<Report, CliError> {
    let d = GenConfig::default();
    let classes_spec = a.classes.clone().unwrap_or_else(|| "modrec".into());
    let classes = parse_classes(&classes_spec)?;
    let count = required(&a.count, "count")?;
    if count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    let side = a.side.unwrap_or(32);
    if side == 0 {
        return Err(invalid("--side must be at least 1"));
    }
    let norm: Normalization = match &a.norm {
        Some(s) => s.parse().map_err(invalid)?,
        None => d.norm,
    };
    let cfg = GenConfig {
        snr_db: a.snr.unwrap_or(d.snr_db),
        shaping: Shaping {
            sps: a.sps.unwrap_or(d.shaping.sps),
            rolloff: a.rolloff.unwrap_or(d.shaping.rolloff),
            span: d.shaping.span,
        },
        phase_offset: a.phase_offset.unwrap_or(d.phase_offset),
        phase_jitter: a.phase_jitter.unwrap_or(d.phase_jitter),
        frequency_offset: a.frequency_offset.unwrap_or(d.frequency_offset),
        norm,
        seed: resolve_seed(a.seed)?,
    };
    if cfg.shaping.sps == 0 || !(0.0..=1.0).contains(&cfg.shaping.rolloff) {
        return Err(invalid("--sps must be positive and --rolloff in [0, 1]"));
    }
    let out = required(&a.out, "out")?;
    let effective = GenDataArgs {
        classes: Some(
            classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
        count: Some(count),
        side: Some(side),
        snr: Some(cfg.snr_db),
        seed: Some(cfg.seed),
        norm: Some(cfg.norm.to_string()),
        sps: Some(cfg.shaping.sps),
        rolloff: Some(cfg.shaping.rolloff),
        phase_offset: Some(cfg.phase_offset),
        phase_jitter: Some(cfg.phase_jitter),
        frequency_offset: Some(cfg.frequency_offset),
        out: Some(out.clone()),
    };
    let data = siggen::gen_dataset(&classes, count, side, &cfg);
    rfds::save(&out, &data).map_err(|e| with_file(&out, e))?;
    let counts = data.class_counts();
    let mut text = format!(
        "wrote {} frames of {side}x{side}x2 to {}\n",
        data.len(),
        out.display()
    );
    for (c, n) in data.classes().iter().zip(&counts) {
        writeln!(text, "{c:>10} {n}").unwrap();
    }
    let balance: serde_json::Map<String, Value> = data
        .classes()
        .iter()
        .cloned()
        .zip(counts.iter().map(|&n| json!(n)))
        .collect();
    Ok(Report {
        config: config_value(&effective),
        text,
        json: json!({ "path": out, "frames": data.len(), "classes": balance }),
    })
}

// ------------------------------------------------------------------- train

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Training set (RFDS).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Architecture string, e.g. `conv24x3-pool3-fc16-out`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Learning-rate factor applied every `lr-step` epochs.
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_step: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output stem: writes `<out>.toml`, `<out>.rflw` and `<out>.log.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn train(a: &TrainArgs, quiet: bool) -> Result<Report, CliError> {
    let d = TrainConfig::default();
    let data_path = required(&a.data, "data")?;
    let arch = required(&a.arch, "arch")?;
    let out = required(&a.out, "out")?;
    let optimizer = match a.optimizer.as_deref().unwrap_or("adam") {
        "adam" => Optimizer::Adam,
        "sgd" => Optimizer::Sgd,
        other => {
            return Err(invalid(format!(
                "unknown optimizer `{other}` (expected adam or sgd)"
            )))
        }
    };
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        optimizer,
        seed: resolve_seed(a.seed)?,
        lr_decay: a.lr_decay.unwrap_or(d.lr_decay),
        lr_step: a.lr_step.unwrap_or(d.lr_step),
    };
    cfg.validate().map_err(train_error)?;
    let effective = TrainArgs {
        data: Some(data_path.clone()),
        arch: Some(arch.clone()),
        epochs: Some(cfg.epochs),
        batch_size: Some(cfg.batch_size),
        lr: Some(cfg.learning_rate),
        optimizer: Some(
            if optimizer == Optimizer::Adam {
                "adam"
            } else {
                "sgd"
            }
            .into(),
        ),
        lr_decay: Some(cfg.lr_decay),
        lr_step: Some(cfg.lr_step),
        seed: Some(cfg.seed),
        out: Some(out.clone()),
    };
    let data = load_data(&data_path)?;
    let model =
        ModelSpec::from_arch(data.side(), &arch, data.classes().to_vec()).map_err(invalid)?;
    let (weights, log) = train::fit::<f32>(&model, &cfg, &data, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  lr {:.2e}  loss {:.4}  acc {:.4}",
                e.epoch + 1,
                e.learning_rate,
                e.loss,
                e.accuracy
            );
        }
    })
    .map_err(train_error)?;
    // The hash covers the settings that determine the weights, not paths.
    let hashed = TrainArgs {
        data: None,
        out: None,
        ..effective.clone()
    };
    let provenance = Provenance {
        seed: cfg.seed.to_string(),
        config_hash: sha256_hex(serde_json::to_string(&hashed).unwrap().as_bytes()),
    };
    store::save_model(&out, &model, &Weights::Float(weights), provenance)
        .map_err(|e| with_file(&out, e))?;
    let log_json: Vec<Value> = log
        .iter()
        .map(|e| json!({ "epoch": e.epoch + 1, "learning_rate": e.learning_rate, "loss": e.loss, "accuracy": e.accuracy }))
        .collect();
    let log_path = out.with_extension("log.json");
    std::fs::write(
        &log_path,
        serde_json::to_string_pretty(&json!({ "config": effective, "epochs": log_json })).unwrap(),
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", log_path.display())))?;
    let last = log.last().expect("at least one epoch");
    let text = format!(
        "model {} ({} parameters)\nfinal epoch: loss {:.4}, training accuracy {:.4}\nwrote {}, {}, {}\n",
        model.arch_string(),
        model.param_count(),
        last.loss,
        last.accuracy,
        store::manifest_path(&out).display(),
        store::blob_path(&out).display(),
        log_path.display()
    );
    Ok(Report {
        config: config_value(&effective),
        text,
        json: json!({ "arch": model.arch_string(), "parameters": model.param_count(), "epochs": log_json }),
    })
}

// ---------------------------------------------------------------- quantize

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct QuantizeArgs {
    /// Float model stem.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub frac: Option<u32>,
    /// Dataset whose frames set per-layer power-of-two scales before
    /// rounding; without it weights are rounded as they are.
    #[arg(long)]
    pub calibrate: Option<PathBuf>,
    /// Frames of the calibration set to use.
    #[arg(long)]
    pub calibrate_count: Option<usize>,
    /// Largest calibrated layer output as a fraction of the format maximum.
    #[arg(long)]
    pub headroom: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn quantize(a: &QuantizeArgs) -> Result<Report, CliError> {
    let stem = required(&a.model, "model")?;
    let out = required(&a.out, "out")?;
    let fmt = fxp_format(a.bits.unwrap_or(16), a.frac.unwrap_or(14))?;
    let count = a.calibrate_count.unwrap_or(1000);
    let headroom = a.headroom.unwrap_or(0.5);
    if !(headroom > 0.0 && headroom <= 1.0) {
        return Err(invalid("--headroom must be in (0, 1]"));
    }
    let effective = QuantizeArgs {
        model: Some(stem.clone()),
        bits: Some(fmt.total_bits()),
        frac: Some(fmt.frac_bits()),
        calibrate: a.calibrate.clone(),
        calibrate_count: a.calibrate.as_ref().map(|_| count),
        headroom: a.calibrate.as_ref().map(|_| headroom),
        out: Some(out.clone()),
    };
    let loaded = load_model(&stem)?;
    let Weights::Float(w) = &loaded.weights else {
        return Err(invalid(format!(
            "{}: model is already fixed point",
            stem.display()
        )));
    };
    let (scaled, ranges) = match &a.calibrate {
        Some(p) => {
            let data = load_data(p)?;
            let xs: Vec<_> = data
                .samples()
                .iter()
                .take(count)
                .map(|s| s.x.clone())
                .collect();
            if xs.is_empty() {
                return Err(invalid("calibration set is empty"));
            }
            train::calibrate_ranges(&loaded.model, w, &xs, fmt, headroom).map_err(train_error)?
        }
        None => (w.clone(), Vec::new()),
    };
    let q = train::quantize_weights(&scaled, fmt);
    let manifest = loaded.manifest.clone().with_format(fmt);
    store::save_with_manifest(
        &store::manifest_path(&out),
        &store::blob_path(&out),
        &manifest,
        &Weights::Fixed(q.weights.clone()),
    )
    .map_err(|e| with_file(&out, e))?;
    let mut text = format!(
        "format {fmt}\n{:>6} {:>10} {:>14} {:>10}\n",
        "layer", "scale", "max |error|", "saturated"
    );
    let mut rows = Vec::new();
    for r in &q.report {
        let scale = ranges
            .iter()
            .find(|x| x.layer == r.layer)
            .map_or(1.0, |x| x.scale);
        writeln!(
            text,
            "{:>6} {:>10} {:>14.3e} {:>10}",
            r.layer, scale, r.max_abs_error, r.saturated
        )
        .unwrap();
        rows.push(json!({ "layer": r.layer, "scale": scale, "max_abs_error": r.max_abs_error, "saturated": r.saturated }));
    }
    writeln!(
        text,
        "wrote {}, {}",
        store::manifest_path(&out).display(),
        store::blob_path(&out).display()
    )
    .unwrap();
    Ok(Report {
        config: config_value(&effective),
        text,
        json: json!({ "format": fmt.to_string(), "layers": rows, "saturated_layers": q.saturated_layers() }),
    })
}

// ------------------------------------------------------------------- infer

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct InferArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// First frame to classify.
    #[arg(long)]
    pub index: Option<usize>,
    /// Number of frames.
    #[arg(long)]
    pub count: Option<usize>,
}

/// Scores (as real numbers) and argmax of one frame.
fn predict(
    loaded: &LoadedModel,
    x: &rfloop_core::Tensor<f32>,
) -> Result<(usize, Vec<f64>), CliError> {
    match &loaded.weights {
        Weights::Float(w) => {
            let p = infer_float(&loaded.model, w, x).map_err(invalid)?;
            Ok((p.class, p.scores.iter().map(|&v| v as f64).collect()))
        }
        Weights::Fixed(f) => {
            let xq = FixedTensor::quantize_f32(x, f.format);
            let p = infer_fixed(&loaded.model, f, &xq).map_err(invalid)?;
            Ok((
                p.class,
                p.scores
                    .iter()
                    .map(|&v| f.format.dequantize_raw(v))
                    .collect(),
            ))
        }
    }
}

fn check_compatible(model: &ModelSpec, data: &Dataset) -> Result<(), CliError> {
    if data.side() != model.side() || data.classes() != model.classes() {
        return Err(invalid(format!(
            "dataset ({}x{}, classes {:?}) does not match model ({}x{}, classes {:?})",
            data.side(),
            data.side(),
            data.classes(),
            model.side(),
            model.side(),
            model.classes()
        )));
    }
    Ok(())
}

pub fn infer(a: &InferArgs) -> Result<Report, CliError> {
    let stem = required(&a.model, "model")?;
    let data_path = required(&a.data, "data")?;
    let index = a.index.unwrap_or(0);
    let count = a.count.unwrap_or(1);
    let effective = InferArgs {
        model: Some(stem.clone()),
        data: Some(data_path.clone()),
        index: Some(index),
        count: Some(count),
    };
    let loaded = load_model(&stem)?;
    let data = load_data(&data_path)?;
    check_compatible(&loaded.model, &data)?;
    if index + count > data.len() || count == 0 {
        return Err(invalid(format!(
            "frames {index}..{} out of range (dataset has {})",
            index + count,
            data.len()
        )));
    }
    let classes = loaded.model.classes();
    let mut text = String::new();
    let mut frames = Vec::new();
    for (k, s) in data.samples()[index..index + count].iter().enumerate() {
        let (class, scores) = predict(&loaded, &s.x)?;
        writeln!(
            text,
            "frame {} (true {}): predicted {}",
            index + k,
            classes[s.label],
            classes[class]
        )
        .unwrap();
        for (c, v) in classes.iter().zip(&scores) {
            writeln!(text, "  {c:>10} {v:>12.6}").unwrap();
        }
        frames.push(json!({
            "frame": index + k,
            "label": classes[s.label],
            "predicted": classes[class],
            "scores": classes.iter().cloned().zip(scores.iter().map(|&v| json!(v))).collect::<serde_json::Map<_, _>>(),
        }));
    }
    Ok(Report {
        config: config_value(&effective),
        text,
        json: json!({ "representation": if loaded.weights.format().is_some() { "fixed" } else { "float" }, "frames": frames }),
    })
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fixed-point model of the same architecture to compare against a
    /// float `--model`.
    #[arg(long)]
    pub fixed: Option<PathBuf>,
}

/// Per-class accuracy table followed by the confusion matrix.
pub fn metrics_table(classes: &[String], m: &Metrics) -> String {
    let w = classes.iter().map(|c| c.len()).max().unwrap_or(5).max(5);
    let mut t = format!("{:>w$}  accuracy\n", "class");
    for (c, a) in classes.iter().zip(&m.per_class) {
        writeln!(t, "{c:>w$}  {:>7.2}%", 100.0 * a).unwrap();
    }
    writeln!(
        t,
        "{:>w$}  {:>7.2}%  ({} frames)",
        "all",
        100.0 * m.accuracy,
        m.total()
    )
    .unwrap();
    writeln!(t, "\nconfusion (rows: true, columns: predicted)").unwrap();
    write!(t, "{:>w$}", "").unwrap();
    for c in classes {
        write!(t, " {c:>w$}").unwrap();
    }
    t.push('\n');
    for (c, row) in classes.iter().zip(&m.confusion) {
        write!(t, "{c:>w$}").unwrap();
        for n in row {
            write!(t, " {n:>w$}").unwrap();
        }
        t.push('\n');
    }
    t
}

fn metrics_json(classes: &[String], m: &Metrics) -> Value {
    json!({
        "accuracy": m.accuracy,
        "per_class": classes.iter().cloned().zip(m.per_class.iter().map(|&a| json!(a))).collect::<serde_json::Map<_, _>>(),
        "confusion": m.confusion,
    })
}

pub fn eval(a: &EvalArgs) -> Result<Report, CliError> {
    let stem = required(&a.model, "model")?;
    let data_path = required(&a.data, "data")?;
    let effective = EvalArgs {
        model: Some(stem.clone()),
        data: Some(data_path.clone()),
        fixed: a.fixed.clone(),
    };
    let loaded = load_model(&stem)?;
    let data = load_data(&data_path)?;
    check_compatible(&loaded.model, &data)?;
    let classes = loaded.model.classes().to_vec();
    match (&loaded.weights, &a.fixed) {
        (Weights::Float(w), fixed) => {
            let fixed_model = fixed.as_deref().map(load_model).transpose()?;
            let fw = match &fixed_model {
                Some(LoadedModel {
                    model,
                    weights: Weights::Fixed(f),
                    ..
                }) => {
                    if model.layers() != loaded.model.layers()
                        || model.classes() != loaded.model.classes()
                    {
                        return Err(invalid("--fixed model has a different architecture"));
                    }
                    Some(f)
                }
                Some(_) => return Err(invalid("--fixed model holds float weights")),
                None => None,
            };
            let ev = train::evaluate(&loaded.model, w, &data, fw).map_err(train_error)?;
            let mut text = format!(
                "float ({})\n{}",
                loaded.model.arch_string(),
                metrics_table(&classes, &ev.float)
            );
            let mut out = json!({ "float": metrics_json(&classes, &ev.float) });
            if let Some(fx) = &ev.fixed {
                write!(
                    text,
                    "\nfixed {}\n{}\nfixed - float accuracy: {:+.2} points\nargmax agreement: {:.2}%\n",
                    fx.format,
                    metrics_table(&classes, &fx.metrics),
                    100.0 * (fx.metrics.accuracy - ev.float.accuracy),
                    100.0 * fx.agreement
                )
                .unwrap();
                out["fixed"] = metrics_json(&classes, &fx.metrics);
                out["fixed"]["format"] = json!(fx.format.to_string());
                out["delta"] = json!(fx.metrics.accuracy - ev.float.accuracy);
                out["agreement"] = json!(fx.agreement);
            }
            Ok(Report {
                config: config_value(&effective),
                text,
                json: out,
            })
        }
        (Weights::Fixed(f), None) => {
            let mut pairs = Vec::with_capacity(data.len());
            for s in data.samples() {
                let p = infer_fixed(&loaded.model, f, &FixedTensor::quantize_f32(&s.x, f.format))
                    .map_err(invalid)?;
                pairs.push((s.label, p.class));
            }
            let m = Metrics::from_predictions(classes.len(), pairs);
            let mut j = metrics_json(&classes, &m);
            j["format"] = json!(f.format.to_string());
            Ok(Report {
                config: config_value(&effective),
                text: format!(
                    "fixed {} ({})\n{}",
                    f.format,
                    loaded.model.arch_string(),
                    metrics_table(&classes, &m)
                ),
                json: json!({ "fixed": j }),
            })
        }
        (Weights::Fixed(_), Some(_)) => {
            Err(invalid("--fixed needs a float --model to compare against"))
        }
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct EstimateArgs {
    /// Model stem; alternatively give --arch, --side and --num-classes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// `seq`, `pipeline[II][-conv|-fc]`, `unroll<N>[-conv|-fc]` or
    /// `<layer>.<loop>=<directive>,...`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Clock in MHz.
    #[arg(long)]
    pub clock: Option<f64>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub frac: Option<u32>,
    #[arg(long)]
    pub cycles_per_mac: Option<f64>,
    /// Board power in watts; adds an energy estimate.
    #[arg(long)]
    pub power: Option<f64>,
}

fn params_with(cpm: Option<f64>) -> Result<CostModelParams, CliError> {
    let mut p = CostModelParams::default();
    if let Some(c) = cpm {
        p.cycles_per_mac = c;
    }
    p.validate().map_err(invalid)?;
    Ok(p)
}

fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class{i}")).collect()
}

pub fn estimate(a: &EstimateArgs) -> Result<Report, CliError> {
    let (model, source) = match (&a.model, &a.arch) {
        (Some(stem), None) => {
            let m = crate::manifest::ModelManifest::load(&store::manifest_path(stem))
                .map_err(|e| with_file(stem, e))?;
            (
                m.model().map_err(|e| with_file(stem, e))?,
                json!({ "model": stem }),
            )
        }
        (None, Some(arch)) => {
            let side = a.side.unwrap_or(32);
            let n = a.num_classes.unwrap_or(5);
            let m = ModelSpec::from_arch(side, arch, class_names(n)).map_err(invalid)?;
            (m, json!({ "arch": arch, "side": side, "num_classes": n }))
        }
        _ => return Err(invalid("give exactly one of --model and --arch")),
    };
    let schedule: Schedule = a
        .schedule
        .as_deref()
        .unwrap_or("seq")
        .parse()
        .map_err(invalid)?;
    let fmt = fxp_format(a.bits.unwrap_or(16), a.frac.unwrap_or(14))?;
    let dp = DesignPoint {
        model,
        schedule,
        format: fmt,
        clock_mhz: a.clock.unwrap_or(100.0),
        params: params_with(a.cycles_per_mac)?,
    };
    let mut config = source;
    config["schedule"] = json!(dp.schedule.to_string());
    config["clock"] = json!(dp.clock_mhz);
    config["bits"] = json!(fmt.total_bits());
    config["frac"] = json!(fmt.frac_bits());
    config["cycles_per_mac"] = json!(dp.params.cycles_per_mac);
    config["power"] = json!(a.power);
    let budget = DeviceBudget::default();
    let lat = dse::estimate_latency(&dp).map_err(invalid)?;
    let res = dse::estimate_resources(&dp, &budget).map_err(invalid)?;
    let energy = a
        .power
        .map(|w| dse::estimate_energy(lat.millis, w))
        .transpose()
        .map_err(invalid)?;
    let mut text = format!(
        "{} @ {} MHz, schedule {}, {}\n{:>6} {:<14} {:>12} {:>6} {:>8} {:>8}\n",
        dp.model.arch_string(),
        dp.clock_mhz,
        dp.schedule,
        fmt,
        "layer",
        "nest",
        "cycles",
        "DSP",
        "W BRAM",
        "buf BRAM"
    );
    let mut layers = Vec::new();
    for (l, r) in lat.layers.iter().zip(&res.layers) {
        writeln!(
            text,
            "{:>6} {:<14} {:>12} {:>6} {:>8} {:>8}",
            l.layer, l.label, l.cycles, r.dsp, r.weight_blocks, r.buffer_blocks
        )
        .unwrap();
        layers.push(json!({
            "layer": l.layer, "nest": l.label, "cycles": l.cycles, "parallel_macs": l.parallel_macs,
            "dsp": r.dsp, "weight_blocks": r.weight_blocks, "buffer_blocks": r.buffer_blocks,
        }));
    }
    write!(
        text,
        "handoff cycles {}\ntotal {} cycles = {:.3} ms\nBRAM {} ({:.1}%), DSP {} ({:.1}%), LUT ~{:.0} ({:.1}%)\n",
        lat.handoff_cycles, lat.total_cycles, lat.millis, res.bram_blocks, res.bram_pct, res.dsp, res.dsp_pct, res.lut, res.lut_pct
    )
    .unwrap();
    if let Some(e) = energy {
        writeln!(text, "energy {e:.2} mJ").unwrap();
    }
    Ok(Report {
        config,
        text,
        json: json!({
            "layers": layers,
            "handoff_cycles": lat.handoff_cycles,
            "total_cycles": lat.total_cycles,
            "millis": lat.millis,
            "bram_blocks": res.bram_blocks, "input_blocks": res.input_blocks, "dsp": res.dsp, "lut": res.lut,
            "bram_pct": res.bram_pct, "dsp_pct": res.dsp_pct, "lut_pct": res.lut_pct,
            "energy_mj": energy,
        }),
    })
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Default, clap::Args, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SweepArgs {
    /// Architecture strings (comma-separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub arch: Vec<String>,
    /// Schedules (repeat the flag; custom schedules contain commas).
    #[arg(long)]
    pub schedule: Vec<String>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub clock: Option<f64>,
    #[arg(long)]
    pub bits: Option<u32>,
    #[arg(long)]
    pub frac: Option<u32>,
    #[arg(long)]
    pub cycles_per_mac: Option<f64>,
    #[arg(long)]
    pub power: Option<f64>,
    /// Output table; `.json` for JSON, anything else for CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    arch: &'a str,
    schedule: &'a str,
    cycles: u64,
    millis: f64,
    bram_blocks: u64,
    dsp: u64,
    lut: f64,
    energy_mj: Option<f64>,
    pareto: bool,
}

pub fn sweep(a: &SweepArgs) -> Result<Report, CliError> {
    if a.arch.is_empty() {
        return Err(invalid("missing --arch"));
    }
    let side = a.side.unwrap_or(32);
    let n = a.num_classes.unwrap_or(5);
    let models = a
        .arch
        .iter()
        .map(|s| {
            ModelSpec::from_arch(side, s, class_names(n)).map_err(|e| invalid(format!("{s}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let schedule_strs = if a.schedule.is_empty() {
        vec!["seq".to_string(), "pipeline-conv".to_string()]
    } else {
        a.schedule.clone()
    };
    let schedules = schedule_strs
        .iter()
        .map(|s| s.parse::<Schedule>().map_err(invalid))
        .collect::<Result<Vec<_>, _>>()?;
    let fmt = fxp_format(a.bits.unwrap_or(16), a.frac.unwrap_or(14))?;
    let params = params_with(a.cycles_per_mac)?;
    let clock = a.clock.unwrap_or(100.0);
    let effective = SweepArgs {
        arch: a.arch.clone(),
        schedule: schedules.iter().map(|s| s.to_string()).collect(),
        side: Some(side),
        num_classes: Some(n),
        clock: Some(clock),
        bits: Some(fmt.total_bits()),
        frac: Some(fmt.frac_bits()),
        cycles_per_mac: Some(params.cycles_per_mac),
        power: a.power,
        out: a.out.clone(),
    };
    let result = dse::sweep(
        &models,
        &schedules,
        fmt,
        clock,
        &params,
        &DeviceBudget::default(),
        a.power,
    )
    .map_err(invalid)?;
    let rows: Vec<SweepRow> = result
        .reports
        .iter()
        .enumerate()
        .map(|(i, r)| SweepRow {
            arch: &r.arch,
            schedule: &r.schedule,
            cycles: r.cycles,
            millis: r.millis,
            bram_blocks: r.bram_blocks,
            dsp: r.dsp,
            lut: r.lut,
            energy_mj: r.energy_mj,
            pareto: result.pareto.contains(&i),
        })
        .collect();
    if let Some(out) = &a.out {
        let io = |e: String| CliError::Io(format!("{}: {e}", out.display()));
        if out.extension().is_some_and(|e| e == "json") {
            let body =
                serde_json::to_string_pretty(&json!({ "rows": rows, "pareto": result.pareto }))
                    .unwrap();
            std::fs::write(out, body).map_err(|e| io(e.to_string()))?;
        } else {
            let mut w = csv::Writer::from_path(out).map_err(|e| io(e.to_string()))?;
            for r in &rows {
                w.serialize(r).map_err(|e| io(e.to_string()))?;
            }
            w.flush().map_err(|e| io(e.to_string()))?;
        }
    }
    let aw = rows.iter().map(|r| r.arch.len()).max().unwrap_or(4).max(4);
    let sw = rows
        .iter()
        .map(|r| r.schedule.len())
        .max()
        .unwrap_or(8)
        .max(8);
    let mut text = format!(
        "{:<aw$}  {:<sw$}  {:>12} {:>10} {:>6} {:>6} {:>8} {:>10}  pareto\n",
        "arch", "schedule", "cycles", "ms", "BRAM", "DSP", "LUT", "energy mJ"
    );
    for r in &rows {
        writeln!(
            text,
            "{:<aw$}  {:<sw$}  {:>12} {:>10.3} {:>6} {:>6} {:>8.0} {:>10}  {}",
            r.arch,
            r.schedule,
            r.cycles,
            r.millis,
            r.bram_blocks,
            r.dsp,
            r.lut,
            r.energy_mj.map_or("-".into(), |e| format!("{e:.2}")),
            if r.pareto { "*" } else { "" }
        )
        .unwrap();
    }
    Ok(Report {
        config: config_value(&effective),
        text,
        json: json!({ "rows": rows, "pareto": result.pareto }),
    })
}
