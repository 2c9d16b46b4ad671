//! Exit criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Real-dataset criteria read their locations from
//! `MMTL_UCI_HAR_DIR`, `MMTL_WISDM_FILE` and `MMTL_MHEALTH_DIR`.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use mmtl_core::data::{
    invert_normalizer, parse_mhealth, parse_uci_har, parse_wisdm, prepare, DataConfig, DatasetKind, LabeledWindow,
    PreparedData, SyntheticConfig, WISDM_CLAIMED_ROWS,
};
use mmtl_core::metrics::{ablation_suite, bench, evaluate, ABLATION_LABELS, F1_SLACK_POINTS, MIN_STREAM_WINDOWS};
use mmtl_core::model::{self, build_model, flops_estimate, ModelConfig};
use mmtl_core::nn::{self, Mode};
use mmtl_core::training::{self, Checkpoint, CheckpointError, OptimizerState, TrainConfig, TrainStart};
use mmtl_core::{Params, Tensor};
use rand::Rng;
use support::{layer_grads, naive_depthwise, naive_pointwise, random_tensor, rng, rows};

type Check = Result<String, String>;
type Criterion<'a> = Box<dyn FnOnce() -> Check + 'a>;
type UciRun = Result<(PreparedData, Checkpoint, Duration), String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(started: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let spent = started.elapsed();
    ensure(
        spent <= limit,
        format!("{what} took {:.1}s, limit {}s", spent.as_secs_f64(), limit.as_secs()),
    )
}

fn env_path(var: &str) -> Result<PathBuf, String> {
    std::env::var_os(var)
        .map(PathBuf::from)
        .ok_or_else(|| format!("BLOCKED: {var} is not set; the dataset is not available in this environment"))
}

fn kernel_oracles() -> Check {
    let started = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (c, t) = (r.gen_range(1..8), r.gen_range(1..64));
        let padding = r.gen_range(0..4);
        let k = r.gen_range(1..=(t + 2 * padding).min(9));
        let stride = r.gen_range(1..4);
        let x = random_tensor(&mut r, &[c, t]);
        let w = random_tensor(&mut r, &[c, k]);
        let got = nn::conv1d_depthwise(&x, &w, stride, padding).map_err(|e| e.to_string())?;
        let want = naive_depthwise(&rows(&x), &rows(&w), stride, padding);
        ensure(got.shape() == [c, want[0].len()], "depthwise output shape")?;
        for (g, w) in got.data().iter().zip(want.iter().flatten()) {
            worst = worst.max((g - w).abs());
        }
    }
    for _ in 0..200 {
        let (c_in, c_out, t) = (r.gen_range(1..12), r.gen_range(1..12), r.gen_range(1..64));
        let x = random_tensor(&mut r, &[c_in, t]);
        let w = random_tensor(&mut r, &[c_out, c_in]);
        let b = random_tensor(&mut r, &[c_out]);
        let got = nn::conv1d_pointwise(&x, &w, Some(&b)).map_err(|e| e.to_string())?;
        let want = naive_pointwise(&rows(&x), &rows(&w), Some(b.data()));
        ensure(got.shape() == [c_out, t], "pointwise output shape")?;
        for (g, w) in got.data().iter().zip(want.iter().flatten()) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst <= 1e-5, format!("max abs deviation {worst:e} > 1e-5"))?;
    within(started, Duration::from_secs(60), "kernel suite")?;
    Ok(format!("400 cases, max abs deviation {worst:.1e}"))
}

fn gradients() -> Check {
    let started = Instant::now();
    let mut r = rng(202);
    let mut layer_worst: f64 = 0.0;
    for case in 0..20 {
        let errs = [
            ("depthwise", layer_grads::depthwise(&mut r)),
            ("pointwise", layer_grads::pointwise(&mut r)),
            ("conv", layer_grads::conv(&mut r)),
            ("batch_norm/train", layer_grads::batch_norm(&mut r, Mode::Train)),
            ("batch_norm/eval", layer_grads::batch_norm(&mut r, Mode::Eval)),
            ("fully_connected", layer_grads::fully_connected(&mut r)),
            ("parameter_free", layer_grads::parameter_free(&mut r)),
        ];
        for (name, e) in errs {
            ensure(e <= 1e-3, format!("{name} case {case}: relative error {e:e} > 1e-3"))?;
            layer_worst = layer_worst.max(e);
        }
    }
    let cfg = support::e2e::tiny_config();
    let (e32, at32) = support::e2e::worst_error_with_oracle::<f32, f64>(&cfg, 7, 1e-5);
    ensure(e32 <= 1e-2, format!("end-to-end f32: relative error {e32:e} at {at32}"))?;
    let (e64, at64) = support::e2e::worst_error::<f64>(&cfg, 7, 1e-6);
    ensure(e64 <= 1e-2, format!("end-to-end f64: relative error {e64:e} at {at64}"))?;
    within(started, Duration::from_secs(300), "gradient suite")?;
    Ok(format!(
        "layers {layer_worst:.1e}, end-to-end f32 {e32:.1e}, f64 {e64:.1e}"
    ))
}

fn synthetic_data(per_class: usize, window_len: usize, seed: u64) -> Result<PreparedData, String> {
    let cfg = DataConfig {
        synthetic: SyntheticConfig {
            per_class,
            window_len,
            ..SyntheticConfig::default()
        },
        ..DataConfig::default()
    };
    prepare(&cfg, seed).map_err(|e| e.to_string())
}

fn default_model_for(data: &PreparedData) -> ModelConfig {
    ModelConfig {
        input_channels: data.channels(),
        input_length: data.window_len(),
        num_classes: data.spec.num_classes(),
        ..ModelConfig::default()
    }
}

fn accuracy(params: &Params, cfg: &ModelConfig, windows: &[LabeledWindow]) -> Result<f64, String> {
    let report = evaluate(params, cfg, windows, 0.10).map_err(|e| e.to_string())?;
    Ok(report.classification.ok_or("no activity head")?.accuracy)
}

fn trainability() -> Check {
    let started = Instant::now();
    let small = synthetic_data(8, 128, 3)?;
    let model_cfg = default_model_for(&small);
    let batch: Vec<LabeledWindow> = small.train.iter().take(8).cloned().collect();
    let cfg = TrainConfig {
        dropout: 0.0,
        base_lr: 0.01,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut params: Params = build_model(&model_cfg, 3).map_err(|e| e.to_string())?;
    let losses = training::overfit_batch(&mut params, &model_cfg, &cfg, &batch, 200).map_err(|e| e.to_string())?;
    let hit = losses.iter().position(|&l| l < 0.01);
    let step = hit.ok_or_else(|| {
        format!(
            "one-batch loss {:.4} after 200 steps",
            losses.last().unwrap_or(&f64::NAN)
        )
    })?;

    // 167 per class: 501 windows.
    let data = synthetic_data(167, 128, 4)?;
    let model_cfg = default_model_for(&data);
    let cfg = TrainConfig {
        epochs: 50,
        seed: 4,
        ..TrainConfig::default()
    };
    let (ck, history) = training::train(&model_cfg, &cfg, &data.train, &data.val).map_err(|e| e.to_string())?;
    let acc = accuracy(&ck.params, &ck.model, &data.train)?;
    ensure(
        acc >= 0.95,
        format!("train accuracy {acc:.4} < 0.95 after {} epochs", history.records.len()),
    )?;
    within(started, Duration::from_secs(300), "trainability")?;
    Ok(format!(
        "overfit loss < 0.01 at step {}, train accuracy {acc:.4} after {} epochs",
        step + 1,
        history.records.len()
    ))
}

/// Per-window signal magnitude area of the intensity accelerometer, in m/s².
fn sma(window: &Tensor, first: usize, scale: f32) -> f64 {
    let t = window.shape()[1];
    let d = window.data();
    (0..t)
        .map(|i| {
            (0..3)
                .map(|a| (d[(first + a) * t + i] * scale).abs() as f64)
                .sum::<f64>()
        })
        .sum::<f64>()
        / t as f64
}

fn uci_run() -> UciRun {
    let root = env_path("MMTL_UCI_HAR_DIR")?;
    let started = Instant::now();
    let cfg = DataConfig {
        dataset: DatasetKind::UciHar,
        path: Some(root),
        ..DataConfig::default()
    };
    let data = prepare(&cfg, 0).map_err(|e| e.to_string())?;
    let model_cfg = default_model_for(&data);
    let train_cfg = TrainConfig {
        base_lr: 0.001,
        lr_decay_factor: 0.1,
        lr_decay_every: 10,
        batch_size: 32,
        weight_decay: 0.0005,
        dropout: 0.5,
        epochs: 30,
        ..TrainConfig::default()
    };
    let (ck, _) = training::train(&model_cfg, &train_cfg, &data.train, &data.val).map_err(|e| e.to_string())?;
    Ok((data, ck, started.elapsed()))
}

fn uci_activity(run: &UciRun) -> Check {
    let (data, ck, spent) = run.as_ref().map_err(Clone::clone)?;
    let params = flops_estimate(&ck.model).map_err(|e| e.to_string())?.params;
    let acc = accuracy(&ck.params, &ck.model, &data.test)?;
    ensure(acc >= 0.85, format!("test accuracy {acc:.4} < 0.85"))?;
    ensure(
        *spent <= Duration::from_secs(45 * 60),
        format!("run took {:.0}s, limit 2700s", spent.as_secs_f64()),
    )?;
    Ok(format!(
        "test accuracy {acc:.4}, {params} params, {} epochs, {:.0}s",
        ck.history.records.len(),
        spent.as_secs_f64()
    ))
}

fn uci_resistance(run: &UciRun) -> Check {
    let (data, ck, _) = run.as_ref().map_err(Clone::clone)?;
    // Baseline: least squares of the target on SMA, fit on train.
    let layout = &data.spec.layout;
    let first = layout.triples[layout.intensity_triple].first;
    let feature = |w: &LabeledWindow| -> Result<f64, String> {
        let raw = invert_normalizer(&w.window, &data.normalizer).map_err(|e| e.to_string())?;
        Ok(sma(&raw, first, layout.intensity_scale))
    };
    let xs: Vec<f64> = data.train.iter().map(feature).collect::<Result<_, _>>()?;
    let ys: Vec<f64> = data.train.iter().map(|w| w.resistance as f64).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let hits = data
        .test
        .iter()
        .map(|w| Ok(((my + slope * (feature(w)? - mx)).clamp(0.0, 1.0) - w.resistance as f64).abs() <= 0.10))
        .collect::<Result<Vec<bool>, String>>()?;
    let baseline = 100.0 * hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    ensure(baseline >= 70.0, format!("SMA baseline RPA {baseline:.2}% < 70%"))?;
    let report = evaluate(&ck.params, &ck.model, &data.test, 0.10).map_err(|e| e.to_string())?;
    let reg = report.regression.ok_or("no resistance head")?;
    ensure(reg.rpa_percent >= 85.0, format!("RPA {:.2}% < 85%", reg.rpa_percent))?;
    ensure(reg.mae <= 0.08, format!("MAE {:.4} > 0.08", reg.mae))?;
    Ok(format!(
        "RPA {:.2}%, MAE {:.4}, baseline RPA {baseline:.2}%",
        reg.rpa_percent, reg.mae
    ))
}

fn parser_counts() -> Check {
    let mut notes = Vec::new();
    let mut blocked = Vec::new();
    match env_path("MMTL_UCI_HAR_DIR") {
        Ok(root) => {
            let uci = parse_uci_har(&root).map_err(|e| e.to_string())?;
            ensure(
                uci.len() == 10_299,
                format!("UCI HAR has {} windows, expected 10299", uci.len()),
            )?;
            notes.push("UCI HAR 10299 windows".to_string());
        }
        Err(e) => blocked.push(e),
    }
    match env_path("MMTL_WISDM_FILE") {
        Ok(file) => {
            let w = parse_wisdm(&file).map_err(|e| e.to_string())?;
            ensure(
                w.accepted + w.skipped == w.raw_rows(),
                "WISDM accepted + skipped != raw rows",
            )?;
            let dev = (w.accepted as f64 - WISDM_CLAIMED_ROWS as f64).abs() / WISDM_CLAIMED_ROWS as f64;
            ensure(
                dev <= 0.005,
                format!(
                    "WISDM accepted {} deviates {:.3}% from {WISDM_CLAIMED_ROWS}",
                    w.accepted,
                    dev * 100.0
                ),
            )?;
            notes.push(format!("WISDM {} accepted, {} skipped", w.accepted, w.skipped));
        }
        Err(e) => blocked.push(e),
    }
    match env_path("MMTL_MHEALTH_DIR") {
        Ok(dir) => {
            let m = parse_mhealth(&dir).map_err(|e| e.to_string())?;
            ensure(
                m.subjects.len() == 10,
                format!("MHEALTH has {} subjects, expected 10", m.subjects.len()),
            )?;
            ensure(
                m.classes.len() == 12,
                format!("MHEALTH has {} non-null classes, expected 12", m.classes.len()),
            )?;
            notes.push("MHEALTH 10 subjects, 12 classes".to_string());
        }
        Err(e) => blocked.push(e),
    }
    if !blocked.is_empty() {
        let vars: Vec<&str> = blocked.iter().filter_map(|b| b.split_whitespace().nth(1)).collect();
        return Err(format!(
            "BLOCKED: {} not set; the datasets are not available in this environment",
            vars.join(", ")
        ));
    }
    Ok(notes.join(", "))
}

fn benchmark() -> Check {
    let data = synthetic_data(20, 128, 5)?;
    let cfg = default_model_for(&data);
    let params: Params = build_model(&cfg, 5).map_err(|e| e.to_string())?;
    let count = params.trainable_count();
    ensure(count <= 200_000, format!("default model has {count} params > 200k"))?;
    let raw: Vec<Tensor> = data
        .test
        .iter()
        .map(|w| invert_normalizer(&w.window, &data.normalizer))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let run = bench(&params, &cfg, &raw, &data.normalizer, 1000, 50, Some(50.0)).map_err(|e| e.to_string())?;
    let r = &run.report;
    let json: serde_json::Value = serde_json::to_value(r).map_err(|e| e.to_string())?;
    for key in [
        "RTR_ms",
        "LT_ms",
        "TP_fps",
        "CL_gflops",
        "MER",
        "PC_watts",
        "runs",
        "warmup",
    ] {
        ensure(
            json.get(key).is_some_and(|v| !v.is_null()),
            format!("report lacks {key}"),
        )?;
    }
    ensure(
        r.stream_windows >= MIN_STREAM_WINDOWS,
        "streamed fewer than 1000 windows",
    )?;
    ensure(
        r.rtr_ms <= r.lt_ms,
        format!("RTR {:.3} ms > LT {:.3} ms", r.rtr_ms, r.lt_ms),
    )?;
    ensure(r.rtr_ms <= 50.0, format!("RTR {:.3} ms > 50 ms", r.rtr_ms))?;
    ensure(r.tp_fps >= 20.0, format!("TP {:.1} fps < 20", r.tp_fps))?;
    Ok(format!(
        "{count} params, RTR {:.3} ms, LT {:.3} ms, TP {:.0} fps",
        r.rtr_ms, r.lt_ms, r.tp_fps
    ))
}

fn ablation() -> Check {
    let data = synthetic_data(40, 128, 6)?;
    let base = default_model_for(&data);
    let cfg = TrainConfig {
        epochs: 8,
        seed: 6,
        ..TrainConfig::default()
    };
    let table = ablation_suite(&base, &data, &cfg).map_err(|e| e.to_string())?;
    ensure(table.rows.len() == 5, format!("{} rows", table.rows.len()))?;
    for (row, label) in table.rows.iter().zip(ABLATION_LABELS) {
        ensure(
            row.configuration == label,
            format!("row {} labelled {}", label, row.configuration),
        )?;
        ensure(
            row.seed == cfg.seed && row.epochs_budget == cfg.epochs,
            format!("{label}: unequal budget"),
        )?;
        ensure(
            row.report.macro_f1().is_some() && row.report.rpa_percent().is_some(),
            format!("{label}: missing metrics"),
        )?;
    }
    let full = table.rows[0].report.macro_f1().unwrap_or(0.0) * 100.0;
    for row in &table.rows[1..] {
        let f1 = row.report.macro_f1().unwrap_or(0.0) * 100.0;
        let flagged = table.violations.iter().any(|v| v.starts_with(&row.configuration));
        ensure(
            full >= f1 - F1_SLACK_POINTS || flagged,
            format!("{}: F1 {f1:.2} beats full {full:.2} unflagged", row.configuration),
        )?;
        ensure(
            !flagged || full < f1 - F1_SLACK_POINTS,
            format!("{}: flagged without cause", row.configuration),
        )?;
    }
    ensure(table.to_csv().lines().count() == 6, "CSV row count")?;
    let f1s: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{:.1}", r.report.macro_f1().unwrap_or(0.0) * 100.0))
        .collect();
    Ok(format!(
        "macro F1 [{}], {} flagged",
        f1s.join(", "),
        table.violations.len()
    ))
}

fn checkpoint_round_trip() -> Check {
    let data = synthetic_data(10, 128, 7)?;
    let model_cfg = default_model_for(&data);
    let params: Params = build_model(&model_cfg, 7).map_err(|e| e.to_string())?;
    let mut ck = Checkpoint::new(params, model_cfg.clone(), TrainConfig::default());
    ck.optimizer = Some(OptimizerState::new(&ck.params));
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let mut r = rng(77);
    let mut drng = rng(0);
    for i in 0..100 {
        let w: Tensor = random_tensor(&mut r, &[model_cfg.input_channels, model_cfg.input_length]).cast();
        let a = model::predict(&w, &ck.params, &ck.model, Mode::Eval, &mut drng).map_err(|e| e.to_string())?;
        let b = model::predict(&w, &back.params, &back.model, Mode::Eval, &mut drng).map_err(|e| e.to_string())?;
        let same = |x: &Option<Vec<f32>>, y: &Option<Vec<f32>>| {
            x.iter()
                .flatten()
                .map(|v| v.to_bits())
                .eq(y.iter().flatten().map(|v| v.to_bits()))
        };
        ensure(
            same(&a.activity_probs, &b.activity_probs)
                && a.resistance.map(f32::to_bits) == b.resistance.map(f32::to_bits),
            format!("window {i}: outputs differ after reload"),
        )?;
    }
    let corrupt = |at: usize, with: &[u8]| {
        let mut b = bytes.clone();
        b[at..at + with.len()].copy_from_slice(with);
        Checkpoint::from_bytes(&b)
    };
    ensure(
        matches!(corrupt(0, b"XXXX"), Err(CheckpointError::Magic(_))),
        "bad magic not rejected as Magic",
    )?;
    ensure(
        matches!(corrupt(4, &99u32.to_le_bytes()), Err(CheckpointError::Version(99))),
        "bad version not rejected as Version",
    )?;
    ensure(
        matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 4]),
            Err(CheckpointError::Bounds(_))
        ),
        "truncated blob not rejected as Bounds",
    )?;
    ensure(
        matches!(corrupt(8, &u64::MAX.to_le_bytes()), Err(CheckpointError::Bounds(_))),
        "oversized manifest not rejected as Bounds",
    )?;
    Ok("100 windows bit-identical; magic, version and bounds corruption rejected".into())
}

fn pipeline_once() -> Result<(training::TrainHistory, String), String> {
    let data = synthetic_data(30, 128, 8)?;
    let model_cfg = default_model_for(&data);
    let cfg = TrainConfig {
        epochs: 4,
        seed: 8,
        ..TrainConfig::default()
    };
    let params = build_model(&training::effective_config(&model_cfg, &cfg), cfg.seed).map_err(|e| e.to_string())?;
    let (ck, history) = training::train_from(
        TrainStart::fresh(params),
        &model_cfg,
        &cfg,
        &data.train,
        &data.val,
        &mut |_| {},
    )
    .map_err(|e| e.to_string())?;
    let report = evaluate(&ck.params, &ck.model, &data.test, 0.10).map_err(|e| e.to_string())?;
    Ok((history, report.to_json()))
}

fn determinism() -> Check {
    let (h1, j1) = pipeline_once()?;
    let (h2, j2) = pipeline_once()?;
    ensure(h1 == h2, "training histories differ")?;
    ensure(j1.as_bytes() == j2.as_bytes(), "eval JSON differs")?;
    Ok(format!(
        "{} epochs, {} bytes of eval JSON identical",
        h1.records.len(),
        j1.len()
    ))
}

fn main() {
    let uci = catch_unwind(AssertUnwindSafe(uci_run)).unwrap_or_else(|_| Err("panicked".into()));
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("kernel oracles", Box::new(kernel_oracles)),
        ("gradients", Box::new(gradients)),
        ("trainability", Box::new(trainability)),
        ("UCI HAR activity accuracy", Box::new(|| uci_activity(&uci))),
        ("UCI HAR resistance head", Box::new(|| uci_resistance(&uci))),
        ("parser counts", Box::new(parser_counts)),
        ("benchmark", Box::new(benchmark)),
        ("ablation table", Box::new(ablation)),
        ("checkpoint round trip", Box::new(checkpoint_round_trip)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
