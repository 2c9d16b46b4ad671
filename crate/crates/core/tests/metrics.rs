mod support;

use mmtl_core::data::{prepare, DataConfig, PreparedData, SyntheticConfig};
use mmtl_core::metrics::{
    ablation_suite, auc_roc, bench, classification_metrics, evaluate, matched_plain_backbone, regression_metrics,
    ABLATION_LABELS, DEFAULT_TOLERANCE, MIN_BENCH_RUNS, MIN_BENCH_WARMUP, PC_NOT_MEASURED,
};
use mmtl_core::model::{build_model, flops_estimate, predict, Backbone, ModelConfig};
use mmtl_core::nn::Mode;
use mmtl_core::training::TrainConfig;
use mmtl_core::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use support::e2e::tiny_config;

/// Pairwise one-vs-rest AUC: P(score_pos > score_neg) + ½ P(tie).
fn brute_auc(probs: &[Vec<f64>], labels: &[usize]) -> Option<f64> {
    let k = probs[0].len();
    let mut aucs = Vec::new();
    for c in 0..k {
        let pos: Vec<f64> = probs
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p[c])
            .collect();
        let neg: Vec<f64> = probs
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l != c)
            .map(|(p, _)| p[c])
            .collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        aucs.push(wins / (pos.len() * neg.len()) as f64);
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn quantized_probs(rng: &mut impl Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            // Coarse values so ties are common.
            let raw: Vec<f64> = (0..k).map(|_| f64::from(rng.gen_range(0..6u8)) + 0.1).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_matches_pairwise_count(seed in any::<u64>(), n in 2usize..200, k in 2usize..5) {
        let mut rng = support::rng(seed);
        let probs = quantized_probs(&mut rng, n, k);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let got = auc_roc(&probs, &labels).unwrap();
        let want = brute_auc(&probs, &labels);
        match (got, want) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn confusion_rows_and_accuracy_identity(seed in any::<u64>(), n in 1usize..300, k in 1usize..6) {
        let mut rng = support::rng(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let m = classification_metrics(&preds, &labels, k).unwrap();
        for (c, row) in m.confusion.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), labels.iter().filter(|&&l| l == c).count());
        }
        // Accuracy is the support-weighted mean recall.
        let weighted: f64 = m.per_class.iter().map(|c| c.recall * c.support as f64).sum::<f64>() / n as f64;
        prop_assert!((m.accuracy - weighted).abs() < 1e-12);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let p2: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
        let l2: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(classification_metrics(&p2, &l2, k).unwrap(), m);
    }

    #[test]
    fn regression_against_direct_sums(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = support::rng(seed);
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = regression_metrics(&pred, &truth, DEFAULT_TOLERANCE).unwrap();
        let mae = pred.iter().zip(&truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n as f64;
        let rmse = (pred.iter().zip(&truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64).sqrt();
        let fer = 100.0 * pred.iter().zip(&truth).map(|(p, t)| (p - t).abs() / t.max(0.05)).sum::<f64>() / n as f64;
        let hits = pred.iter().zip(&truth).filter(|(p, t)| (*p - *t).abs() <= 0.10).count();
        prop_assert!((m.mae - mae).abs() < 1e-12);
        prop_assert!((m.rmse - rmse).abs() < 1e-12);
        prop_assert!((m.fer_percent - fer).abs() < 1e-9);
        prop_assert!((m.rpa_percent - 100.0 * hits as f64 / n as f64).abs() < 1e-9);
        prop_assert!(m.rmse + 1e-12 >= m.mae);
    }
}

#[test]
fn auc_of_random_labels_is_near_chance() {
    let mut rng = support::rng(7);
    let n = 10_000;
    let probs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let a: f64 = rng.gen();
            vec![a, 1.0 - a]
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let auc = auc_roc(&probs, &labels).unwrap().unwrap();
    assert!((0.48..=0.52).contains(&auc), "{auc}");
}

#[test]
fn auc_perfect_and_inverted() {
    let probs = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]];
    assert_eq!(auc_roc(&probs, &[0, 0, 1, 1]).unwrap(), Some(1.0));
    assert_eq!(auc_roc(&probs, &[1, 1, 0, 0]).unwrap(), Some(0.0));
    assert_eq!(auc_roc(&probs, &[0, 0, 0, 0]).unwrap(), None);
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(classification_metrics(&[0, 1], &[0], 2).is_err());
    assert!(regression_metrics(&[0.1], &[0.1, 0.2], 0.1).is_err());
    assert!(classification_metrics(&[], &[], 2).is_err());
}

fn small_data(seed: u64) -> PreparedData {
    let cfg = DataConfig {
        synthetic: SyntheticConfig {
            per_class: 12,
            window_len: 16,
            subjects: 3,
            noise: 0.3,
        },
        augment: vec![],
        ..DataConfig::default()
    };
    prepare(&cfg, seed).unwrap()
}

fn model_for(data: &PreparedData) -> ModelConfig {
    ModelConfig {
        input_channels: data.channels(),
        input_length: data.window_len(),
        num_classes: data.spec.num_classes(),
        ..tiny_config()
    }
}

fn raw_windows(data: &PreparedData) -> Vec<Tensor> {
    data.test.iter().map(|w| w.window.clone()).collect()
}

#[test]
fn evaluate_reports_both_heads() {
    let data = small_data(1);
    let cfg = model_for(&data);
    let params = build_model(&cfg, 3).unwrap();
    let r = evaluate(&params, &cfg, &data.test, DEFAULT_TOLERANCE).unwrap();
    assert_eq!(r.samples, data.test.len());
    assert!(r.classification.is_some() && r.regression.is_some());
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert!(json["definitions"]["fer"].is_string());
}

#[test]
fn bench_contracts() {
    let data = small_data(2);
    let cfg = model_for(&data);
    let params = build_model(&cfg, 5).unwrap();
    let windows = raw_windows(&data);
    let run = bench(
        &params,
        &cfg,
        &windows,
        &data.normalizer,
        MIN_BENCH_RUNS,
        MIN_BENCH_WARMUP,
        Some(80.0),
    )
    .unwrap();
    let r = &run.report;
    assert!(r.lt_ms >= r.rtr_ms, "{r:?}");
    assert!(r.rtr_ms > 0.0);
    assert!(r.tp_fps <= 1000.0 / r.rtr_ms * 1.05, "{r:?}");
    assert!(r.stream_windows >= 1000);
    assert_eq!(r.pc_watts, PC_NOT_MEASURED);
    let gflops = flops_estimate(&cfg).unwrap().mul_adds as f64 / 1e9;
    assert_eq!(r.cl_gflops, gflops);
    assert!((r.mer.unwrap() - 0.8 / gflops).abs() < 1e-9 * r.mer.unwrap());
    // Timed predictions are the plain inference path on preprocessed input.
    let mut rng = support::rng(0);
    for (i, p) in run.predictions.iter().enumerate().take(windows.len()) {
        let z =
            mmtl_core::data::apply_normalizer(&mmtl_core::data::denoise_window(&windows[i]), &data.normalizer).unwrap();
        assert_eq!(p, &predict(&z, &params, &cfg, Mode::Eval, &mut rng).unwrap());
    }
}

#[test]
fn bench_rejects_short_protocols() {
    let data = small_data(2);
    let cfg = model_for(&data);
    let params = build_model(&cfg, 5).unwrap();
    let w = raw_windows(&data);
    assert!(bench(
        &params,
        &cfg,
        &w,
        &data.normalizer,
        MIN_BENCH_RUNS - 1,
        MIN_BENCH_WARMUP,
        None
    )
    .is_err());
    assert!(bench(
        &params,
        &cfg,
        &w,
        &data.normalizer,
        MIN_BENCH_RUNS,
        MIN_BENCH_WARMUP - 1,
        None
    )
    .is_err());
    assert!(bench(
        &params,
        &cfg,
        &[],
        &data.normalizer,
        MIN_BENCH_RUNS,
        MIN_BENCH_WARMUP,
        None
    )
    .is_err());
}

#[test]
fn plain_backbone_is_parameter_matched() {
    let data = small_data(3);
    let full = model_for(&data);
    let plain = matched_plain_backbone(&full).unwrap();
    assert!(matches!(plain.backbone, Backbone::PlainConv { .. }));
    let a = flops_estimate(&full).unwrap().params as f64;
    let b = flops_estimate(&plain).unwrap().params as f64;
    assert!((a - b).abs() / a < 0.25, "{a} vs {b}");
    assert_eq!(build_model::<f32>(&plain, 0).unwrap().trainable_count(), b as usize);
}

#[test]
fn ablation_table_shape() {
    let data = small_data(4);
    let base = model_for(&data);
    let train = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 11,
        ..TrainConfig::default()
    };
    let table = ablation_suite(&base, &data, &train).unwrap();
    assert_eq!(table.rows.len(), 5);
    for (row, label) in table.rows.iter().zip(ABLATION_LABELS) {
        assert_eq!(row.configuration, label);
        assert_eq!(row.seed, 11);
        assert_eq!(row.epochs_budget, 2);
        assert!(row.epochs_run.iter().all(|&e| e <= 2));
        assert!(row.report.macro_f1().is_some() && row.report.rpa_percent().is_some());
        assert!(row.latency_ms >= row.inference_ms);
    }
    assert_eq!(table.rows[2].epochs_run.len(), 2);
    let csv = table.to_csv();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("configuration,f1,precision,recall,auc_roc,mae,rmse"));
    assert_eq!(lines.count(), 5);
    let json: serde_json::Value = serde_json::from_str(&table.to_json()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
}
