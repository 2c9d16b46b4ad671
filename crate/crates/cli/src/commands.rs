use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mmtl_core::data::{class_counts, invert_normalizer, prepare, DataSource, DatasetKind, PreparedData};
use mmtl_core::metrics::{ablation_suite, bench as run_bench, evaluate_with};
use mmtl_core::model::{build_model, ModelConfig};
use mmtl_core::training::{
    effective_config, load_checkpoint, save_checkpoint, train_from, Checkpoint, EpochRecord, TrainError, TrainStart,
};
use mmtl_core::Tensor;
use serde_json::json;

use crate::config::{normalizer, stamp, RunConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::{Global, Split};

/// Windows handed to the benchmark; enough variety without parsing cost.
const BENCH_WINDOWS: usize = 256;

/// `--config` (or defaults) with `--seed` applied.
pub fn run_config(g: &Global) -> CliResult<RunConfig> {
    let mut run = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        run.train.seed = seed;
    }
    Ok(run)
}

/// `--config` when given, else the configuration stored in the checkpoint.
fn run_config_for(g: &Global, ck: &Checkpoint) -> CliResult<RunConfig> {
    if g.config.is_some() {
        return run_config(g);
    }
    let mut run = RunConfig::from_checkpoint(ck)?;
    if let Some(seed) = g.seed {
        run.train.seed = seed;
    }
    run.validate()?;
    Ok(run)
}

fn warn(g: &Global, msg: impl std::fmt::Display) {
    if !g.quiet {
        eprintln!("warning: {msg}");
    }
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).expect("output serializes");
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_error("stdout", e)),
        _ => Ok(()),
    }
}

fn check_dims(model: &ModelConfig, data: &PreparedData) -> CliResult<()> {
    let have = (model.input_channels, model.input_length, model.num_classes);
    let want = (data.channels(), data.window_len(), data.spec.num_classes());
    if have != want {
        return Err(CliError::Data(format!(
            "shape mismatch: checkpoint expects {} channels x {} samples and {} classes, dataset {} provides {} x {} and {}",
            have.0, have.1, have.2, data.spec.kind, want.0, want.1, want.2
        )));
    }
    Ok(())
}

fn load_for_eval(g: &Global, path: &Path) -> CliResult<(Checkpoint, RunConfig, PreparedData)> {
    let ck = load_checkpoint(path)?;
    let run = run_config_for(g, &ck)?;
    let data = prepare(&run.dataset, run.data_seed())?;
    check_dims(&ck.model, &data)?;
    if let Ok(stored) = normalizer(&ck) {
        if stored != data.normalizer {
            warn(g, "dataset normalizer differs from the one stored in the checkpoint");
        }
    }
    Ok((ck, run, data))
}

pub fn data_inspect(g: &Global, dataset: Option<DatasetKind>, root: Option<PathBuf>) -> CliResult<()> {
    let run = run_config(g)?;
    let mut cfg = run.dataset;
    if let Some(kind) = dataset {
        cfg.dataset = kind;
    }
    if root.is_some() {
        cfg.path = root;
    }
    let src = DataSource::load(&cfg, cfg.seed.unwrap_or(run.train.seed))?;
    let k = src.spec.num_classes();
    let all: Vec<_> = src.windows.iter().chain(src.test.iter().flatten()).cloned().collect();
    let hist: BTreeMap<&str, usize> = src
        .spec
        .labels
        .iter()
        .map(|l| l.name.as_str())
        .zip(class_counts(&all, k))
        .collect();
    let subjects: BTreeSet<u32> = all.iter().map(|w| w.subject_id).collect();
    let mut splits = BTreeMap::new();
    match &src.test {
        Some(test) => {
            splits.insert("train", src.windows.len());
            splits.insert("test", test.len());
        }
        None => {
            splits.insert("all", src.windows.len());
        }
    }
    print_json(&json!({
        "dataset": src.spec.kind.name(),
        "windows": all.len(),
        "splits": splits,
        "class_histogram": hist,
        "subjects": subjects,
        "sample_rate_hz": src.spec.sample_rate_hz,
        "window_len": all.first().map(|w| w.window.shape()[1]),
        "channels": src.spec.layout.names,
        "parser": src.stats,
    }))
}

pub fn train(g: &Global, out: &Path, resume: Option<&Path>, log: Option<PathBuf>) -> CliResult<()> {
    let run = run_config(g)?;
    let data = prepare(&run.dataset, run.data_seed())?;
    let (model_cfg, start) = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            check_dims(&ck.model, &data)?;
            (ck.model.clone(), TrainStart::resume(&ck))
        }
        None => {
            let cfg = run.model_for(&data)?;
            let params = build_model(&effective_config(&cfg, &run.train), run.train.seed)?;
            (cfg, TrainStart::fresh(params))
        }
    };
    let log_path = log.unwrap_or_else(|| out.with_extension("jsonl"));
    let file = File::create(&log_path).map_err(|e| io_error(&log_path.display().to_string(), e))?;
    let mut log_out = BufWriter::new(file);
    let mut log_err = None;
    for r in &start.history.records {
        if let Err(e) = writeln!(log_out, "{}", r.to_json_line()) {
            log_err.get_or_insert(e);
        }
    }
    if !g.quiet {
        eprintln!(
            "training on {} windows ({} val, {} test), epochs {}..{}",
            data.train.len(),
            data.val.len(),
            data.test.len(),
            start.epoch,
            run.train.epochs
        );
    }
    let mut on_epoch = |r: &EpochRecord| {
        if let Err(e) = writeln!(log_out, "{}", r.to_json_line()).and_then(|_| log_out.flush()) {
            log_err.get_or_insert(e);
        }
        if !g.quiet {
            eprintln!(
                "epoch {:>3}  lr {:.2e}  train {:.4}  val {:.4}  acc {}  mae {}",
                r.epoch,
                r.lr,
                r.train_loss.total,
                r.val_loss.total,
                r.val_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                r.val_mae.map_or("-".into(), |m| format!("{m:.4}")),
            );
        }
    };
    let result = train_from(start, &model_cfg, &run.train, &data.train, &data.val, &mut on_epoch);
    if let Some(e) = log_err {
        return Err(io_error(&log_path.display().to_string(), e));
    }
    match result {
        Ok((mut ck, history)) => {
            stamp(&mut ck, &run, &data);
            save_checkpoint(out, &ck)?;
            print_json(&json!({
                "checkpoint": out,
                "log": log_path,
                "epochs_completed": ck.epoch,
                "best_epoch": history.best_epoch,
                "best_val_loss": history.best_val_loss(),
                "stopped_early": history.stopped_early,
            }))
        }
        Err(TrainError::Diverged {
            epoch,
            reason,
            mut checkpoint,
        }) => {
            stamp(&mut checkpoint, &run, &data);
            save_checkpoint(out, &checkpoint)?;
            Err(CliError::Runtime(format!(
                "training diverged in epoch {epoch} ({reason}); last good parameters saved to {}",
                out.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn eval(g: &Global, path: &Path, split: Split) -> CliResult<()> {
    let (ck, run, data) = load_for_eval(g, path)?;
    let windows = match split {
        Split::Train => &data.train,
        Split::Val => &data.val,
        Split::Test => &data.test,
    };
    let report = evaluate_with(&ck.params, &ck.model, windows, &run.metrics)?;
    print_json(&report)
}

pub fn bench(g: &Global, path: &Path, runs: Option<usize>, warmup: Option<usize>) -> CliResult<()> {
    let (ck, run, data) = load_for_eval(g, path)?;
    let runs = runs.unwrap_or(run.bench.runs);
    let warmup = warmup.unwrap_or(run.bench.warmup);
    run.bench_check(runs, warmup)?;
    let stats = normalizer(&ck).unwrap_or_else(|_| data.normalizer.clone());
    // Back to sensor units so the timed path includes preprocessing.
    let raw: Vec<Tensor> = data
        .test
        .iter()
        .take(BENCH_WINDOWS)
        .map(|w| invert_normalizer(&w.window, &data.normalizer))
        .collect::<Result<_, _>>()?;
    let rpa = evaluate_with(&ck.params, &ck.model, &data.test, &run.metrics)?.rpa_percent();
    let result = run_bench(&ck.params, &ck.model, &raw, &stats, runs, warmup, rpa)?;
    print_json(&result.report)
}

pub fn ablate(g: &Global, csv: Option<&Path>) -> CliResult<()> {
    let run = run_config(g)?;
    let data = prepare(&run.dataset, run.data_seed())?;
    let model = run.model_for(&data)?;
    let table = ablation_suite(&model, &data, &run.train)?;
    if let Some(p) = csv {
        std::fs::write(p, table.to_csv()).map_err(|e| io_error(&p.display().to_string(), e))?;
    }
    for v in &table.violations {
        warn(g, v);
    }
    print_json(&table)
}
