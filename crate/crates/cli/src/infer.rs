//! Windowed prediction over CSV rows, from a file or standard input.
//!
//! Both modes share one ring buffer: a window is emitted each time `stride`
//! new rows have arrived after the first `window_len`, so a file yields the
//! same windows as the offline segmenter.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::path::Path;
use std::time::Instant;

use mmtl_core::data::{apply_normalizer, denoise_window, segment_stride, DatasetSpec, NormalizerStats};
use mmtl_core::model::{predict_batch, ModelConfig};
use mmtl_core::training::{load_checkpoint, Checkpoint};
use mmtl_core::{Params, Tensor};
use serde::Serialize;

use crate::config::{normalizer, spec, RunConfig};
use crate::error::{io_error, CliError, CliResult};
use crate::Global;

#[derive(Debug, Serialize)]
struct Output<'a> {
    window_index: usize,
    activity_label: Option<&'a str>,
    activity_probs: Option<Vec<f32>>,
    resistance: Option<f32>,
    rtr_ms: f64,
}

struct Predictor {
    params: Params,
    model: ModelConfig,
    stats: NormalizerStats,
    labels: Vec<String>,
}

impl Predictor {
    fn new(ck: Checkpoint) -> CliResult<Self> {
        let stats = normalizer(&ck)?;
        let labels = match spec(&ck)? {
            Some(DatasetSpec { labels, .. }) => labels.into_iter().map(|l| l.name).collect(),
            None => (0..ck.model.num_classes).map(|i| format!("class_{i}")).collect(),
        };
        Ok(Self {
            params: ck.params,
            model: ck.model,
            stats,
            labels,
        })
    }

    fn predict(&self, index: usize, window: &Tensor) -> CliResult<Output<'_>> {
        let (c, t) = (window.shape()[0], window.shape()[1]);
        let x = apply_normalizer(&denoise_window(window), &self.stats)?
            .reshape(&[1, c, t])
            .expect("same size");
        let start = Instant::now();
        let p = predict_batch(&x, &self.params, &self.model)?
            .pop()
            .expect("one window in, one out");
        let rtr_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Output {
            window_index: index,
            activity_label: p
                .activity()
                .map(|i| self.labels.get(i).map_or("unknown", String::as_str)),
            resistance: p.resistance_clamped(),
            activity_probs: p.activity_probs,
            rtr_ms,
        })
    }
}

fn overlap_of(ck: &Checkpoint) -> CliResult<f32> {
    let run = RunConfig::from_checkpoint(ck)?;
    Ok(match (run.dataset.overlap, spec(ck)?) {
        (Some(o), _) => o,
        (None, Some(s)) => s.overlap,
        (None, None) => 0.5,
    })
}

pub fn run(g: &Global, checkpoint: &Path, input: Option<&Path>) -> CliResult<()> {
    let ck = load_checkpoint(checkpoint)?;
    let overlap = overlap_of(&ck)?;
    let predictor = Predictor::new(ck)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match input {
        Some(p) => {
            let file = std::fs::File::open(p).map_err(|e| io_error(&p.display().to_string(), e))?;
            stream(g, io::BufReader::new(file), &predictor, overlap, &mut out)
        }
        None => stream(g, io::stdin().lock(), &predictor, overlap, &mut out),
    }
}

fn stream(g: &Global, input: impl Read, pred: &Predictor, overlap: f32, out: &mut impl Write) -> CliResult<()> {
    let (channels, window_len) = (pred.model.input_channels, pred.model.input_length);
    let stride = segment_stride(window_len, overlap);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("CSV header: {e}")))?
        .clone();
    if header.len() != channels + 1 {
        return Err(CliError::Data(format!(
            "CSV has {} channel columns after the timestamp, the model expects {channels}",
            header.len().saturating_sub(1)
        )));
    }
    let mut ring: VecDeque<Vec<f32>> = VecDeque::with_capacity(window_len);
    let mut since_emit = 0usize;
    let mut emitted = 0usize;
    let mut last_ts: Option<f64> = None;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != channels + 1 {
            return Err(CliError::Data(format!(
                "line {line}: expected {} fields, found {}",
                channels + 1,
                record.len()
            )));
        }
        let parse = |i: usize| -> CliResult<f64> {
            record[i].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::Data(format!(
                    "line {line}: column {} is not a number: {:?}",
                    i + 1,
                    &record[i]
                ))
            })
        };
        let ts = parse(0)?;
        if last_ts.is_some_and(|prev| ts <= prev) && !g.quiet {
            eprintln!("warning: line {line}: timestamp {ts} does not increase");
        }
        last_ts = Some(ts);
        let row = (1..=channels)
            .map(|i| parse(i).map(|v| v as f32))
            .collect::<CliResult<Vec<f32>>>()?;
        if ring.len() == window_len {
            ring.pop_front();
        }
        ring.push_back(row);
        since_emit += 1;
        let due = if emitted == 0 {
            ring.len() == window_len
        } else {
            since_emit == stride
        };
        if due {
            let mut data = vec![0.0f32; channels * window_len];
            for (t, row) in ring.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    data[c * window_len + t] = v;
                }
            }
            let window = Tensor::new(vec![channels, window_len], data).expect("sized to fit");
            let line = serde_json::to_string(&pred.predict(emitted, &window)?).expect("output serializes");
            match writeln!(out, "{line}").and_then(|_| out.flush()) {
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => return Ok(()),
                r => r.map_err(|e| io_error("stdout", e))?,
            }
            emitted += 1;
            since_emit = 0;
        }
    }
    Ok(())
}
