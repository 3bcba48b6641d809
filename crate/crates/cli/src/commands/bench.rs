use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use angioseg::nnet::{read_params, UNetConfig, UNetParams};
use angioseg::synth::generate_sequence;
use angioseg::train::infer;
use angioseg::Frame;
use rayon::prelude::*;

use super::Context;
use crate::config::Preset;
use crate::error::{CliError, CliResult};
use crate::provenance::{stamp, write_file};

pub const BENCH_HEADER: &str = "mode,threads,samples,mean_ms,median_ms,p95_ms,fps,throughput_fps";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: String,
    pub threads: usize,
    /// Timed inferences; warm-up runs are excluded.
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// `1000 / mean_ms`: rate of one inference stream.
    pub fps: f64,
    /// Frames completed per wall-clock second.
    pub throughput_fps: f64,
}

impl BenchRow {
    fn from_latencies(mode: &str, threads: usize, mut ms: Vec<f64>, wall_secs: f64) -> BenchRow {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let mean = ms.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        // nearest rank
        let p95 = ms[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        BenchRow {
            mode: mode.to_string(),
            threads,
            samples: n,
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
            fps: 1000.0 / mean,
            throughput_fps: n as f64 / wall_secs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub net: UNetConfig,
    pub frames: usize,
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut s = format!("{BENCH_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.4},{:.2},{:.2}",
                r.mode, r.threads, r.samples, r.mean_ms, r.median_ms, r.p95_ms, r.fps, r.throughput_fps
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let n = &self.net;
        let mut s = format!(
            "network: {}x{} input, {} levels x {} convs, {} base features, {} classes\n",
            n.input_size, n.input_size, n.levels, n.convs_per_level, n.base_features, n.out_classes
        );
        let _ = writeln!(s, "{} frames x {} repetitions after one warm-up pass", self.frames, self.repetitions);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<7} {:>2} thread(s): mean {:.2} ms, median {:.2} ms, p95 {:.2} ms, {:.1} fps ({:.1} frames/s overall)",
                r.mode, r.threads, r.mean_ms, r.median_ms, r.p95_ms, r.fps, r.throughput_fps
            );
        }
        s
    }
}

fn timed(params: &UNetParams<f32>, frame: &Frame) -> CliResult<f64> {
    let start = Instant::now();
    infer(params, frame, None)?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Times inference of `checkpoint`, or of seeded untrained weights of
/// `preset` when no checkpoint is given, on synthetic frames.
pub fn cmd_bench(
    ctx: &Context,
    checkpoint: Option<&Path>,
    preset: Option<Preset>,
    frames: Option<usize>,
    repetitions: Option<usize>,
    out: Option<&Path>,
) -> CliResult<BenchReport> {
    let cfg = &ctx.config.config;
    let frames = frames.unwrap_or(cfg.bench.frames);
    let repetitions = repetitions.unwrap_or(cfg.bench.repetitions);
    if frames == 0 || repetitions == 0 {
        return Err(CliError::Usage("bench needs at least one frame and one repetition".into()));
    }
    let params = match (checkpoint, preset) {
        (Some(p), _) => read_params(p)?,
        (None, preset) => {
            let net = crate::config::NetConfig {
                preset: preset.unwrap_or(cfg.net.preset),
                ..cfg.net
            };
            UNetParams::init(net.unet(3), ctx.seed)?
        }
    };
    let synth = cfg.synth.clone().with_seed(ctx.seed);
    let (seq, _) = generate_sequence(&synth)?;
    let inputs: Vec<Frame> = (0..frames).map(|i| seq.frames()[i % seq.len()].clone()).collect();

    let mut rows = Vec::new();
    for f in &inputs {
        timed(&params, f)?;
    }
    let mut ms = Vec::with_capacity(frames * repetitions);
    let start = Instant::now();
    for _ in 0..repetitions {
        for f in &inputs {
            ms.push(timed(&params, f)?);
        }
    }
    rows.push(BenchRow::from_latencies("single", 1, ms, start.elapsed().as_secs_f64()));

    let threads = rayon::current_num_threads();
    inputs.par_iter().try_for_each(|f| timed(&params, f).map(|_| ()))?;
    let start = Instant::now();
    let ms = (0..repetitions)
        .map(|_| inputs.par_iter().map(|f| timed(&params, f)).collect::<CliResult<Vec<_>>>())
        .collect::<CliResult<Vec<_>>>()?
        .concat();
    rows.push(BenchRow::from_latencies("multi", threads, ms, start.elapsed().as_secs_f64()));

    let report = BenchReport {
        net: *params.config(),
        frames,
        repetitions,
        rows,
    };
    if let Some(out) = out {
        let details = [
            (
                "checkpoint".to_string(),
                checkpoint.map_or("none (untrained weights)".to_string(), |p| p.display().to_string()),
            ),
            ("frames".to_string(), frames.to_string()),
            ("repetitions".to_string(), repetitions.to_string()),
        ];
        stamp(out, "bench", &ctx.config, ctx.seed, ctx.deterministic, &details, "")?;
        write_file(&out.join("bench.csv"), &report.csv())?;
        write_file(&out.join("bench_summary.txt"), &report.summary())?;
    }
    Ok(report)
}
