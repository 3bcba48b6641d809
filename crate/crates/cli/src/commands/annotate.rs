use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use angioseg::io::{load_frame, read_flow, save_frame, save_mask, write_flow};
use angioseg::labelgen::{annotate_with_masks, background_masks, reference_flows, select_reference};
use angioseg::optflow::estimate_flow;
use angioseg::{BinaryMask, FlowField, Frame, LabelMask, Sequence};
use log::info;
use rayon::prelude::*;

use super::Context;
use crate::dataset::{entry_dir, load_dataset, read_index, write_index, Entry};
use crate::error::{CliError, CliResult};
use crate::provenance::{create_dir, stamp, write_file};

const SEQUENCE_RECORD: &str = "annotation.txt";
const CACHE_KEY: &str = "cache_key.txt";

fn binary_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("binary").join(format!("{t:05}.png"))
}

fn labels_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("labels").join(format!("{t:05}.png"))
}

/// Cached flow of frame `t` onto the reference.
pub fn reference_flow_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("flows").join(format!("ref_{t:05}.flo"))
}

/// Cached flow of the Siamese pair `(t1, t2)`: `f_t1(p) ≈ f_t2(p + u(p))`.
pub fn pair_flow_path(dir: &Path, t1: usize, t2: usize) -> PathBuf {
    dir.join("flows").join(format!("pair_{t1:05}_{t2:05}.flo"))
}

fn pairs(len: usize, dt_values: &[usize]) -> Vec<(usize, usize)> {
    let mut dts: Vec<usize> = dt_values.iter().copied().filter(|&d| d > 0).collect();
    dts.sort_unstable();
    dts.dedup();
    (0..len)
        .flat_map(|t| dts.iter().map(move |&d| (t, t + d)))
        .filter(|&(_, b)| b < len)
        .collect()
}

/// Everything the flows depend on; a mismatch invalidates the cache.
fn cache_key(ctx: &Context, reference: usize) -> String {
    let cfg = &ctx.config.config;
    format!(
        "reference = {reference}\nchain_flows = {}\ndt_values = {:?}\n{}",
        cfg.annotate.chain_flows,
        cfg.train.dt_values,
        toml::to_string(&cfg.annotate.flow).expect("flow config serializes")
    )
}

fn load_cached(paths: &[PathBuf], dims: (usize, usize)) -> Option<Vec<FlowField>> {
    paths
        .iter()
        .map(|p| read_flow(p).ok().filter(|f| f.dims() == dims))
        .collect()
}

struct Flows {
    reference: Vec<FlowField>,
    pairs: Vec<((usize, usize), FlowField)>,
    cached: bool,
}

fn sequence_flows(ctx: &Context, seq: &Sequence, dir: &Path, reference: usize) -> CliResult<Flows> {
    let cfg = &ctx.config.config;
    let dims = seq.dims().unwrap_or((0, 0));
    let key = cache_key(ctx, reference);
    let key_path = dir.join("flows").join(CACHE_KEY);
    let plan = pairs(seq.len(), &cfg.train.dt_values);
    let ref_paths: Vec<PathBuf> = (0..seq.len()).map(|t| reference_flow_path(dir, t)).collect();
    let pair_paths: Vec<PathBuf> = plan.iter().map(|&(a, b)| pair_flow_path(dir, a, b)).collect();
    if std::fs::read_to_string(&key_path).ok().as_deref() == Some(key.as_str()) {
        if let (Some(r), Some(p)) = (load_cached(&ref_paths, dims), load_cached(&pair_paths, dims)) {
            return Ok(Flows {
                reference: r,
                pairs: plan.into_iter().zip(p).collect(),
                cached: true,
            });
        }
    }
    let reference_flows = reference_flows(seq, reference, &cfg.annotate)?;
    let frames = seq.frames();
    let pair_flows = plan
        .par_iter()
        .map(|&(a, b)| estimate_flow(&frames[a], &frames[b], &cfg.annotate.flow))
        .collect::<angioseg::Result<Vec<_>>>()?;
    create_dir(&dir.join("flows"))?;
    for (f, p) in reference_flows.iter().zip(&ref_paths) {
        write_flow(f, p)?;
    }
    for (f, p) in pair_flows.iter().zip(&pair_paths) {
        write_flow(f, p)?;
    }
    write_file(&key_path, &key)?;
    Ok(Flows {
        reference: reference_flows,
        pairs: plan.into_iter().zip(pair_flows).collect(),
        cached: false,
    })
}

fn mask_frame(mask: &BinaryMask) -> Frame {
    let (w, h) = mask.dims();
    Frame::from_fn(w, h, |x, y| if mask.get(x, y) { 1.0 } else { 0.0 })
}

fn frame_mask(frame: &Frame) -> BinaryMask {
    let (w, h) = frame.dims();
    BinaryMask::from_fn(w, h, |x, y| frame.get(x, y) > 0.5)
}

fn annotate_one(ctx: &Context, seq: &Sequence, dir: &Path) -> CliResult<bool> {
    let cfg = &ctx.config.config.annotate;
    let binary = background_masks(seq, &cfg.background)?;
    let reference = select_reference(seq, &binary, cfg.reference)?;
    let flows = sequence_flows(ctx, seq, dir, reference.index)?;
    let ann = annotate_with_masks(seq, binary, Some(flows.reference), cfg)?;
    create_dir(&dir.join("binary"))?;
    create_dir(&dir.join("labels"))?;
    for (t, (b, l)) in ann.binary.iter().zip(&ann.labels).enumerate() {
        save_frame(&mask_frame(b), binary_path(dir, t))?;
        save_mask(l, labels_path(dir, t))?;
    }
    let mut record = format!(
        "frames = {}\nreference = {}\nreference_rationale = {}\n",
        seq.len(),
        ann.reference.index,
        ann.reference.rationale
    );
    for t in 0..seq.len() {
        let _ = writeln!(record, "reference_flow_{t:05} = {}", reference_flow_path(Path::new(""), t).display());
    }
    for ((a, b), _) in &flows.pairs {
        let _ = writeln!(record, "pair_flow_{a:05}_{b:05} = {}", pair_flow_path(Path::new(""), *a, *b).display());
    }
    write_file(&dir.join(SEQUENCE_RECORD), &record)?;
    Ok(flows.cached)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotateSummary {
    pub entries: Vec<Entry>,
    /// Sequences whose flows came from the cache.
    pub cache_hits: usize,
}

/// Auto-labels every sequence of `data` under `out`, reusing cached flows
/// when their inputs are unchanged.
pub fn cmd_annotate(ctx: &Context, data: &Path, out: &Path) -> CliResult<AnnotateSummary> {
    let dataset = load_dataset(data)?;
    let details = [("data".to_string(), data.display().to_string())];
    stamp(out, "annotate", &ctx.config, ctx.seed, ctx.deterministic, &details, "")?;
    let mut entries = Vec::new();
    let mut cache_hits = 0;
    for s in &dataset {
        let dir = entry_dir(out, &s.entry);
        let cached = annotate_one(ctx, &s.sequence, &dir)?;
        if cached {
            cache_hits += 1;
            info!("annotate: {}: flow cache hit, skipped flow estimation", s.entry.name);
        } else {
            info!("annotate: {}: flows estimated", s.entry.name);
        }
        entries.push(s.entry.clone());
    }
    if !entries.iter().any(|e| e.name.is_empty()) {
        write_index(out, &entries)?;
    }
    Ok(AnnotateSummary { entries, cache_hits })
}

/// Auto-labels of one sequence as written by [`cmd_annotate`].
#[derive(Clone, Debug)]
pub struct SequenceAnnotation {
    pub binary: Vec<BinaryMask>,
    pub labels: Vec<LabelMask>,
    pub reference: usize,
    pub reference_flows: Vec<FlowField>,
    pub pair_flows: BTreeMap<(usize, usize), FlowField>,
}

fn missing(path: &Path, what: &str) -> CliError {
    CliError::Data(format!("missing {what} {}; run `annotate` first", path.display()))
}

pub fn load_annotation(dir: &Path) -> CliResult<SequenceAnnotation> {
    let record_path = dir.join(SEQUENCE_RECORD);
    let record = std::fs::read_to_string(&record_path).map_err(|_| missing(&record_path, "annotation record"))?;
    let field = |key: &str| {
        record
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_string())
    };
    let number = |key: &str| -> CliResult<usize> {
        field(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Data(format!("{}: missing or bad '{key}'", record_path.display())))
    };
    let len = number("frames")?;
    let reference = number("reference")?;
    let mut binary = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    let mut reference_flows = Vec::with_capacity(len);
    for t in 0..len {
        let b = load_frame(binary_path(dir, t)).map_err(|_| missing(&binary_path(dir, t), "binary mask"))?;
        binary.push(frame_mask(&b));
        labels.push(angioseg::io::load_mask(labels_path(dir, t))?);
        let p = reference_flow_path(dir, t);
        reference_flows.push(read_flow(&p).map_err(|_| missing(&p, "flow"))?);
    }
    let mut pair_flows = BTreeMap::new();
    for line in record.lines() {
        if let Some(rest) = line.strip_prefix("pair_flow_") {
            let key = rest.split_once('=').map(|(k, _)| k.trim()).unwrap_or("");
            let parsed = key
                .split_once('_')
                .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
            let (a, b) = parsed.ok_or_else(|| CliError::Data(format!("{}: bad line '{line}'", record_path.display())))?;
            let p = pair_flow_path(dir, a, b);
            pair_flows.insert((a, b), read_flow(&p).map_err(|_| missing(&p, "flow"))?);
        }
    }
    Ok(SequenceAnnotation {
        binary,
        labels,
        reference,
        reference_flows,
        pair_flows,
    })
}

/// Annotations of every sequence listed in `data`, read from `annotations`.
pub(crate) fn load_annotations(data: &Path, annotations: &Path) -> CliResult<Vec<SequenceAnnotation>> {
    read_index(data)?
        .iter()
        .map(|e| load_annotation(&entry_dir(annotations, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_respect_sequence_end() {
        assert_eq!(pairs(4, &[2, 1, 0, 1]), vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        assert!(pairs(1, &[1]).is_empty());
    }
}
