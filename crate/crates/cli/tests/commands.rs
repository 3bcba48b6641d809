use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use angioseg::eval::TABLE_HEADER;
use angioseg::io::{load_mask, read_manifest};
use angioseg::Label;
use angioseg_cli::commands::{
    cmd_annotate, cmd_bench, cmd_eval, cmd_synth, cmd_train, Context, TrainArgs, TrainStage, BENCH_HEADER,
};
use angioseg_cli::dataset::read_index;
use angioseg_cli::provenance::{CONFIG_ECHO, PROVENANCE};
use angioseg_cli::{CliError, LoadedConfig};

const SMALL: &str = r#"
[synth]
size = 32
frames = 6

[synth.contrast]
onset = 3

[net]
input_size = 32
levels = 2
base_features = 4

[train]
epochs = 1
"#;

fn ctx(text: &str, seed: u64) -> Context {
    Context::new(LoadedConfig::parse(text).unwrap(), Some(seed), true)
}

/// Relative path → file bytes, for every file under `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn train_args(data: &Path, ann: &Path, out: &Path, stage: TrainStage) -> TrainArgs {
    TrainArgs {
        data: data.to_path_buf(),
        annotations: Some(ann.to_path_buf()),
        stage,
        out: out.to_path_buf(),
        name: None,
        init: None,
        binary: None,
        validation: None,
        augment: None,
        epochs: None,
    }
}

#[test]
fn synth_is_deterministic_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = ctx(SMALL, 5);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let entries = cmd_synth(&c, &a, 2).unwrap();
    cmd_synth(&c, &b, 2).unwrap();
    assert_eq!(tree(&a), tree(&b));
    assert_eq!(read_index(&a).unwrap(), entries);
    assert_eq!(std::fs::read_to_string(a.join(CONFIG_ECHO)).unwrap(), SMALL);
    let prov = std::fs::read_to_string(a.join(PROVENANCE)).unwrap();
    assert!(prov.contains("seed = 5") && prov.contains("version = angioseg-cli"));
    let m = read_manifest(a.join(&entries[0].name)).unwrap();
    assert_eq!(m.get("seed"), Some(entries[0].seed.unwrap().to_string().as_str()));
    assert!(a.join(&entries[0].name).join("truth").is_dir());

    let other = dir.path().join("c");
    cmd_synth(&ctx(SMALL, 6), &other, 2).unwrap();
    assert_ne!(read_index(&other).unwrap(), entries);
}

#[test]
fn synth_of_zero_sequences_writes_an_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cmd_synth(&ctx(SMALL, 0), dir.path(), 0).unwrap().is_empty());
    assert!(read_index(dir.path()).unwrap().is_empty());
}

#[test]
fn annotate_reuses_flow_cache_and_keeps_pre_contrast_frames_vessel_free() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[annotate]\nreference = \"auto\"\n[synth.noise]\ngaussian = 0.02\nshot = 0.015\ndose_variation = 0.0\n");
    let c = ctx(&text, 1);
    let (data, ann) = (dir.path().join("data"), dir.path().join("ann"));
    let entries = cmd_synth(&c, &data, 2).unwrap();
    let first = cmd_annotate(&c, &data, &ann).unwrap();
    assert_eq!((first.entries.len(), first.cache_hits), (2, 0));
    let labels_before = tree(&ann);
    let second = cmd_annotate(&c, &data, &ann).unwrap();
    assert_eq!(second.cache_hits, 2);
    assert_eq!(tree(&ann), labels_before);

    for e in &entries {
        let onset: usize = read_manifest(data.join(&e.name)).unwrap().get("onset").unwrap().parse().unwrap();
        for t in 0..onset {
            let l = load_mask(ann.join(&e.name).join("labels").join(format!("{t:05}.png"))).unwrap();
            assert_eq!(l.class_count(Label::Vessel), 0, "{} frame {t}", e.name);
        }
        let record = std::fs::read_to_string(ann.join(&e.name).join("annotation.txt")).unwrap();
        assert!(record.contains("reference = ") && record.contains("reference_flow_00000 = flows/ref_00000.flo"));
    }

    // a changed flow setting invalidates the cache
    let changed = ctx(&format!("{text}\n[annotate.flow]\nsmoothness = 10.0\n"), 1);
    assert_eq!(cmd_annotate(&changed, &data, &ann).unwrap().cache_hits, 0);
}

#[test]
fn stages_run_in_order_and_checkpoints_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = ctx(SMALL, 3);
    let (data, ann, models) = (dir.path().join("data"), dir.path().join("ann"), dir.path().join("m"));
    cmd_synth(&c, &data, 1).unwrap();
    cmd_annotate(&c, &data, &ann).unwrap();

    let err = cmd_train(&c, &train_args(&data, &ann, &models, TrainStage::Siamese)).unwrap_err();
    assert!(matches!(&err, CliError::Data(m) if m.contains("multiclass.ckpt")), "{err}");
    assert_eq!(err.exit_code(), 2);
    let err = cmd_train(&c, &train_args(&data, &ann, &models, TrainStage::Multiclass)).unwrap_err();
    assert!(err.to_string().contains("binary.ckpt"), "{err}");

    for stage in [TrainStage::Binary, TrainStage::Multiclass, TrainStage::Siamese] {
        let (_, report) = cmd_train(&c, &train_args(&data, &ann, &models, stage)).unwrap();
        assert_eq!(report.epoch_losses.len(), 1);
        let name = stage.name();
        for f in [format!("{name}.ckpt"), format!("{name}_report.csv"), format!("{name}_provenance.txt")] {
            assert!(models.join(&f).exists(), "{f}");
        }
    }
    let again = dir.path().join("m2");
    cmd_train(&c, &train_args(&data, &ann, &again, TrainStage::Binary)).unwrap();
    assert_eq!(
        std::fs::read(models.join("binary.ckpt")).unwrap(),
        std::fs::read(again.join("binary.ckpt")).unwrap()
    );
}

#[test]
fn eval_rows_follow_requested_variants() {
    let dir = tempfile::tempdir().unwrap();
    let c = ctx(SMALL, 4);
    let (data, ann, models) = (dir.path().join("data"), dir.path().join("ann"), dir.path().join("m"));
    cmd_synth(&c, &data, 1).unwrap();
    cmd_annotate(&c, &data, &ann).unwrap();
    cmd_train(&c, &train_args(&data, &ann, &models, TrainStage::Binary)).unwrap();

    let variants: Vec<String> = ["tophat", "tophat+cc", "binary", "binary+cc"].map(String::from).to_vec();
    let out = dir.path().join("eval");
    let rows = cmd_eval(&c, &data, &models, &variants, Some(&out)).unwrap();
    assert_eq!(rows.iter().map(|r| r.variant.clone()).collect::<Vec<_>>(), variants);
    let csv = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + variants.len());

    let err = cmd_eval(&c, &data, &models, &["siamese".to_string()], None).unwrap_err();
    assert!(err.to_string().contains("siamese.ckpt"), "{err}");

    let empty = dir.path().join("empty");
    cmd_synth(&c, &empty, 0).unwrap();
    let rows = cmd_eval(&c, &empty, &models, &variants, Some(&out)).unwrap();
    assert!(rows.is_empty());
    assert_eq!(std::fs::read_to_string(out.join("table.csv")).unwrap(), format!("{TABLE_HEADER}\n"));
}

#[test]
fn bench_counts_one_sample_per_frame_and_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_bench(&ctx(SMALL, 0), None, None, Some(3), Some(1), Some(dir.path())).unwrap();
    assert_eq!(report.rows.len(), 2);
    for r in &report.rows {
        assert_eq!(r.samples, 3);
        assert!((r.fps - 1000.0 / r.mean_ms).abs() < 1e-9);
        assert!(r.median_ms <= r.p95_ms);
    }
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with(BENCH_HEADER));
    assert_eq!(csv.lines().count(), 3);
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_angioseg")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(run(&["--help"]).0, 0);
    assert_eq!(run(&["synth", "--bogus"]).0, 1);
    assert_eq!(run(&["synth"]).0, 1, "missing --out");

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepoch = 2\n").unwrap();
    let (code, err) = run(&["synth", "--config", cfg.to_str().unwrap(), "--out", d]);
    assert_eq!(code, 1);
    assert!(err.contains("epoch"), "{err}");

    let (code, err) = run(&["annotate", "--data", &format!("{d}/nothing"), "--out", d]);
    assert_eq!(code, 2, "{err}");

    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = format!("{d}/data");
    let c = cfg.to_str().unwrap();
    assert_eq!(run(&["synth", "--config", c, "--count", "1", "--out", &data, "--deterministic"]).0, 0);
    let (code, err) = run(&["train", "--config", c, "--data", &data, "--annotations", d, "--stage", "binary", "--out", d]);
    assert_eq!(code, 2, "{err}");
}
