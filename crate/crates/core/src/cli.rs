//! Command-line front end: one subcommand per pipeline phase.
//!
//! Every command resolves its parameters from built-in defaults, then an
//! optional `--config` file, then `--key value` flags, and writes the
//! resolved set to `config.resolved` in its output directory.

use std::path::{Path, PathBuf};

use crate::config::KvConfig;
use crate::error::Error;
use crate::evaluation::{
    evaluate_split, export_roc, export_timeline, score_video, DEFAULT_THRESHOLD, DEFAULT_WINDOW,
};
use crate::model::{load_weights, save_weights, CanConfig, Head};
use crate::preprocessing::{
    read_bbox_file, read_container, read_manifest, write_container, write_manifest,
    write_pulse_file, BboxMode, Label, ManifestEntry, PreparedClip,
};
use crate::synthetic::{generate_dataset, split_identities, DatasetConfig};
use crate::training::{finetune_detector, frame_labels, pretrain_hr, TrainConfig};

pub const USAGE: &str = "\
usage: dfphys <command> [--config PATH] [--seed U64] [--out DIR] [--threads N] [--key value ...]

commands:
  generate   render a synthetic dataset (containers, pulse sidecars, manifests)
  pretrain   train the regression network on the pulse change   (--manifest)
  finetune   convert, freeze and train the detector              (--weights --manifest)
  score      per-frame scores of one clip                        (--weights --container [--bbox])
  evaluate   frame-level metrics on a labeled manifest           (--weights --manifest)
";

pub const RESOLVED_CONFIG: &str = "config.resolved";

/// Failure of a command, mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(Error::Config { .. }) => 1,
            CliError::Run(e) if e.is_numeric() => 3,
            CliError::Run(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parsed command line: the command and its `--key value` flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub command: String,
    pub flags: KvConfig,
}

pub fn parse_args<I: IntoIterator<Item = String>>(args: I) -> CliResult<Invocation> {
    let mut it = args.into_iter();
    let command = it.next().ok_or_else(|| usage("missing command"))?;
    let mut flags = KvConfig::new();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| usage(format!("expected --key, got `{arg}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| usage(format!("--{key} needs a value")))?;
                (key.to_string(), v)
            }
        };
        if flags.contains(&key) {
            return Err(usage(format!("--{key} given twice")));
        }
        flags.set(key, value);
    }
    Ok(Invocation { command, flags })
}

const COMMON_KEYS: &[&str] = &["config", "seed", "out", "threads"];

fn model_defaults() -> KvConfig {
    let d = CanConfig::default();
    let mut kv = KvConfig::new();
    kv.set("input_side", d.input_side);
    kv.set("filters1", d.conv_filters.0);
    kv.set("filters2", d.conv_filters.1);
    kv.set("kernel_size", d.kernel_size);
    kv.set("pool_window", d.pool_window);
    kv.set("fc_size", d.fc_size);
    kv
}

fn model_config(kv: &KvConfig) -> CliResult<CanConfig> {
    let cfg = CanConfig {
        input_side: kv.require("input_side")?,
        input_channels: 3,
        conv_filters: (kv.require("filters1")?, kv.require("filters2")?),
        kernel_size: kv.require("kernel_size")?,
        pool_window: kv.require("pool_window")?,
        fc_size: kv.require("fc_size")?,
        head: Head::Regression,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Defaults of a command, with `None` for required keys without a default.
fn command_defaults(command: &str) -> CliResult<(KvConfig, &'static [&'static str])> {
    let mut kv = KvConfig::new();
    let required: &'static [&'static str] = match command {
        "generate" => {
            kv.merge(&DatasetConfig::default().to_kv());
            kv.set("dev_fraction", 0.7);
            &[]
        }
        "pretrain" => {
            kv.merge(&TrainConfig::default().to_kv());
            kv.merge(&model_defaults());
            &["manifest"]
        }
        "finetune" => {
            kv.merge(&TrainConfig::default().to_kv());
            &["manifest", "weights"]
        }
        "score" => &["weights", "container"],
        "evaluate" => {
            kv.set("threshold", DEFAULT_THRESHOLD);
            kv.set("window", DEFAULT_WINDOW);
            kv.set("split", "eval");
            &["manifest", "weights"]
        }
        other => return Err(usage(format!("unknown command `{other}`"))),
    };
    kv.set("seed", 0);
    kv.set("out", ".");
    kv.set("threads", 0);
    Ok((kv, required))
}

fn optional_keys(command: &str) -> &'static [&'static str] {
    match command {
        "score" => &["bbox"],
        _ => &[],
    }
}

/// Merge defaults, the optional config file and flags. Unknown flags are
/// rejected; config-file keys that do not apply to the command are ignored.
pub fn resolve(inv: &Invocation) -> CliResult<KvConfig> {
    let (mut kv, required) = command_defaults(&inv.command)?;
    let known = |k: &str| {
        kv.contains(k)
            || required.contains(&k)
            || optional_keys(&inv.command).contains(&k)
            || COMMON_KEYS.contains(&k)
    };
    if let Some(k) = inv.flags.keys().find(|k| !known(k)) {
        return Err(usage(format!("unknown flag --{k} for `{}`", inv.command)));
    }
    // a config file may be shared between commands: keep only what applies
    let mut file_layer = KvConfig::new();
    if let Some(path) = inv.flags.raw("config") {
        let file = KvConfig::load(path)?;
        for k in file.keys().filter(|k| known(k) && *k != "config") {
            file_layer.set(k, file.raw(k).unwrap_or_default());
        }
    }
    kv.merge(&file_layer);
    kv.merge(&inv.flags);
    if let Some(k) = required.iter().find(|k| !kv.contains(k)) {
        return Err(usage(format!("`{}` needs --{k}", inv.command)));
    }
    Ok(kv)
}

fn path_of(kv: &KvConfig, key: &str) -> PathBuf {
    PathBuf::from(kv.raw(key).unwrap_or_default())
}

fn prepare_output(kv: &KvConfig) -> CliResult<PathBuf> {
    let out = path_of(kv, "out");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    kv.save(out.join(RESOLVED_CONFIG))?;
    Ok(out)
}

/// Load and preprocess every clip of a manifest.
pub fn load_manifest_clips(manifest: &Path, side: usize) -> CliResult<Vec<PreparedClip>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .iter()
        .map(|entry| {
            let (seq, boxes) = entry.load(base)?;
            let name = entry.path.to_string_lossy().into_owned();
            Ok(PreparedClip::new(name, &seq, boxes.as_deref(), side)?)
        })
        .collect()
}

fn cmd_generate(kv: &KvConfig, out: &Path) -> CliResult<()> {
    let mut cfg = DatasetConfig::from_kv(kv)?;
    cfg.base_seed = kv.require("seed")?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let dev_fraction: f64 = kv.require("dev_fraction")?;
    let data = generate_dataset(&cfg)?;
    let clip_dir = out.join("clips");
    std::fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
    let mut entries = Vec::with_capacity(data.len());
    let mut count = std::collections::BTreeMap::<&str, usize>::new();
    for seq in &data {
        let k = count.entry(&seq.identity_id).or_default();
        let rel = PathBuf::from("clips").join(format!("{}_{k}.dfv", seq.identity_id));
        *k += 1;
        write_container(seq, out.join(&rel))?;
        let entry = ManifestEntry {
            path: rel,
            identity_id: seq.identity_id.clone(),
            label: seq.label,
            bbox_mode: BboxMode::Center,
        };
        if let Some(p) = &seq.pulse_truth {
            write_pulse_file(out.join(entry.pulse_path()), p)?;
        }
        entries.push(entry);
    }
    let (dev_ids, _) = split_identities(
        data.iter().map(|s| s.identity_id.as_str()),
        dev_fraction,
        cfg.base_seed,
    )?;
    let (dev, eval): (Vec<_>, Vec<_>) = entries
        .iter()
        .cloned()
        .partition(|e| dev_ids.contains(&e.identity_id));
    write_manifest(out.join("manifest.csv"), &entries)?;
    write_manifest(out.join("dev.csv"), &dev)?;
    write_manifest(out.join("eval.csv"), &eval)?;
    cfg.to_kv().save(out.join("dataset.cfg"))?;
    eprintln!(
        "wrote {} clips ({} dev, {} eval) to {}",
        entries.len(),
        dev.len(),
        eval.len(),
        out.display()
    );
    Ok(())
}

fn train_config(kv: &KvConfig) -> CliResult<TrainConfig> {
    TrainConfig::from_kv(kv).map_err(CliError::from)
}

fn cmd_pretrain(kv: &KvConfig, out: &Path) -> CliResult<()> {
    let tc = train_config(kv)?;
    let model = model_config(kv)?;
    let dev = load_manifest_clips(&path_of(kv, "manifest"), model.input_side)?;
    let (weights, log) = pretrain_hr(&tc, model, &dev)?;
    save_weights(&weights, out.join("weights.dfw"))?;
    log.save(out.join("train_log.csv"))?;
    if let Some(last) = log.epochs.last() {
        eprintln!(
            "pretrained {} epochs, final mse {:.6}",
            log.epochs.len(),
            last.metric
        );
    }
    Ok(())
}

fn cmd_finetune(kv: &KvConfig, out: &Path) -> CliResult<()> {
    let tc = train_config(kv)?;
    let pretrained = load_weights(path_of(kv, "weights"))?;
    let dev = load_manifest_clips(&path_of(kv, "manifest"), pretrained.config.input_side)?;
    let (weights, log) = finetune_detector(&tc, &pretrained, &dev)?;
    save_weights(&weights, out.join("weights.dfw"))?;
    log.save(out.join("train_log.csv"))?;
    if let Some(last) = log.epochs.last() {
        eprintln!(
            "fine-tuned {} epochs, final dev auc {:.6}",
            log.epochs.len(),
            last.metric
        );
    }
    Ok(())
}

fn cmd_score(kv: &KvConfig, out: &Path) -> CliResult<()> {
    let weights = load_weights(path_of(kv, "weights"))?;
    let container = path_of(kv, "container");
    let seq = read_container(&container)?;
    let boxes = match kv.raw("bbox") {
        Some(p) => Some(read_bbox_file(p, seq.len())?),
        None => None,
    };
    let timeline = score_video(&weights, &seq, boxes.as_deref(), weights.config.input_side)?;
    export_timeline(&timeline, out.join("timeline.csv"))?;
    eprintln!("scored {} frame pairs", timeline.len());
    Ok(())
}

/// File name for a clip's timeline: its manifest path with separators flattened.
fn timeline_name(clip: &str) -> String {
    let stem = Path::new(clip).with_extension("");
    stem.to_string_lossy().replace(['/', '\\'], "_") + ".csv"
}

fn cmd_evaluate(kv: &KvConfig, out: &Path) -> CliResult<()> {
    let weights = load_weights(path_of(kv, "weights"))?;
    let clips = load_manifest_clips(&path_of(kv, "manifest"), weights.config.input_side)?;
    if clips.iter().any(|c| c.label == Label::Unlabeled) {
        return Err(usage("evaluation manifest must be labeled"));
    }
    let threshold: f64 = kv.require("threshold")?;
    let window: usize = kv.require("window")?;
    let split: String = kv.require("split")?;
    let (report, timelines) = evaluate_split(&weights, &clips, threshold, window, &split)?;
    report.save(out.join("report.txt"))?;
    let scores: Vec<f64> = timelines
        .iter()
        .flat_map(|t| t.scores.iter().copied())
        .collect();
    export_roc(&scores, &frame_labels(&clips)?, out.join("roc.csv"))?;
    let dir = out.join("timelines");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for t in &timelines {
        export_timeline(t, dir.join(timeline_name(&t.video_id)))?;
    }
    eprintln!(
        "frame auc {:.4}, accuracy {:.4}, video auc {}",
        report.auc,
        report.accuracy,
        report.video_auc.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn configure_threads(kv: &KvConfig) -> CliResult<()> {
    let n: usize = kv.require("threads")?;
    if n > 0 {
        // fails only if a pool already exists, e.g. when called twice in-process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Run a parsed invocation.
pub fn run(inv: &Invocation) -> CliResult<()> {
    let kv = resolve(inv)?;
    configure_threads(&kv)?;
    let out = prepare_output(&kv)?;
    match inv.command.as_str() {
        "generate" => cmd_generate(&kv, &out),
        "pretrain" => cmd_pretrain(&kv, &out),
        "finetune" => cmd_finetune(&kv, &out),
        "score" => cmd_score(&kv, &out),
        "evaluate" => cmd_evaluate(&kv, &out),
        other => Err(usage(format!("unknown command `{other}`"))),
    }
}

/// Entry point for the binary: returns the process exit code.
pub fn main_with_args<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let args: Vec<String> = args.into_iter().collect();
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        eprint!("{USAGE}");
        return if args.is_empty() { 1 } else { 0 };
    }
    match parse_args(args).and_then(|inv| run(&inv)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprint!("{USAGE}");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn parses_flags() {
        let inv = parse_args(args("pretrain --manifest m.csv --seed=4 --threads 2")).unwrap();
        assert_eq!(inv.command, "pretrain");
        assert_eq!(inv.flags.raw("seed"), Some("4"));
        assert_eq!(inv.flags.raw("manifest"), Some("m.csv"));
        assert!(parse_args(args("pretrain manifest")).is_err());
        assert!(parse_args(args("pretrain --seed")).is_err());
        assert!(parse_args(args("pretrain --seed 1 --seed 2")).is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "batch_size = 8\nepochs_pretrain = 2\n").unwrap();
        let line = format!(
            "pretrain --config {} --manifest m.csv --batch_size 16",
            cfg.display()
        );
        let kv = resolve(&parse_args(args(&line)).unwrap()).unwrap();
        assert_eq!(kv.raw("batch_size"), Some("16"));
        assert_eq!(kv.raw("epochs_pretrain"), Some("2"));
        assert_eq!(kv.raw("fc_size"), Some("128"));
    }

    #[test]
    fn usage_errors() {
        let code = |s: &str| match parse_args(args(s)).and_then(|i| resolve(&i)) {
            Ok(_) => 0,
            Err(e) => e.exit_code(),
        };
        assert_eq!(code("bogus"), 1);
        assert_eq!(code("pretrain"), 1);
        assert_eq!(code("pretrain --manifest m --colour blue"), 1);
        assert_eq!(code("evaluate --manifest m --weights w"), 0);
    }

    #[test]
    fn exit_codes_by_error_kind() {
        let numeric = CliError::Run(Error::NonFinite {
            context: "x".into(),
        });
        assert_eq!(numeric.exit_code(), 3);
        let data = CliError::Run(Error::format("f", "bad"));
        assert_eq!(data.exit_code(), 2);
        assert_eq!(
            main_with_args(args(
                "score --weights /nonexistent/w --container c --out /tmp/dfphys-cli-test"
            )),
            2
        );
    }

    #[test]
    fn timeline_names_are_flat() {
        assert_eq!(timeline_name("clips/id001_2.dfv"), "clips_id001_2.csv");
    }
}
