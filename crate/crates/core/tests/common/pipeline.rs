//! Drives the `dfphys` binary through the whole pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn dfphys<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfphys"))
        .args(args)
        .output()
        .expect("spawn dfphys")
}

/// Run a command and panic with its stderr unless it exits with `code`.
pub fn expect_code<S: AsRef<std::ffi::OsStr>>(args: &[S], code: i32) -> Output {
    let out = dfphys(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "dfphys {:?}\nstderr: {}",
        args.iter()
            .map(|a| a.as_ref().to_string_lossy().into_owned())
            .collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Settings for a small but complete run.
pub struct PipelineSpec<'a> {
    pub generate: &'a [&'a str],
    pub model: &'a [&'a str],
    pub seed: u64,
    pub threads: usize,
}

fn step(cmd: &str, out: &Path, spec: &PipelineSpec, extra: &[String]) {
    let mut args: Vec<String> = vec![
        cmd.into(),
        "--out".into(),
        out.display().to_string(),
        "--seed".into(),
        spec.seed.to_string(),
        "--threads".into(),
        spec.threads.to_string(),
    ];
    args.extend_from_slice(extra);
    expect_code(&args, 0);
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// generate -> pretrain -> finetune -> evaluate under `root`.
pub fn run_pipeline(root: &Path, spec: &PipelineSpec) {
    let (data, pre, det, eval) = (
        root.join("data"),
        root.join("pretrain"),
        root.join("finetune"),
        root.join("evaluate"),
    );
    step("generate", &data, spec, &owned(spec.generate));
    let mut args = owned(spec.model);
    args.extend([
        "--manifest".into(),
        data.join("dev.csv").display().to_string(),
    ]);
    step("pretrain", &pre, spec, &args);
    step(
        "finetune",
        &det,
        spec,
        &[
            "--weights".into(),
            pre.join("weights.dfw").display().to_string(),
            "--manifest".into(),
            data.join("dev.csv").display().to_string(),
        ],
    );
    step(
        "evaluate",
        &eval,
        spec,
        &[
            "--weights".into(),
            det.join("weights.dfw").display().to_string(),
            "--manifest".into(),
            data.join("eval.csv").display().to_string(),
        ],
    );
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Training logs minus the wall-clock column.
fn without_seconds(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Files that differ between two pipeline roots (`threads` in the resolved
/// configs and train-log timings are expected to differ and are skipped).
pub fn differing_outputs(a: &Path, b: &Path) -> Vec<String> {
    let fa = files_under(a);
    let fb = files_under(b);
    if fa != fb {
        return vec![format!("file sets differ: {fa:?} vs {fb:?}")];
    }
    let mut diffs = Vec::new();
    for rel in fa {
        let (x, y) = (
            fs::read(a.join(&rel)).unwrap(),
            fs::read(b.join(&rel)).unwrap(),
        );
        let name = rel.file_name().unwrap().to_string_lossy();
        let same = match name.as_ref() {
            "train_log.csv" => {
                without_seconds(&String::from_utf8_lossy(&x))
                    == without_seconds(&String::from_utf8_lossy(&y))
            }
            "config.resolved" => {
                let strip = |v: &[u8]| {
                    String::from_utf8_lossy(v)
                        .lines()
                        .filter(|l| {
                            !l.starts_with("threads")
                                && !l.starts_with("out")
                                && !l.starts_with("manifest")
                                && !l.starts_with("weights")
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                };
                strip(&x) == strip(&y)
            }
            _ => x == y,
        };
        if !same {
            diffs.push(rel.display().to_string());
        }
    }
    diffs
}
