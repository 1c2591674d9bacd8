#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_resample-lab"));
    cmd.env_remove("RESAMPLE_LAB_SEED");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn resample-lab")
}

pub fn run_to(dir: &Path, name: &str, args: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let out = dir.join(name);
    let status = run(&[args, &["--output", out.to_str().unwrap()]].concat());
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    let meta = std::fs::read(dir.join(format!("{name}.meta.json"))).unwrap();
    (std::fs::read(out).unwrap(), meta)
}

/// Every command, rerun with the same seed under 1 and 4 threads.
pub const DETERMINISM_COMMANDS: &[&[&str]] = &[
    &["resample", "--scheme", "stratified", "--weights", "0.1,0.2,0.3,0.4", "--n", "25"],
    &["variance", "--weights", "0.1,0.6,0.3", "--f", "1,-2,0.5", "--n", "5", "--replicates", "2000"],
    &["variance", "--counterexample", "omega=0.75,n=100", "--replicates", "2000"],
    &["counterexample", "--omega", "0.9", "--n", "100", "--ordering", "permuted(3)", "--replicates", "2000"],
    &["filter", "--model", "lingauss", "--scheme", "systematic", "--m", "500"],
    &["asymptotics", "lemma1", "--m-grid", "1000,4000", "--replicates", "40"],
    &["asymptotics", "kappa", "--n-grid", "500,2000", "--replicates", "40"],
    &["asymptotics", "clt", "--n-grid", "100,200", "--replicates", "40", "--k", "3"],
    &["asymptotics", "support", "--samples", "20000"],
];

/// Runs every command in [`DETERMINISM_COMMANDS`] in both formats with 1, 4
/// and again 4 threads, and returns the commands whose output or sidecar
/// bytes differ.
pub fn determinism_failures(dir: &Path) -> Vec<String> {
    let mut failures = Vec::new();
    for (i, args) in DETERMINISM_COMMANDS.iter().enumerate() {
        for format in ["csv", "json"] {
            let runs: Vec<(Vec<u8>, Vec<u8>)> = ["1", "4", "4"]
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let name = format!("out{i}_{j}.{format}");
                    run_to(dir, &name, &[args, &["--seed", "7", "--threads", t, "--format", format][..]].concat())
                })
                .collect();
            if runs[0] != runs[1] || runs[1] != runs[2] {
                failures.push(format!("{} ({format})", args.join(" ")));
            }
        }
    }
    failures
}
