//! End-to-end runs of the `ssglab` binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn ssglab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ssglab"))
        .args(args)
        .env_remove("SSGLAB_SEED")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(ssglab(&["--help"]).0, 0);
    assert_eq!(ssglab(&[]).0, 1);
    assert_eq!(ssglab(&["variations", "--bogus"]).0, 1);
    assert_eq!(ssglab(&["constants", "--measure", "atoms:0=0.6,1=0.4"]).0, 1);
    let (code, stdout, _) = ssglab(&["constants", "measure", "--measure", "trapezoid"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["kappa"], "-1/12");
}

#[test]
fn too_few_replications_is_insufficient() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, _, _) = ssglab(&["variations", "--n", "64", "-M", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    let report: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert_eq!(report["status"], "insufficient");
}

#[test]
fn replay_is_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let (code, _, err) = ssglab(&[
        "ito",
        "--n",
        "128",
        "-M",
        "200",
        "--seed",
        "11",
        "--t",
        "0.5,1",
        "--p-blocks",
        "32",
        "--workers",
        "1",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(code == 0 || code == 2, "{err}");
    let manifest = first.join("manifest.txt");
    for workers in ["1", "8"] {
        let again = dir.path().join(format!("w{workers}"));
        let (c, _, err) = ssglab(&[
            "replay",
            "--manifest",
            manifest.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            again.to_str().unwrap(),
        ]);
        assert_eq!(c, code, "{err}");
        for name in ["report.json", "raw.csv"] {
            assert_eq!(read(&first, name), read(&again, name), "{name} with {workers} workers");
        }
        // Manifests differ only in the unhashed output and worker keys.
        let hash = |dir: &Path| {
            read(dir, "manifest.txt")
                .lines()
                .find(|l| l.starts_with("# config_hash"))
                .unwrap()
                .to_string()
        };
        assert_eq!(hash(&first), hash(&again));
    }
}

#[test]
fn config_file_and_seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# small run\nmodel = fbm:H=1/6\nn = 64\nreplications = 50\nseed = 5\n",
    )
    .unwrap();
    let run = |out: &Path, env_seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssglab"));
        cmd.args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        match env_seed {
            Some(s) => cmd.env("SSGLAB_SEED", s),
            None => cmd.env_remove("SSGLAB_SEED"),
        };
        cmd.output().unwrap();
        read(out, "raw.csv")
    };
    let base = run(&dir.path().join("a"), None);
    assert_eq!(base, run(&dir.path().join("b"), None));
    assert_ne!(base, run(&dir.path().join("c"), Some("6")));
}
