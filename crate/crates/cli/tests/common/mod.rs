#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

pub fn hjnt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjnt"))
        .args(args)
        .current_dir(dir)
        .env_remove("HJNT_THREADS")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn sha256(path: &Path) -> String {
    hex::encode(Sha256::digest(
        std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    ))
}

/// Small synthesis spec: 16-wide tables and a 40-wide audio channel.
pub fn small_spec(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let spec = serde_json::json!({
        "n_utterances": n,
        "seed": seed,
        "features": {
            "schema": {"audio": 40, "video_cabin": 12, "video_road": 12},
            "modalities": ["audio"],
            "informative_fraction": 0.25
        },
        "embeddings": {"dim": 16}
    });
    let path = dir.join("spec.in.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

/// Rewrites the generated config with a small model and short training.
pub fn shrink_config(config: &Path, hidden: usize, epochs: usize, fusion: &[&str]) {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config).unwrap()).unwrap();
    v["model"]["hidden"] = hidden.into();
    v["model"]["dropout"] = 0.1.into();
    v["train"]["epochs"] = epochs.into();
    v["train"]["lr"] = 0.01.into();
    v["train"]["batch_size"] = 8.into();
    v["fusion"]["modalities"] = fusion.iter().map(|s| serde_json::Value::from(*s)).collect();
    v["fusion"]["width"] = 8.into();
    std::fs::write(config, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

/// Generates a small dataset into `dir/name` and returns that directory.
pub fn small_dataset(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let spec = small_spec(dir, n, seed);
    let out = dir.join(name);
    let o = hjnt(
        dir,
        &[
            "generate",
            "--out",
            out.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}
