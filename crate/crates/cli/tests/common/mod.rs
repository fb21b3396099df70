#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ainet::hsi_data::write_dataset;
use ainet::synthetic::{SyntheticConfig, SyntheticScene};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ainet"));
    c.env_remove("AINET_OUTPUT_ROOT");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The `output: <dir>` line printed by every command that writes a directory.
pub fn output_dir(o: &Output) -> PathBuf {
    let out = stdout(o);
    let line = out.lines().find_map(|l| l.strip_prefix("output: ")).unwrap_or_else(|| {
        panic!(
            "no output line in {out:?}\nstderr: {}",
            String::from_utf8_lossy(&o.stderr)
        )
    });
    PathBuf::from(line)
}

/// Writes a synthetic scene as a manifest dataset and returns the manifest path.
pub fn dataset(dir: &Path, name: &str, classes: usize, bands: usize, seed: u64) -> PathBuf {
    let cfg = SyntheticConfig {
        name: name.into(),
        classes,
        bands,
        height: 16,
        width: 16,
        seed,
        ..Default::default()
    };
    let s = SyntheticScene::generate(&cfg).unwrap();
    write_dataset(dir, name, &s.raw, &s.scene.gt).unwrap()
}

/// Small, fast run configuration over the given datasets.
pub fn config(dir: &Path, datasets: &[(&str, &Path)], target: &str) -> PathBuf {
    let map: serde_json::Map<String, serde_json::Value> = datasets
        .iter()
        .map(|(id, p)| (id.to_string(), serde_json::Value::String(p.display().to_string())))
        .collect();
    let cfg = serde_json::json!({
        "datasets": map,
        "target": target,
        "split": {"mode": "per-class-count", "per_class": 6, "seed": 1},
        "model": {"preset": "micro", "patch_size": 5},
        "train": {"epochs": 2, "final_phase_epochs": 1, "batch_size": 8, "seed": 3},
        "transfer": {"n": 2, "source_test_per_class": {"pavia-center": 3, "salinas": 3}},
        "suite": {"samples_per_class": 5, "seeds": [0, 1], "variants": ["none", "T3"]}
    });
    let p = dir.join("run.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

const MI_INT8: u32 = 1;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_DOUBLE: u32 = 9;
const MI_MATRIX: u32 = 14;
const MX_DOUBLE_CLASS: u32 = 6;

fn element(kind: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    while out.len() % 8 != 0 {
        out.push(0);
    }
    out
}

/// An uncompressed little-endian MAT v5 file of real double arrays given in
/// column-major order.
pub fn write_mat(path: &Path, vars: &[(&str, &[usize], &[f64])]) {
    let mut out = vec![b' '; 116];
    let text = b"MATLAB 5.0 MAT-file, written by the ainet test suite";
    out[..text.len()].copy_from_slice(text);
    out.extend_from_slice(&[0u8; 8]);
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");
    for (name, dims, data) in vars {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        let mut body = Vec::new();
        let mut flags = Vec::new();
        flags.extend_from_slice(&MX_DOUBLE_CLASS.to_le_bytes());
        flags.extend_from_slice(&0u32.to_le_bytes());
        body.extend(element(MI_UINT32, &flags));
        let d: Vec<u8> = dims.iter().flat_map(|&n| (n as i32).to_le_bytes()).collect();
        body.extend(element(MI_INT32, &d));
        body.extend(element(MI_INT8, name.as_bytes()));
        let v: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
        body.extend(element(MI_DOUBLE, &v));
        out.extend(element(MI_MATRIX, &body));
    }
    fs::write(path, out).unwrap();
}
