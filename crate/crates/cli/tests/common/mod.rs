#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use s3vc::FeatureMatrix;

pub fn s3vc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s3vc"))
        .args(args)
        .output()
        .expect("failed to spawn s3vc")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/upstream_a2o_scores.csv")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn write_features(path: &Path, rows: &[Vec<f64>]) {
    s3vc::save_feature_matrix(&FeatureMatrix::from_rows(rows).unwrap(), path).unwrap();
}

/// Deterministic pseudo-random features without pulling in an RNG.
pub fn ramp_features(rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| (((r * 7919 + c * 104_729) % 1000) as f64 / 100.0) - 5.0)
                .collect()
        })
        .collect()
}
