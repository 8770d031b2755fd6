#![allow(dead_code)]

use std::process::{Command, Output};

pub fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

pub fn mcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsim")).args(args).output().expect("spawn mcsim")
}

pub fn stdout_json(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).expect("json line")).collect()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Sums 1..=n into R64B_1.
pub fn loop_sum(n: u64) -> String {
    format!(
        "LDIMM R64B_1, 0;\nLDIMM R64B_2, 1;\nLDIMM R64B_3, {n};\nLDIMM R64B_4, 1;\n\
         loop: ADD R64B_1, R64B_1, R64B_2;\nBREQ R64B_2, R64B_3, done;\n\
         ADD R64B_2, R64B_2, R64B_4;\nJMPLBL loop;\ndone: COMMIT;\n"
    )
}

pub const SMALL_CONFIG: &str = r#"{"lines_per_l_register": 4, "main_memory_bytes": 4096}"#;
