#![allow(dead_code)]

pub mod dd;
pub mod oracle;

use std::path::Path;

/// Runs the command line in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["raydistill"];
    full.extend_from_slice(args);
    raydistill::cli::run(full)
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
