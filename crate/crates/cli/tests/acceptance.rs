//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use asymdiag::selftest::{self, SelftestConfig, CHECK_COUNT};

/// Wall-clock limits in seconds for the checks that carry one.
fn runtime_limit(id: u32) -> Option<f64> {
    match id {
        1 => Some(60.0),
        2 => Some(30.0),
        3 => Some(60.0),
        8 => Some(120.0),
        9 => Some(180.0),
        _ => None,
    }
}

fn line(id: u32, name: &str, passed: bool, detail: &str) -> bool {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id:>2} {name:<24} {detail}");
    passed
}

fn run_selftest_binary(dir: &Path, threads: usize) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_asymdiag"))
        .arg("selftest")
        .arg("--out")
        .arg(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !status.status.success() {
        return Err(format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
    }
    std::fs::read(dir.join("selftest.csv")).map_err(|e| format!("read: {e}"))
}

fn determinism() -> (bool, String) {
    let (a, b) = match (tempfile::tempdir(), tempfile::tempdir()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return (false, "cannot create temp dirs".into()),
    };
    let first = run_selftest_binary(a.path(), 2);
    let second = run_selftest_binary(b.path(), 4);
    match (first, second) {
        (Ok(x), Ok(y)) if x == y => (true, format!("{} bytes identical across 2 runs", x.len())),
        (Ok(x), Ok(y)) => (false, format!("csv differs ({} vs {} bytes)", x.len(), y.len())),
        (Err(e), _) | (_, Err(e)) => (false, e),
    }
}

fn main() {
    let cfg = SelftestConfig::default();
    let mut all = true;
    for id in 1..=CHECK_COUNT {
        let start = Instant::now();
        let result = selftest::run_check(id, &cfg);
        let elapsed = start.elapsed();
        let over_time = runtime_limit(id).is_some_and(|s| elapsed > Duration::from_secs_f64(s));
        let ok = match &result {
            Ok(o) => {
                let limit = runtime_limit(id).map(|s| format!(" (limit {s:.0}s)")).unwrap_or_default();
                let detail = format!(
                    "metric={:.4e} limit={:.4e} time={:.1}s{limit} {}",
                    o.metric,
                    o.limit,
                    elapsed.as_secs_f64(),
                    o.detail
                );
                line(id, selftest::name(id), o.passed && !over_time, &detail)
            }
            Err(e) => line(id, selftest::name(id), false, &format!("error: {e}")),
        };
        all &= ok;
    }
    let start = Instant::now();
    let (ok, detail) = determinism();
    all &= line(CHECK_COUNT + 1, "determinism", ok, &format!("{detail} time={:.1}s", start.elapsed().as_secs_f64()));
    if !all {
        std::process::exit(1);
    }
}
