//! Busy-loop and allocation oracle programs plus an independent stopwatch.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use perforch::bench::LanguageId;
use perforch::profiler::{measure, MeasurementConfig, MeasurementGuard, PerformanceProfile};
use perforch::sandbox::{ProgramBundle, SandboxConfig};

pub const BUSY: &str = r#"
#include <stdlib.h>
int main(int argc, char **argv) {
    long n = atol(argv[1]);
    volatile unsigned long acc = 0;
    for (long i = 0; i < n; i++) acc += (unsigned long)i * 2654435761u;
    return 0;
}
"#;

pub const ALLOC: &str = r#"
#include <stdlib.h>
#include <string.h>
#include <unistd.h>
int main(void) {
    size_t n = 100u << 20;
    char *p = malloc(n);
    if (!p) return 1;
    memset(p, 1, n);
    usleep(200000);
    return p[n - 1] == 1 ? 0 : 2;
}
"#;

pub const TARGET_MS: f64 = 100.0;
/// Stopwatch readings before and after a window may differ by this much.
pub const DRIFT_LIMIT: f64 = 0.15;
pub const MAX_WINDOWS: usize = 5;

pub fn c_bundle(cfg: &SandboxConfig, src: &str, run: Vec<String>) -> ProgramBundle {
    let files = BTreeMap::from([("main.c".to_string(), src.to_string())]);
    let build = ["gcc", "-O1", "-o", "main", "main.c"].iter().map(|s| s.to_string()).collect();
    let b = ProgramBundle::from_parts(LanguageId::Cpp, files, Some(build), run, cfg).unwrap();
    assert!(b.ensure_built().unwrap().is_none());
    b
}

/// Run an already-built binary with the loop count baked into the command.
pub fn prebuilt(cfg: &SandboxConfig, probe: &ProgramBundle, n: u64) -> ProgramBundle {
    let exe = probe.workdir.join("main").display().to_string();
    ProgramBundle::from_parts(LanguageId::Cpp, BTreeMap::new(), None, vec![exe, n.to_string()], cfg).unwrap()
}

fn stopwatch_once(probe: &ProgramBundle, n: u64) -> f64 {
    let t = Instant::now();
    let st = Command::new(probe.workdir.join("main")).arg(n.to_string()).status().unwrap();
    assert!(st.success());
    t.elapsed().as_secs_f64() * 1000.0
}

/// Median wall time of three direct runs.
pub fn stopwatch_ms(probe: &ProgramBundle, n: u64) -> f64 {
    let mut t: Vec<f64> = (0..3).map(|_| stopwatch_once(probe, n)).collect();
    t.sort_by(f64::total_cmp);
    t[1]
}

/// Loop count that takes about `TARGET_MS` right now.
pub fn calibrate(probe: &ProgramBundle) -> u64 {
    let mut n: u64 = 10_000_000;
    for _ in 0..6 {
        let t = stopwatch_ms(probe, n);
        if (t - TARGET_MS).abs() < 0.05 * TARGET_MS {
            break;
        }
        n = ((n as f64) * TARGET_MS / t.max(1.0)).max(1.0) as u64;
    }
    n
}

pub struct Window {
    pub profile: PerformanceProfile,
    /// Stopwatch medians taken just before and just after the window.
    pub stopwatch_before_ms: f64,
    pub stopwatch_after_ms: f64,
    pub windows_tried: usize,
    pub stable: bool,
}

/// Calibrate, measure, and re-check the stopwatch; a window where the host
/// speed drifted is discarded and repeated.
pub fn measure_busy_loop(cfg: &SandboxConfig, probe: &ProgramBundle, mc: &MeasurementConfig, lock: &MeasurementGuard) -> Window {
    let mut last = None;
    for tried in 1..=MAX_WINDOWS {
        let n = calibrate(probe);
        let before = stopwatch_ms(probe, n);
        let profile = measure(&prebuilt(cfg, probe, n), mc, lock).unwrap();
        let after = stopwatch_ms(probe, n);
        let stable = (before - after).abs() <= DRIFT_LIMIT * before.min(after);
        let w = Window { profile, stopwatch_before_ms: before, stopwatch_after_ms: after, windows_tried: tried, stable };
        if stable {
            return w;
        }
        last = Some(w);
    }
    last.unwrap()
}
