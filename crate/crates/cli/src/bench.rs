use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use clap::Args;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use chattox_core::classify::ClassifierConfig;
use chattox_core::scanner::{start_scan, ClassifierSlot, ScanConfig, ScanState, TextUnit};

use crate::{BackendArgs, Format};

const WORDS: &[&str] = &[
    "gg", "wp", "nice", "ult", "bot", "lane", "mid", "jungle", "drag", "baron", "ward", "river",
    "push", "back", "care", "flash", "team", "fight", "tower", "noob", "trash", "useless",
    "report", "lol", "ez", "go", "pls", "ty",
];

#[derive(Args)]
pub(crate) struct BenchArgs {
    #[command(flatten)]
    backend: BackendArgs,
    /// Number of synthetic text units.
    #[arg(long, default_value_t = 10_000)]
    units: usize,
    /// Approximate characters per unit.
    #[arg(long, default_value_t = 13)]
    unit_len: usize,
    /// Batch sizes to compare; defaults to the global batch size.
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Vec<usize>,
}

#[derive(Serialize)]
struct Latency {
    p50: f64,
    p90: f64,
    p99: f64,
}

#[derive(Serialize)]
struct BenchReport {
    backend: String,
    units: usize,
    unit_len: usize,
    batch_size: usize,
    seed: u64,
    wall_s: f64,
    units_per_s: f64,
    peak_rss_kb: Option<u64>,
    batch_latency_ms: Latency,
    flagged: usize,
    flagged_digest: String,
}

fn synthetic_units(n: usize, unit_len: usize, seed: u64) -> Vec<TextUnit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut text = String::new();
            while text.len() < unit_len.max(1) {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(WORDS.choose(&mut rng).expect("word list is non-empty"));
            }
            TextUnit::new(format!("u{i}"), text)
        })
        .collect()
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
}

fn digest(locators: &mut [String]) -> String {
    locators.sort_unstable();
    let mut h = Sha256::new();
    for l in locators.iter() {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn run(
    a: &BenchArgs,
    seed: u64,
    format: Format,
    cfg: &ClassifierConfig,
) -> Result<ExitCode> {
    let classifier = a.backend.resolve(cfg)?;
    let backend = classifier.name().to_string();
    let slot = ClassifierSlot::ready(classifier);
    let units = synthetic_units(a.units, a.unit_len, seed);
    let sizes = if a.batch_sizes.is_empty() {
        vec![cfg.batch_size]
    } else {
        a.batch_sizes.clone()
    };
    for batch_size in sizes {
        let scan = ScanConfig {
            batch_size,
            threshold: cfg.threshold,
            ..Default::default()
        };
        let started = Instant::now();
        let mut session = start_scan(units.clone(), &slot, scan)?;
        let mut latencies = Vec::new();
        while session.state() == ScanState::Scanning {
            let t = Instant::now();
            session.next_batch()?;
            latencies.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let wall_s = started.elapsed().as_secs_f64();
        latencies.sort_by(f64::total_cmp);
        let mut flagged: Vec<String> = session
            .findings()
            .iter()
            .map(|s| s.locator.clone())
            .collect();
        let report = BenchReport {
            backend: backend.clone(),
            units: a.units,
            unit_len: a.unit_len,
            batch_size,
            seed,
            wall_s,
            units_per_s: a.units as f64 / wall_s.max(1e-9),
            peak_rss_kb: peak_rss_kb(),
            batch_latency_ms: Latency {
                p50: percentile(&latencies, 50.0),
                p90: percentile(&latencies, 90.0),
                p99: percentile(&latencies, 99.0),
            },
            flagged: flagged.len(),
            flagged_digest: digest(&mut flagged),
        };
        match format {
            Format::Json => println!("{}", serde_json::to_string(&report)?),
            Format::Pretty => println!("{}", serde_json::to_string_pretty(&report)?),
        }
    }
    Ok(ExitCode::SUCCESS)
}
