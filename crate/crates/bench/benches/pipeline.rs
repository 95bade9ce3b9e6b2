use std::path::Path;
use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use chattox_bench::{lines, match_log, units, vote_rows};
use chattox_core::aggregate::{group_messages, GroupingConfig};
use chattox_core::classify::{classify_batch, ClassifierConfig, Lexicon, WordPieceTokenizer};
use chattox_core::consensus::fleiss_kappa;
use chattox_core::scanner::{start_scan, ClassifierSlot, ScanConfig};

fn tokenizer(c: &mut Criterion) {
    let sidecar =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/tokenizer.json");
    let tok = WordPieceTokenizer::from_files(&sidecar).unwrap();
    let texts = lines(1_000, 1);
    let mut g = c.benchmark_group("wordpiece");
    g.throughput(Throughput::Elements(texts.len() as u64));
    g.bench_function("tokenize_1k", |b| {
        b.iter(|| {
            for t in &texts {
                black_box(tok.tokenize(t, 192).unwrap());
            }
        })
    });
    g.finish();
}

fn lexicon(c: &mut Criterion) {
    let lex = Lexicon::builtin();
    let texts = lines(10_000, 2);
    let mut g = c.benchmark_group("lexicon");
    g.throughput(Throughput::Elements(texts.len() as u64));
    for batch in [16, 64] {
        let cfg = ClassifierConfig {
            batch_size: batch,
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::new("classify_10k", batch), &cfg, |b, cfg| {
            b.iter(|| classify_batch(&texts, &lex, cfg).unwrap())
        });
    }
    g.finish();
}

fn scan(c: &mut Criterion) {
    let slot = ClassifierSlot::ready(Arc::new(Lexicon::builtin()));
    let page = units(10_000, 3);
    c.bench_function("scan_10k_units", |b| {
        b.iter(|| {
            let mut s = start_scan(page.clone(), &slot, ScanConfig::default()).unwrap();
            s.run_to_end().unwrap()
        })
    });
}

fn kappa(c: &mut Criterion) {
    let rows = vote_rows(5_000, 8, 4);
    c.bench_function("fleiss_kappa_5k_items", |b| {
        b.iter(|| fleiss_kappa(black_box(&rows)).unwrap())
    });
}

fn grouping(c: &mut Criterion) {
    let log = match_log(16_000, 100, 5);
    let cfg = GroupingConfig::default();
    c.bench_function("group_messages_16k", |b| {
        b.iter(|| group_messages(black_box(&log), &cfg).unwrap())
    });
}

criterion_group!(benches, tokenizer, lexicon, scan, kappa, grouping);
criterion_main!(benches);
