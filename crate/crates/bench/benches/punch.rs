use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use punch_bench::{busy_header, full_queue, random_scenario};
use punch_core::coding::{select_encoding, CodingContext, DEFAULT_THETA, DEFAULT_WINDOW};
use punch_core::node::Mode;
use punch_core::sim::run;
use punch_core::wire::PunchHeader;
use punch_core::{ChannelId, NativePacket};

fn selection(c: &mut Criterion) {
    let mut g = c.benchmark_group("select_encoding");
    for n in [4u16, 8, 16] {
        let (pkts, beliefs) = full_queue(n);
        let refs: Vec<&NativePacket> = pkts.iter().collect();
        let ctx = CodingContext {
            beliefs: &beliefs,
            channel: ChannelId(0),
            tau: 0.005,
            pu_aware: true,
        };
        g.bench_with_input(BenchmarkId::from_parameter(n), &refs, |b, refs| {
            b.iter(|| select_encoding(black_box(refs), &ctx, DEFAULT_THETA, DEFAULT_WINDOW))
        });
    }
    g.finish();
}

fn codec(c: &mut Criterion) {
    let h = busy_header();
    let bytes = h.encode().unwrap();
    c.bench_function("header_encode", |b| b.iter(|| black_box(&h).encode().unwrap()));
    c.bench_function("header_decode", |b| {
        b.iter(|| PunchHeader::decode(black_box(&bytes)).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate_random_10s");
    g.sample_size(10);
    for mode in [Mode::Punch, Mode::Baseline] {
        let s = random_scenario(mode, 10.0);
        g.bench_function(mode.label(), |b| b.iter(|| run(black_box(&s)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, selection, codec, simulation);
criterion_main!(benches);
