//! Cross-correlation: direct sliding window vs FFT at tracking scale.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use sonotrack::similarity::xcorr::{xcorr_direct, xcorr_fft};
use sonotrack_bench::{bench_network, bench_patch};

fn correlation_paths(c: &mut Criterion) {
    let net = bench_network(1);
    let temb = net.forward_eval(&bench_patch(127, 2)).unwrap();
    let mut group = c.benchmark_group("xcorr");
    for &search in &[203usize, 407] {
        let semb = net.forward_eval(&bench_patch(search, 3)).unwrap();
        group.bench_with_input(BenchmarkId::new("direct", search), &semb, |b, semb| {
            b.iter(|| xcorr_direct(black_box(&temb), black_box(semb)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fft", search), &semb, |b, semb| {
            b.iter(|| xcorr_fft(black_box(&temb), black_box(semb)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, correlation_paths);
criterion_main!(benches);
