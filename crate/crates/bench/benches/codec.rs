use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nwf_bench::{legall_model, test_image};
use nwf_core::codec::{compress, decompress, CompressOptions};
use nwf_core::coder::{build_table, RansDecoder, RansEncoder, PRECISION_BITS};

fn codec(c: &mut Criterion) {
    let model = legall_model(3, 16);
    let mut group = c.benchmark_group("codec");
    group.sample_size(10);
    for size in [32, 64] {
        let img = test_image(size, 3);
        let bytes = compress(&img, &model, CompressOptions::default()).unwrap();
        group.throughput(Throughput::Bytes(img.data.len() as u64));
        group.bench_with_input(BenchmarkId::new("compress", size), &img, |b, img| {
            b.iter(|| compress(img, &model, CompressOptions::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("decompress", size), &bytes, |b, bytes| {
            b.iter(|| decompress(bytes, &model).unwrap())
        });
    }
    group.finish();
}

fn rans(c: &mut Criterion) {
    let pmf: Vec<f64> = (0..256)
        .map(|i| (-(i as f64 - 128.0).abs() / 16.0).exp())
        .collect();
    let total: f64 = pmf.iter().sum();
    let pmf: Vec<f64> = pmf.iter().map(|p| p / total).collect();
    let table = build_table(&pmf, 0, PRECISION_BITS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols: Vec<i64> = (0..100_000).map(|_| rng.gen_range(96..160)).collect();
    let mut enc = RansEncoder::new();
    for &s in symbols.iter().rev() {
        enc.encode(s, &table).unwrap();
    }
    let stream = enc.finish();

    let mut group = c.benchmark_group("rans");
    group.throughput(Throughput::Elements(symbols.len() as u64));
    group.bench_function("encode", |b| {
        b.iter(|| {
            let mut enc = RansEncoder::new();
            for &s in symbols.iter().rev() {
                enc.encode(s, &table).unwrap();
            }
            enc.finish()
        })
    });
    group.bench_function("decode", |b| {
        b.iter(|| {
            let mut dec = RansDecoder::new(&stream).unwrap();
            for _ in 0..symbols.len() {
                dec.decode(&table).unwrap();
            }
        })
    });
    group.finish();
}

criterion_group!(benches, codec, rans);
criterion_main!(benches);
