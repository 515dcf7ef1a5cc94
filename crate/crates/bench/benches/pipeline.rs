use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tilelab::codegen::{compile_layer, eliminate_redundant_loads, sample_layer_data, GenOptions};
use tilelab::engine::{run, run_functional};
use tilelab::floorplan::{array, check, FpNode};
use tilelab::tps::search;
use tilelab::workload::{pad_channels, resnet18_c2_c11};
use tilelab::{AccelConfig, ConvLayer, Mode};

fn tiling_search(c: &mut Criterion) {
    let cfg = AccelConfig { block_in: 32, block_out: 32, uop_bits: 64, ..AccelConfig::default() };
    let mut g = c.benchmark_group("tps_search");
    for layer in resnet18_c2_c11().into_iter().step_by(3) {
        let padded = pad_channels(&layer, &cfg);
        g.bench_with_input(BenchmarkId::from_parameter(&layer.name), &padded, |b, l| {
            b.iter(|| search(black_box(l), &cfg).unwrap())
        });
    }
    g.finish();
}

fn lowering(c: &mut Criterion) {
    let cfg = AccelConfig::default();
    let layer = ConvLayer::conv(1, 14, 14, 64, 64, 3, 1, 1);
    c.bench_function("compile_and_dedup_14x14x64", |b| {
        b.iter(|| {
            let (s, _) = compile_layer(black_box(&layer), &cfg, GenOptions::default()).unwrap();
            eliminate_redundant_loads(&s)
        })
    });
}

fn simulation(c: &mut Criterion) {
    let cfg = AccelConfig::default();
    let layer = ConvLayer::conv(1, 14, 14, 64, 64, 3, 1, 1);
    let (stream, _) = compile_layer(&layer, &cfg, GenOptions::default()).unwrap();
    let stream = eliminate_redundant_loads(&stream);
    let mut g = c.benchmark_group("engine_14x14x64");
    g.bench_function("timing", |b| b.iter(|| run(black_box(&stream), &cfg, Mode::Timing, 0).unwrap()));
    g.bench_function("timing_out_of_order", |b| b.iter(|| run(black_box(&stream), &cfg, Mode::Timing, 7).unwrap()));
    let (x, w) = sample_layer_data(&layer, 1);
    let dram = stream.prepare_dram(&x, w.as_ref()).unwrap();
    g.sample_size(10);
    g.bench_function("functional", |b| b.iter(|| run_functional(black_box(&stream), &cfg, 0, dram.clone()).unwrap()));
    g.finish();
}

fn floorplan_check(c: &mut Criterion) {
    let mac = FpNode::macro_cell("mac", 10.0, 10.0);
    let grid = array(&mac, 32, 32, 12.0, 12.0, "mac_{r}_{c}").unwrap();
    c.bench_function("check_32x32_array", |b| b.iter(|| check(black_box(&grid), 1.0)));
}

criterion_group!(benches, tiling_search, lowering, simulation, floorplan_check);
criterion_main!(benches);
