use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ntd_core::fourier::{convolve, make_mask, MaskSpec};
use ntd_core::neural::{mlp_train, TrainConfig, TrainingRecord};
use ntd_core::pipeline::{apply_threshold, count_peaks, enhance, PipelineConfig};
use ntd_core::synth::{generate_frame, Category, SceneSpec};

fn frame(size: usize) -> ntd_core::raster::GrayImage {
    let spec = SceneSpec { frame_size: size, ..SceneSpec::preset(Category::Field) };
    generate_frame(&spec, 1).unwrap().0
}

fn bench_enhance(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let mut g = c.benchmark_group("enhance");
    g.sample_size(10);
    for size in [256, 512] {
        let img = frame(size);
        g.bench_function(format!("{size}"), |b| b.iter(|| enhance(black_box(&img), &cfg).unwrap()));
    }
    g.finish();
}

fn bench_convolve(c: &mut Criterion) {
    let img = frame(512);
    let disk = make_mask(&MaskSpec::Disk { size: 41, radius: 10.0 }).unwrap();
    c.bench_function("convolve 512 disk41", |b| b.iter(|| convolve(black_box(&img), &disk).unwrap()));
}

fn bench_count(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let resp = enhance(&frame(512), &cfg).unwrap();
    let bin = apply_threshold(&resp, 0.5 * resp.max());
    c.bench_function("count_peaks 512", |b| b.iter(|| count_peaks(black_box(&bin), &cfg, &resp).unwrap()));
}

fn bench_train(c: &mut Criterion) {
    let records: Vec<TrainingRecord> = (0..45)
        .map(|i| {
            let mu = 30.0 + 2.0 * i as f64;
            TrainingRecord { frame_id: format!("f{i}"), features: vec![mu], manual_threshold: 100.0 + 0.7 * mu }
        })
        .collect();
    let cfg = TrainConfig::default();
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("mlp 45 records 5000 epochs", |b| b.iter(|| mlp_train("b", black_box(&records), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_enhance, bench_convolve, bench_count, bench_train);
criterion_main!(benches);
