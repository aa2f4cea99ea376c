use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use flowmotion_core::bboxprep::preprocess_roi;
use flowmotion_core::classifier::{batch_from_rois, forward, loss_and_gradients, ModelParams, NetConfig};
use flowmotion_core::flowestim::{estimate_flow, GrayImage, HsConfig};
use flowmotion_core::{Box2D, FlowField};

fn texture(x: f32, y: f32) -> f32 {
    0.5 + 0.2 * (0.31 * x + 0.17 * y).sin() + 0.2 * (0.23 * x - 0.41 * y).cos()
}

fn flow_estimation(c: &mut Criterion) {
    let a = GrayImage::from_fn(64, 64, |x, y| texture(x as f32, y as f32)).unwrap();
    let b = GrayImage::from_fn(64, 64, |x, y| texture(x as f32 - 1.0, y as f32)).unwrap();
    let cfg = HsConfig::default();
    c.bench_function("estimate_flow 64x64", |bench| {
        bench.iter(|| estimate_flow(black_box(&a), black_box(&b), &cfg).unwrap())
    });
}

fn roi_preprocessing(c: &mut Criterion) {
    let field = FlowField::from_fn(64, 64, |x, y| (x as f32 * 0.1, y as f32 * 0.1)).unwrap();
    let raw = Box2D::new(20.0, 31.0, 25.0, 34.0).unwrap();
    c.bench_function("preprocess_roi to 224", |bench| {
        bench.iter(|| preprocess_roi(black_box(&field), black_box(&raw), 224).unwrap())
    });
}

fn classifier_passes(c: &mut Criterion) {
    let net = NetConfig {
        stem_channels: 8,
        stem_kernel: 3,
        stem_stride: 1,
        stem_pool: false,
        stage_widths: vec![8, 16],
        blocks_per_stage: vec![1, 1],
        input_size: 32,
        ..NetConfig::default()
    };
    let model = ModelParams::<f32>::new(&net, 0).unwrap();
    let rois: Vec<FlowField> = (0..16)
        .map(|i| FlowField::from_fn(32, 32, |x, y| ((x + i) as f32 * 0.05, y as f32 * 0.05)).unwrap())
        .collect();
    let refs: Vec<&FlowField> = rois.iter().collect();
    let x = batch_from_rois::<f32>(&refs, &[false; 16], 32).unwrap();
    let labels: Vec<f32> = (0..16).map(|i| (i % 2) as f32).collect();
    c.bench_function("forward batch16 32x32", |bench| {
        bench.iter(|| forward(black_box(&model), black_box(&x)).unwrap())
    });
    c.bench_function("forward+backward batch16 32x32", |bench| {
        bench.iter(|| loss_and_gradients(black_box(&model), black_box(&x), &labels).unwrap())
    });
}

criterion_group!(benches, flow_estimation, roi_preprocessing, classifier_passes);
criterion_main!(benches);
