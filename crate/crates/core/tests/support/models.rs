//! Models and inputs shared by the oracle tests.

#![allow(dead_code)]

use flowmotion_core::classifier::{loss_and_gradients, sgd_step, update_running_stats, ModelParams, NetConfig, Tensor, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_input(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Vec<f64> {
    (0..n * 2 * size * size).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Model moved away from its initialization so that every tensor, including the
/// running statistics and the final layer, holds non-trivial values.
pub fn perturbed_model(cfg: &NetConfig, seed: u64) -> ModelParams<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ModelParams::<f32>::new(cfg, seed).unwrap();
    for p in m.params_mut() {
        if !p.name.contains(".conv") {
            for v in &mut p.data {
                *v += rng.random_range(-0.5f32..0.5);
            }
        }
    }
    let x = Tensor::from_vec(
        6,
        2,
        cfg.input_size,
        cfg.input_size,
        random_input(&mut rng, 6, cfg.input_size).iter().map(|&v| v as f32).collect(),
    );
    let labels = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    for _ in 0..3 {
        let (_, g, cache) = loss_and_gradients(&m, &x, &labels).unwrap();
        sgd_step(&mut m, &g, &TrainConfig::default(), 0.05).unwrap();
        update_running_stats(&mut m, &cache);
    }
    m
}

/// Largest `|a - b| / |b|` over paired outputs.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-30))
        .fold(0.0, f64::max)
}
