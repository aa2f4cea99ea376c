//! Central finite-difference check of the analytic gradients.

#![allow(dead_code)]

use flowmotion_core::classifier::{forward_train, loss_and_gradients, loss_bce, ModelParams, Tensor};

/// Gradients below this magnitude are compared in absolute rather than relative terms.
pub const GRAD_FLOOR: f64 = 1e-6;

pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    pub tensors: usize,
}

fn loss(m: &ModelParams<f64>, x: &Tensor<f64>, labels: &[f64]) -> f64 {
    let cache = forward_train(m, x).unwrap();
    loss_bce(cache.probs(), labels).unwrap()
}

/// Compares every analytic partial derivative against `(L(p + h) - L(p - h)) / 2h`
/// using `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn gradient_check(m: &ModelParams<f64>, x: &Tensor<f64>, labels: &[f64], h: f64) -> GradReport {
    let (_, grads, _) = loss_and_gradients(m, x, labels).unwrap();
    let mut work = m.clone();
    let mut report = GradReport { max_rel_error: 0.0, worst: String::new(), checked: 0, tensors: 0 };
    for (pi, g) in grads.grads.iter().enumerate() {
        report.tensors += 1;
        for (k, &analytic) in g.iter().enumerate() {
            let orig = work.params()[pi].data[k];
            work.params_mut()[pi].data[k] = orig + h;
            let up = loss(&work, x, labels);
            work.params_mut()[pi].data[k] = orig - h;
            let down = loss(&work, x, labels);
            work.params_mut()[pi].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!(
                    "{}[{k}] analytic {analytic:e} numeric {numeric:e}",
                    m.params()[pi].name
                );
            }
        }
    }
    report
}
