use super::network::{Gradients, ModelParams};
use super::tensor::Scalar;
use super::{ClassifierError, TrainConfig};

/// SGD with momentum and L2 weight decay folded into the gradient:
/// `g' = g + wd * p; v = m * v + g'; p -= lr * v`.
///
/// Parameters are left untouched if any gradient is non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<(), ClassifierError> {
    let (ps, vs) = params.params_and_velocity_mut();
    if grads.grads.len() != ps.len() || grads.grads.iter().zip(ps.iter()).any(|(g, p)| g.len() != p.data.len()) {
        return Err(ClassifierError::Shape("gradients do not match parameters".into()));
    }
    if let Some((_, p)) = grads
        .grads
        .iter()
        .zip(ps.iter())
        .find(|(g, _)| g.iter().any(|v| !v.is_finite()))
    {
        return Err(ClassifierError::Numeric(format!("non-finite gradient for {}", p.name)));
    }
    let (lr, wd, m) = (T::lit(lr), T::lit(cfg.weight_decay), T::lit(cfg.momentum));
    for ((p, v), g) in ps.iter_mut().zip(vs.iter_mut()).zip(&grads.grads) {
        for ((w, vel), gr) in p.data.iter_mut().zip(v.iter_mut()).zip(g) {
            let g2 = *gr + wd * *w;
            *vel = m * *vel + g2;
            *w -= lr * *vel;
        }
    }
    Ok(())
}
