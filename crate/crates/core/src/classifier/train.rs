use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{batch_from_rois, loss_and_gradients, update_running_stats, ModelParams};
use super::optim::sgd_step;
use super::{lr_at_epoch, predict_batch, ClassifierError, NetConfig, TrainConfig};
use crate::flowcore::FlowField;
use crate::labeling::MotionLabel;
use crate::metrics::{Confusion, MetricsReport};

/// A preprocessed ROI with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRoi {
    pub roi: FlowField,
    pub label: MotionLabel,
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
}

/// Confusion counts of inference-mode predictions against the labels.
pub fn evaluate(params: &ModelParams<f32>, samples: &[LabeledRoi]) -> Result<Confusion, ClassifierError> {
    let rois: Vec<&FlowField> = samples.iter().map(|s| &s.roi).collect();
    let mut c = Confusion::default();
    for ((pred, _), s) in predict_batch(params, &rois)?.into_iter().zip(samples) {
        c.add(pred, s.label);
    }
    Ok(c)
}

/// Seeded minibatch SGD. Initialization, shuffling and flip augmentation all derive
/// from `cfg.seed`, so repeated runs produce identical parameters and history.
pub fn train(
    train_set: &[LabeledRoi],
    eval_set: &[LabeledRoi],
    net: &NetConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ClassifierError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ClassifierError::Argument("training set is empty".into()));
    }
    let mut params = ModelParams::<f32>::new(net, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let rois: Vec<&FlowField> = batch.iter().map(|&i| &train_set[i].roi).collect();
            let flips: Vec<bool> = batch.iter().map(|_| rng.random_bool(cfg.flip_prob)).collect();
            let labels: Vec<f32> = batch.iter().map(|&i| train_set[i].label.as_target()).collect();
            let x = batch_from_rois::<f32>(&rois, &flips, net.input_size)?;
            let (loss, grads, cache) = loss_and_gradients(&params, &x, &labels)?;
            if !loss.is_finite() {
                return Err(ClassifierError::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            sgd_step(&mut params, &grads, cfg, lr)?;
            update_running_stats(&mut params, &cache);
            loss_sum += loss as f64 * batch.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let eval = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate(&params, eval_set)?.report())
        };
        match &eval {
            Some(r) => info!(
                "epoch {epoch} lr {lr} loss {train_loss:.6} eval P {:?} R {:?} F1 {:?}",
                r.precision_pct, r.recall_pct, r.f1_pct
            ),
            None => info!("epoch {epoch} lr {lr} loss {train_loss:.6}"),
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            eval,
        });
    }
    Ok(TrainOutcome { params, history })
}

/// Writes `epoch,lr,train_loss,eval_precision,eval_recall,eval_f1`; undefined
/// metrics are left empty.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,lr,train_loss,eval_precision,eval_recall,eval_f1")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        let (p, rc, f) = match &r.eval {
            Some(e) => (e.precision_pct, e.recall_pct, e.f1_pct),
            None => (None, None, None),
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.train_loss,
            opt(p),
            opt(rc),
            opt(f)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, size: usize) -> Vec<LabeledRoi> {
        (0..n)
            .map(|i| {
                let moving = i % 2 == 0;
                let s = if moving { 1.0 + (i % 5) as f32 * 0.1 } else { 0.0 };
                let sign = if i % 4 == 0 { -1.0 } else { 1.0 };
                LabeledRoi {
                    roi: FlowField::from_fn(size, size, |x, y| {
                        let ripple = 0.01 * ((x * 3 + y * 5 + i) % 7) as f32;
                        (sign * s + ripple, 0.5 * s + ripple)
                    })
                    .unwrap(),
                    label: if moving { MotionLabel::Moving } else { MotionLabel::Still },
                }
            })
            .collect()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            learning_rate: 0.05,
            epochs: 10,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = separable(4, 8);
        let cfg = TrainConfig {
            epochs: 0,
            ..quick_cfg()
        };
        let out = train(&data, &[], &NetConfig::tiny(), &cfg).unwrap();
        assert_eq!(out.params, ModelParams::new(&NetConfig::tiny(), cfg.seed).unwrap());
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(
            train(&[], &[], &NetConfig::tiny(), &quick_cfg()),
            Err(ClassifierError::Argument(_))
        ));
    }

    #[test]
    fn learns_separable_task_deterministically() {
        let data = separable(48, 8);
        let (tr, ev) = data.split_at(32);
        let a = train(tr, ev, &NetConfig::tiny(), &quick_cfg()).unwrap();
        let b = train(tr, ev, &NetConfig::tiny(), &quick_cfg()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        let last = a.history.last().unwrap().eval.clone().unwrap();
        assert_eq!(last.f1_pct, Some(100.0));
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    }

    #[test]
    fn history_csv_layout() {
        let h = vec![EpochRecord {
            epoch: 0,
            lr: 0.01,
            train_loss: 0.5,
            eval: None,
        }];
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,lr,train_loss,eval_precision,eval_recall,eval_f1\n0,0.01,0.5,,,\n"
        );
    }
}
