//! Binary classification metrics with `Moving` as the positive class.

use serde::{Deserialize, Serialize};

use crate::labeling::MotionLabel;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction/truth length mismatch: {preds} vs {truths}")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("{0} is undefined: zero denominator")]
    Undefined(&'static str),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, pred: MotionLabel, truth: MotionLabel) {
        match (pred.is_moving(), truth.is_moving()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Percentage of predicted-moving samples that are moving.
    pub fn precision(&self) -> Result<f64, MetricsError> {
        let d = self.tp + self.fp;
        if d == 0 {
            return Err(MetricsError::Undefined("precision"));
        }
        Ok(100.0 * self.tp as f64 / d as f64)
    }

    /// Percentage of moving samples predicted moving.
    pub fn recall(&self) -> Result<f64, MetricsError> {
        let d = self.tp + self.fn_;
        if d == 0 {
            return Err(MetricsError::Undefined("recall"));
        }
        Ok(100.0 * self.tp as f64 / d as f64)
    }

    pub fn f1(&self) -> Result<f64, MetricsError> {
        f1_from(self.precision()?, self.recall()?)
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            tn: self.tn,
            precision_pct: self.precision().ok(),
            recall_pct: self.recall().ok(),
            f1_pct: self.f1().ok(),
        }
    }
}

/// Harmonic mean of precision and recall, both in percent.
pub fn f1_from(precision: f64, recall: f64) -> Result<f64, MetricsError> {
    if precision + recall == 0.0 {
        return Err(MetricsError::Undefined("f1"));
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn confusion(preds: &[MotionLabel], truths: &[MotionLabel]) -> Result<Confusion, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = Confusion::default();
    for (p, t) in preds.iter().zip(truths) {
        c.add(*p, *t);
    }
    Ok(c)
}

/// JSON metrics report. Undefined metrics serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub f1_pct: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use MotionLabel::*;

    #[test]
    fn perfect_prediction() {
        let l = [Moving, Still, Moving, Still, Moving];
        let c = confusion(&l, &l).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 3,
                fp: 0,
                fn_: 0,
                tn: 2
            }
        );
        assert_eq!(c.f1().unwrap(), 100.0);
    }

    #[test]
    fn all_false_positives() {
        let c = confusion(&[Moving; 4], &[Still; 4]).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (0, 4, 0, 0));
        assert_eq!(c.precision().unwrap(), 0.0);
        assert_eq!(c.recall(), Err(MetricsError::Undefined("recall")));
        assert!(c.f1().is_err());
    }

    #[test]
    fn argument_errors() {
        assert_eq!(confusion(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(
            confusion(&[Still], &[Still, Moving]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn singleton_and_hand_case() {
        let c = Confusion {
            tp: 1,
            ..Default::default()
        };
        assert_eq!((c.precision(), c.recall(), c.f1()), (Ok(100.0), Ok(100.0), Ok(100.0)));
        let c = Confusion {
            tp: 3,
            fp: 1,
            fn_: 2,
            tn: 0,
        };
        assert_eq!(c.precision().unwrap(), 75.0);
        assert_eq!(c.recall().unwrap(), 60.0);
        assert!((c.f1().unwrap() - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn reported_row_is_consistent() {
        let f1 = f1_from(94.3, 91.7).unwrap();
        assert!((f1 - 92.98).abs() < 0.01, "{f1}");
    }

    #[test]
    fn zero_tp_f1_undefined() {
        let c = Confusion {
            tp: 0,
            fp: 2,
            fn_: 3,
            tn: 1,
        };
        assert_eq!(c.f1(), Err(MetricsError::Undefined("f1")));
    }

    #[test]
    fn report_json_keys() {
        let c = Confusion {
            tp: 2,
            fp: 0,
            fn_: 0,
            tn: 1,
        };
        let v = serde_json::to_value(c.report()).unwrap();
        for k in ["tp", "fp", "fn", "tn", "precision_pct", "recall_pct", "f1_pct"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["f1_pct"], 100.0);
    }

    proptest::proptest! {
        #[test]
        fn swap_transposes(pairs in proptest::collection::vec((proptest::bool::ANY, proptest::bool::ANY), 1..60)) {
            let to = |b: bool| if b { Moving } else { Still };
            let p: Vec<_> = pairs.iter().map(|x| to(x.0)).collect();
            let t: Vec<_> = pairs.iter().map(|x| to(x.1)).collect();
            let a = confusion(&p, &t).unwrap();
            let b = confusion(&t, &p).unwrap();
            proptest::prop_assert_eq!((a.tp, a.tn, a.fp, a.fn_), (b.tp, b.tn, b.fn_, b.fp));
            proptest::prop_assert_eq!(a.total(), pairs.len() as u64);
            if let Ok(f) = a.f1() {
                let (pr, rc) = (a.precision().unwrap(), a.recall().unwrap());
                proptest::prop_assert!(f >= pr.min(rc) - 1e-9 && f <= pr.max(rc) + 1e-9);
                let direct = 200.0 * a.tp as f64 / (2 * a.tp + a.fp + a.fn_) as f64;
                proptest::prop_assert!((f - direct).abs() <= 1e-9 * direct);
            }
        }
    }
}
