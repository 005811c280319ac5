use std::fmt;

use serde::{Deserialize, Serialize};

use super::ClassifierError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[bool], truths: &[bool]) -> Result<Self, ClassifierError> {
        if preds.len() != truths.len() {
            return Err(ClassifierError::LengthMismatch {
                predictions: preds.len(),
                truths: truths.len(),
            });
        }
        let mut m = ConfusionMatrix::default();
        for (&p, &t) in preds.iter().zip(truths) {
            match (p, t) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Metrics whose denominator was zero (reported as 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub mcc: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.mcc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub matrix: ConfusionMatrix,
    pub degenerate: Degenerate,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

impl MetricsReport {
    pub fn from_matrix(m: ConfusionMatrix) -> Self {
        let (tp, fp, fn_, tn) = (m.tp as f64, m.fp as f64, m.fn_ as f64, m.tn as f64);
        let (precision, dp) = ratio(tp, tp + fp);
        let (recall, dr) = ratio(tp, tp + fn_);
        let (mcc, dm) = ratio(
            tp * tn - fp * fn_,
            ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(),
        );
        MetricsReport {
            precision,
            recall,
            mcc,
            matrix: m,
            degenerate: Degenerate {
                precision: dp,
                recall: dr,
                mcc: dm,
            },
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MCC {:.2}, Precision {:.2}, Recall {:.2}",
            self.mcc, self.precision, self.recall
        )
    }
}

/// Precision, recall and MCC of `preds` against `truths`.
pub fn evaluate(preds: &[bool], truths: &[bool]) -> Result<MetricsReport, ClassifierError> {
    let m = ConfusionMatrix::from_predictions(preds, truths)?;
    if m.total() == 0 {
        return Err(ClassifierError::EmptyEvaluation);
    }
    Ok(MetricsReport::from_matrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(m: ConfusionMatrix) -> (Vec<bool>, Vec<bool>) {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for (n, pv, tv) in [(m.tp, true, true), (m.fp, true, false), (m.fn_, false, true), (m.tn, false, false)] {
            for _ in 0..n {
                p.push(pv);
                t.push(tv);
            }
        }
        (p, t)
    }

    #[test]
    fn perfect() {
        let t = [true, false, false, true];
        let r = evaluate(&t, &t).unwrap();
        assert_eq!((r.precision, r.recall, r.mcc), (1.0, 1.0, 1.0));
        assert!(!r.degenerate.any());
    }

    #[test]
    fn hand_values() {
        let (p, t) = expand(ConfusionMatrix {
            tp: 2,
            fp: 1,
            fn_: 3,
            tn: 94,
        });
        let r = evaluate(&p, &t).unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 0.4).abs() < 1e-12);
        // 185 / sqrt(3 * 5 * 95 * 97)
        assert!((r.mcc - 185.0 / 138225f64.sqrt()).abs() < 1e-12);
        assert!((r.mcc - 0.4976).abs() < 1e-4);
    }

    #[test]
    fn degenerate_flags() {
        let r = evaluate(&[false, false], &[false, false]).unwrap();
        assert_eq!((r.precision, r.recall, r.mcc), (0.0, 0.0, 0.0));
        assert!(r.degenerate.precision && r.degenerate.recall && r.degenerate.mcc);
        assert!(matches!(evaluate(&[], &[]), Err(ClassifierError::EmptyEvaluation)));
        assert!(matches!(
            evaluate(&[true], &[true, false]),
            Err(ClassifierError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn headline_formatting() {
        let mut r = MetricsReport::from_matrix(ConfusionMatrix::default());
        r.mcc = 0.63;
        r.precision = 0.80;
        r.recall = 0.51;
        assert_eq!(r.to_string(), "MCC 0.63, Precision 0.80, Recall 0.51");
    }

    #[test]
    fn matrix_json_uses_fn_key() {
        let m = ConfusionMatrix { tp: 1, fp: 2, fn_: 3, tn: 4 };
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }
}
