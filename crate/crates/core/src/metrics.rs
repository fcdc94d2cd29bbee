//! Pixel- and image-level evaluation.
//!
//! Ratios with a zero denominator evaluate to 0 and set `degenerate` on the
//! report instead of producing NaN.

use std::fmt;
use std::ops::Add;

use crate::autonet::Tensor;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// 2x2 table: rows are predictions, columns ground truth, with margins.
    pub fn table(&self) -> String {
        let w = 14;
        let mut s = String::new();
        s.push_str(&format!("{:<18}|{:>w$} |{:>w$} |{:>w$}\n", "", "Actual: Fire", "Actual: No Fire", ""));
        s.push_str(&format!(
            "{:<18}|{:>w$} |{:>w$} |{:>w$}\n",
            "Predicted: Fire",
            format!("TP = {}", self.tp),
            format!("FP = {}", self.fp),
            self.tp + self.fp
        ));
        s.push_str(&format!(
            "{:<18}|{:>w$} |{:>w$} |{:>w$}\n",
            "Predicted: No Fire",
            format!("FN = {}", self.fn_),
            format!("TN = {}", self.tn),
            self.fn_ + self.tn
        ));
        s.push_str(&format!(
            "{:<18}|{:>w$} |{:>w$} |{:>w$}\n",
            "",
            self.tp + self.fn_,
            self.fp + self.tn,
            self.total()
        ));
        s
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, o: Self) -> Self {
        ConfusionCounts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

/// A prediction counts as positive when `pred >= threshold`; truth is positive when `>= 0.5`.
pub fn confusion(pred: &Tensor, truth: &Tensor, threshold: f64) -> Result<ConfusionCounts> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    Ok(confusion_slices(pred.data(), truth.data(), threshold))
}

pub fn confusion_slices(pred: &[f64], truth: &[f64], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p >= threshold, t >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn precision_recall(c: &ConfusionCounts) -> (f64, f64) {
    (ratio(c.tp, c.tp + c.fp).0, ratio(c.tp, c.tp + c.fn_).0)
}

pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// `tp / (tp + 0.2 fp + 0.8 fn)`.
pub fn f2_from_counts(c: &ConfusionCounts) -> f64 {
    let den = c.tp as f64 + 0.2 * c.fp as f64 + 0.8 * c.fn_ as f64;
    if den == 0.0 {
        0.0
    } else {
        c.tp as f64 / den
    }
}

pub fn false_positive_rate(c: &ConfusionCounts) -> f64 {
    ratio(c.fp, c.fp + c.tn).0
}

pub fn binary_accuracy(preds: &[f64], labels: &[u8], threshold: f64) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let correct = preds.iter().zip(labels).filter(|(&p, &l)| (p >= threshold) == (l == 1)).count();
    correct as f64 / preds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub accuracy: f64,
    pub threshold: f64,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "precision,recall,f1,f2,binary_accuracy,threshold,degenerate";

    pub fn from_counts(c: &ConfusionCounts, threshold: f64) -> Self {
        let (precision, dp) = ratio(c.tp, c.tp + c.fp);
        let (recall, dr) = ratio(c.tp, c.tp + c.fn_);
        let (accuracy, da) = ratio(c.tp + c.tn, c.total());
        MetricsReport {
            precision,
            recall,
            f1: f_beta(precision, recall, 1.0),
            f2: f_beta(precision, recall, 2.0),
            accuracy,
            threshold,
            degenerate: dp || dr || da,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.precision, self.recall, self.f1, self.f2, self.accuracy, self.threshold, self.degenerate
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::CSV_HEADER)?;
        writeln!(f, "{}", self.csv_row())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn confusion_basics() {
        let truth = t(&[1., 0., 1., 0.]);
        let c = confusion(&truth, &truth, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let c = confusion(&t(&[0.6; 4]), &t(&[0.0; 4]), 0.5).unwrap();
        assert_eq!((c.fp, c.tn), (4, 0));
        assert!(confusion(&t(&[0.1]), &t(&[0.0, 1.0]), 0.5).is_err());
    }

    #[test]
    fn confusion_is_additive_over_batches() {
        let p = [0.1, 0.7, 0.5, 0.49, 0.9, 0.2];
        let y = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let whole = confusion_slices(&p, &y, 0.5);
        let parts = confusion_slices(&p[..2], &y[..2], 0.5) + confusion_slices(&p[2..], &y[2..], 0.5);
        assert_eq!(whole, parts);
    }

    #[test]
    fn degenerate_ratios_are_zero() {
        assert_eq!(precision_recall(&ConfusionCounts::new(0, 0, 3, 5)), (0.0, 0.0));
        assert_eq!(precision_recall(&ConfusionCounts::new(4, 0, 0, 5)), (1.0, 1.0));
        assert_eq!(f_beta(0.0, 0.0, 2.0), 0.0);
        assert_eq!(f_beta(1.0, 1.0, 2.0), 1.0);
        assert!(MetricsReport::from_counts(&ConfusionCounts::new(0, 0, 0, 9), 0.5).degenerate);
    }

    #[test]
    fn f2_weights_misses_more_than_false_alarms() {
        assert_eq!(f2_from_counts(&ConfusionCounts::new(1, 0, 0, 0)), 1.0);
        let base = ConfusionCounts::new(50, 10, 10, 100);
        let more_fn = ConfusionCounts { fn_: 15, ..base };
        let more_fp = ConfusionCounts { fp: 15, ..base };
        assert!(f2_from_counts(&more_fn) < f2_from_counts(&more_fp));
    }

    #[test]
    fn fpr_and_accuracy() {
        assert_eq!(false_positive_rate(&ConfusionCounts::new(3, 0, 1, 10)), 0.0);
        assert_eq!(false_positive_rate(&ConfusionCounts::new(3, 7, 1, 7)), 0.5);
        assert_eq!(binary_accuracy(&[0.9, 0.1, 0.8], &[1, 0, 1], 0.5), 1.0);
        assert_eq!(binary_accuracy(&[0.9, 0.9, 0.1, 0.1], &[1, 0, 1, 0], 0.5), 0.5);
        let preds: Vec<f64> = (0..1084).map(|i| if i < 1036 { 1.0 } else { 0.0 }).collect();
        let acc = binary_accuracy(&preds, &vec![1; 1084], 0.5);
        assert!((acc - 1036.0 / 1084.0).abs() < 1e-15);
        assert!((acc - 0.95572).abs() < 5e-6);
    }

    #[test]
    fn table_has_margins() {
        let s = ConfusionCounts::new(18_691, 2_607, 277, 35_072_953).table();
        assert!(s.contains("21298") && s.contains("35073230") && s.contains("35094528"));
    }

    proptest! {
        #[test]
        fn f2_counts_match_f_beta(tp in 1u64..100_000, fp in 0u64..100_000, fn_ in 0u64..100_000) {
            let c = ConfusionCounts::new(tp, fp, fn_, 0);
            let (p, r) = precision_recall(&c);
            prop_assert!((f2_from_counts(&c) - f_beta(p, r, 2.0)).abs() < 1e-12);
        }

        #[test]
        fn f_beta_monotone(tp in 1u64..1000, fp in 0u64..1000, fn_ in 0u64..1000, beta in 0.25f64..4.0) {
            let score = |c: ConfusionCounts| { let (p, r) = precision_recall(&c); f_beta(p, r, beta) };
            let c = ConfusionCounts::new(tp, fp, fn_, 0);
            let base = score(c);
            let more_tp = score(ConfusionCounts { tp: tp + 1, ..c });
            let more_fp = score(ConfusionCounts { fp: fp + 1, ..c });
            let more_fn = score(ConfusionCounts { fn_: fn_ + 1, ..c });
            prop_assert!(more_tp >= base - 1e-15);
            prop_assert!(more_fp <= base + 1e-15);
            prop_assert!(more_fn <= base + 1e-15);
        }
    }
}
