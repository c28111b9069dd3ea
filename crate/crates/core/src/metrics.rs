//! Binary classification metrics, ROC AUC and Bland-Altman agreement.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class 1 (apnea) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions but {} labels", predictions.len(), labels.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::OutOfRange(format!("non-binary value (prediction {p}, label {y})")));
        }
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Ratios whose denominator was zero are NaN and listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Evaluate every metric from the confusion counts and the positive-class scores.
pub fn summarize(cm: &ConfusionMatrix, scores: &[f64], labels: &[usize]) -> Result<MetricsReport> {
    let mut undefined = Vec::new();
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), "accuracy", &mut undefined);
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut undefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut undefined);
    let specificity = ratio(cm.tn, cm.tn + cm.fp, "specificity", &mut undefined);
    let f1 = if precision.is_nan() || recall.is_nan() || precision + recall == 0.0 {
        undefined.push("f1".into());
        f64::NAN
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let auc = match roc_auc(scores, labels)? {
        Some(a) => a,
        None => {
            undefined.push("auc".into());
            f64::NAN
        }
    };
    Ok(MetricsReport {
        accuracy,
        precision,
        recall,
        f1,
        auc,
        sensitivity: recall,
        specificity,
        undefined,
    })
}

/// Probability that a random positive outscores a random negative, ties counting half.
/// This equals the trapezoidal area under the ROC curve. `None` without both classes.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Ok(None);
    }
    // Walk tied groups in ascending score order, counting negatives strictly below.
    let mut concordant = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let group = &pairs[i..j];
        let pos = group.iter().filter(|p| p.1 == 1).count() as f64;
        let neg = group.len() as f64 - pos;
        concordant += pos * (neg_below + 0.5 * neg);
        neg_below += neg;
        i = j;
    }
    Ok(Some(concordant / (n_pos * n_neg)))
}

/// ROC curve points `(fpr, tpr)` from the highest threshold down.
pub fn roc_curve(scores: &[f64], labels: &[usize]) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = labels.iter().filter(|&&y| y == 1).count().max(1) as f64;
    let n_neg = (labels.len() - labels.iter().filter(|&&y| y == 1).count()).max(1) as f64;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        pts.push((fp / n_neg, tp / n_pos));
    }
    pts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// Per-pair `(mean of the pair, a - b)`.
    pub points: Vec<(f64, f64)>,
    pub mean_difference: f64,
    pub min_difference: f64,
    pub max_difference: f64,
    pub lower_limit: f64,
    pub upper_limit: f64,
}

/// Agreement of paired measurements; limits are mean ± 1.96 sample std of the differences.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} paired values", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("no paired values".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = if diffs.len() > 1 {
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(BlandAltman {
        points: a.iter().zip(b).map(|(x, y)| ((x + y) / 2.0, x - y)).collect(),
        mean_difference: mean,
        min_difference: diffs.iter().copied().fold(f64::INFINITY, f64::min),
        max_difference: diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        lower_limit: mean - 1.96 * sd,
        upper_limit: mean + 1.96 * sd,
    })
}

pub const REPORT_HEADER: [&str; 8] = ["model", "accuracy", "precision", "recall", "f1", "auc", "sensitivity", "specificity"];

/// One row per named report.
pub fn write_report_csv<W: Write>(rows: &[(String, MetricsReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for (name, r) in rows {
        let mut rec = vec![name.clone()];
        rec.extend([r.accuracy, r.precision, r.recall, r.f1, r.auc, r.sensitivity, r.specificity].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<report csv>", e))?;
    Ok(())
}

pub fn write_bland_altman_csv<W: Write>(ba: &BlandAltman, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mean", "difference"])?;
    for (m, d) in &ba.points {
        w.write_record([m.to_string(), d.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<bland-altman csv>", e))?;
    Ok(())
}

fn pct(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else {
        format!("{:.2}", 100.0 * v)
    }
}

/// Fixed-width table, values in percent.
pub struct ReportTable<'a>(pub &'a [(String, MetricsReport)]);

impl fmt::Display for ReportTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.0.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
        writeln!(
            f,
            "{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}  {:>8}  {:>11}  {:>11}",
            "Model", "Accuracy", "Precision", "Recall", "F1", "AUC", "Sensitivity", "Specificity"
        )?;
        for (name, r) in self.0 {
            writeln!(
                f,
                "{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}  {:>8}  {:>11}  {:>11}",
                name,
                pct(r.accuracy),
                pct(r.precision),
                pct(r.recall),
                pct(r.f1),
                pct(r.auc),
                pct(r.sensitivity),
                pct(r.specificity)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_by_hand() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, tn: 1, fp: 1, fn_: 1 });
        let cm = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert_eq!(confusion(&[], &[]).unwrap(), ConfusionMatrix::default());
        assert!(confusion(&[1], &[]).is_err());
    }

    #[test]
    fn summaries_by_hand() {
        let r = summarize(&ConfusionMatrix { tp: 1, tn: 1, fp: 0, fn_: 0 }, &[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!((r.accuracy, r.f1), (1.0, 1.0));
        let r = summarize(&ConfusionMatrix { tp: 1, tn: 1, fp: 1, fn_: 1 }, &[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let r = summarize(&ConfusionMatrix { tp: 0, tn: 3, fp: 0, fn_: 0 }, &[0.1, 0.2, 0.3], &[0, 0, 0]).unwrap();
        assert!(r.precision.is_nan() && r.recall.is_nan() && r.f1.is_nan() && r.auc.is_nan());
        assert!(r.undefined.contains(&"precision".to_string()));
        assert!(r.undefined.contains(&"auc".to_string()));
        assert_eq!(r.specificity, 1.0);
    }

    #[test]
    fn auc_by_rank_enumeration() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]).unwrap(), Some(1.0));
        assert_eq!(roc_auc(&[0.5; 4], &[1, 1, 0, 0]).unwrap(), Some(0.5));
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 0]).unwrap(), Some(0.0));
    }

    #[test]
    fn bland_altman_by_hand() {
        let z = bland_altman(&[0.9, 0.8], &[0.9, 0.8]).unwrap();
        assert_eq!((z.mean_difference, z.min_difference, z.max_difference), (0.0, 0.0, 0.0));
        let r = bland_altman(&[12.0, 16.0, 23.0], &[10.0, 10.0, 10.0]).unwrap();
        assert!((r.mean_difference - 7.0).abs() < 1e-12);
        assert_eq!((r.min_difference, r.max_difference), (2.0, 13.0));
        assert_eq!(r.points.len(), 3);
        assert!(bland_altman(&[1.0], &[]).is_err());
    }

    #[test]
    fn table_and_csv() {
        let r = summarize(&ConfusionMatrix { tp: 1, tn: 1, fp: 1, fn_: 1 }, &[0.9, 0.1], &[1, 0]).unwrap();
        let rows = vec![("cnn".to_string(), r)];
        let t = ReportTable(&rows).to_string();
        assert!(t.contains("Accuracy") && t.contains("50.00"));
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("model,accuracy,precision,recall,f1,auc,sensitivity,specificity\n"));
    }

    fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
        let mut s = 0.0;
        let mut n = 0.0;
        for (i, &a) in scores.iter().enumerate() {
            for (j, &b) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    n += 1.0;
                    s += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
        }
        s / n
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count_and_monotone_invariance(
            data in prop::collection::vec((0u8..6, 0usize..2), 2..40)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
            let labels: Vec<usize> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let a = roc_auc(&scores, &labels).unwrap().unwrap();
            prop_assert!((a - brute_auc(&scores, &labels)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert!((roc_auc(&warped, &labels).unwrap().unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn report_identities(tp in 0u64..50, tn in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let cm = ConfusionMatrix { tp, tn, fp, fn_ };
            prop_assume!(cm.total() > 0);
            let r = summarize(&cm, &[], &[]).unwrap();
            prop_assert_eq!(r.accuracy, (tp + tn) as f64 / cm.total() as f64);
            prop_assert!(r.sensitivity.to_bits() == r.recall.to_bits());
            if !r.f1.is_nan() {
                prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-12);
                prop_assert!(r.f1 >= r.precision.min(r.recall) - 1e-12);
            }
        }
    }
}
