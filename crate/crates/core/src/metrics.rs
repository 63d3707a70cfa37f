//! Accuracy, macro F1 and one-vs-rest macro AUC.
//!
//! Conventions: argmax ties go to the lowest class index; an undefined
//! precision or recall contributes an F1 of 0; AUC ties count one half.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Softmax outputs and integer labels for one evaluated split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    probabilities: Tensor,
    labels: Vec<usize>,
}

impl EvalBatch {
    pub fn new(probabilities: Tensor, labels: Vec<usize>) -> Result<Self> {
        if probabilities.rank() != 2 || probabilities.shape()[0] != labels.len() {
            return Err(Error::shape(
                "eval_batch",
                format!("probabilities {:?} with {} labels", probabilities.shape(), labels.len()),
            ));
        }
        let c = probabilities.shape()[1];
        for (row, (p, &y)) in probabilities.data().chunks(c).zip(&labels).enumerate() {
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 || p.iter().any(|&v| v < 0.0) {
                return Err(Error::shape(
                    "eval_batch",
                    format!("row {row} is not a probability vector (sum {s})"),
                ));
            }
            if y >= c {
                return Err(Error::Label { row, label: y, classes: c });
            }
        }
        Ok(EvalBatch { probabilities, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.probabilities.shape()[1]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn row(&self, i: usize) -> &[f64] {
        let c = self.classes();
        &self.probabilities.data()[i * c..(i + 1) * c]
    }

    /// Predicted class per row.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.row(i))).collect()
    }

    /// Score column for class `c`.
    pub fn scores(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[c]).collect()
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the class lacks a positive or a negative sample.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub auc_macro: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<ClassMetrics>>,
}

impl MetricRecord {
    pub const CSV_HEADER: &'static str = "fold,epoch,split,accuracy,f1_macro,auc_macro";

    pub fn csv_row(&self, fold: usize, epoch: usize, split: &str) -> String {
        format!(
            "{fold},{epoch},{split},{},{},{}",
            self.accuracy, self.f1_macro, self.auc_macro
        )
    }
}

pub fn accuracy(e: &EvalBatch) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let hits = e
        .predictions()
        .iter()
        .zip(e.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / e.len() as f64)
}

/// `matrix[true][predicted]` counts.
pub fn confusion_matrix(e: &EvalBatch) -> Vec<Vec<usize>> {
    let c = e.classes();
    let mut m = vec![vec![0; c]; c];
    for (&p, &y) in e.predictions().iter().zip(e.labels()) {
        m[y][p] += 1;
    }
    m
}

fn class_prf(m: &[Vec<usize>], c: usize) -> (f64, f64, f64) {
    let tp = m[c][c];
    let predicted: usize = m.iter().map(|row| row[c]).sum();
    let actual: usize = m[c].iter().sum();
    if predicted == 0 || actual == 0 {
        let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let r = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        return (p, r, 0.0);
    }
    let p = tp as f64 / predicted as f64;
    let r = tp as f64 / actual as f64;
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Unweighted mean of per-class F1 over classes occurring in the labels or predictions.
pub fn f1_macro(e: &EvalBatch) -> Result<f64> {
    if e.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let m = confusion_matrix(e);
    let present: Vec<usize> = (0..e.classes())
        .filter(|&c| m[c].iter().sum::<usize>() > 0 || m.iter().any(|row| row[c] > 0))
        .collect();
    let total: f64 = present.iter().map(|&c| class_prf(&m, c).2).sum();
    Ok(total / present.len() as f64)
}

/// Mann-Whitney AUC of `scores` for the positives; `None` without both classes.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sum of 1-based mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| positive[i]).count();
        rank_sum += mid_rank * pos_in_group as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub macro_auc: f64,
    pub per_class: Vec<Option<f64>>,
    /// Classes present in the labels but lacking a negative, plus absent classes.
    pub skipped: Vec<usize>,
}

/// One-vs-rest AUC per class averaged over the classes that have both a
/// positive and a negative sample.
pub fn auc_macro(e: &EvalBatch) -> Result<AucReport> {
    let per_class: Vec<Option<f64>> = (0..e.classes())
        .map(|c| {
            let positive: Vec<bool> = e.labels().iter().map(|&y| y == c).collect();
            binary_auc(&e.scores(c), &positive)
        })
        .collect();
    let eligible: Vec<f64> = per_class.iter().flatten().copied().collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleClass);
    }
    let skipped = per_class
        .iter()
        .enumerate()
        .filter_map(|(c, a)| a.is_none().then_some(c))
        .collect();
    Ok(AucReport {
        macro_auc: eligible.iter().sum::<f64>() / eligible.len() as f64,
        per_class,
        skipped,
    })
}

pub fn evaluate(e: &EvalBatch, per_class: bool) -> Result<MetricRecord> {
    let auc = auc_macro(e)?;
    let per_class = per_class.then(|| {
        let m = confusion_matrix(e);
        (0..e.classes())
            .map(|c| {
                let (precision, recall, f1) = class_prf(&m, c);
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    auc: auc.per_class[c],
                }
            })
            .collect()
    });
    Ok(MetricRecord {
        accuracy: accuracy(e)?,
        f1_macro: f1_macro(e)?,
        auc_macro: auc.macro_auc,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-class batch whose class-1 probability is `p1`.
    fn binary(p1: &[f64], labels: &[usize]) -> EvalBatch {
        let data = p1.iter().flat_map(|&p| [1.0 - p, p]).collect();
        EvalBatch::new(Tensor::new(vec![p1.len(), 2], data).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&binary(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        let e = binary(&[0.8, 0.3, 0.6, 0.7], &[1, 0, 0, 1]);
        assert_eq!(accuracy(&e).unwrap(), 0.75);
        assert_eq!(accuracy(&binary(&[0.2], &[1])).unwrap(), 0.0);
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(binary(&[0.5], &[0]).predictions(), vec![0]);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_macro(&binary(&[0.9, 0.1], &[1, 0])).unwrap(), 1.0);
        // preds [1,0,1,1], labels [1,0,0,1]: F1_1 = 0.8, F1_0 = 2/3
        let e = binary(&[0.8, 0.3, 0.6, 0.7], &[1, 0, 0, 1]);
        assert!((f1_macro(&e).unwrap() - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let all_zero = binary(&[0.1, 0.2, 0.3, 0.4], &[0, 0, 1, 1]);
        assert!((f1_macro(&all_zero).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_macro(&binary(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1])).unwrap().macro_auc, 1.0);
        let e = binary(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert_eq!(auc_macro(&e).unwrap().macro_auc, 0.75);
        let ties = binary(&[0.5; 4], &[0, 1, 0, 1]);
        assert_eq!(auc_macro(&ties).unwrap().macro_auc, 0.5);
    }

    #[test]
    fn auc_skips_and_errors() {
        // class 2 never appears as a label
        let p = Tensor::new(vec![2, 3], vec![0.7, 0.2, 0.1, 0.3, 0.6, 0.1]).unwrap();
        let r = auc_macro(&EvalBatch::new(p, vec![0, 1]).unwrap()).unwrap();
        assert_eq!(r.skipped, vec![2]);
        assert_eq!(r.macro_auc, 1.0);

        let one = binary(&[0.3, 0.6], &[1, 1]);
        assert!(matches!(auc_macro(&one), Err(Error::NoEligibleClass)));
    }

    #[test]
    fn eval_batch_validation() {
        let bad = Tensor::new(vec![1, 2], vec![0.5, 0.6]).unwrap();
        assert!(EvalBatch::new(bad, vec![0]).is_err());
        let ok = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(EvalBatch::new(ok.clone(), vec![2]).is_err());
        assert!(EvalBatch::new(ok, vec![0, 1]).is_err());
    }

    #[test]
    fn csv_row_shape() {
        let r = MetricRecord {
            accuracy: 0.5,
            f1_macro: 0.25,
            auc_macro: 1.0,
            per_class: None,
        };
        assert_eq!(r.csv_row(2, 7, "val"), "2,7,val,0.5,0.25,1");
        assert_eq!(MetricRecord::CSV_HEADER.split(',').count(), r.csv_row(0, 0, "x").split(',').count());
    }
}
