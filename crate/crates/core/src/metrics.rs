//! Classification metrics.

use crate::error::{Error, Result};

fn check(truth: &[usize], pred: &[usize]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::config("cannot score an empty label set"));
    }
    Ok(())
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check(truth, pred)?;
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Support-weighted mean of per-class F1. A class whose precision and
/// recall are both zero scores 0.
pub fn weighted_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<f64> {
    check(truth, pred)?;
    if let Some(&label) = truth.iter().chain(pred).find(|&&c| c >= n_classes) {
        return Err(Error::Label {
            label,
            classes: n_classes,
        });
    }
    let mut tp = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        support[t] += 1;
        predicted[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let n = truth.len() as f64;
    let mut score = 0.0;
    for c in 0..n_classes {
        if support[c] == 0 || tp[c] == 0 {
            continue;
        }
        let precision = tp[c] as f64 / predicted[c] as f64;
        let recall = tp[c] as f64 / support[c] as f64;
        let f1 = 2.0 * precision * recall / (precision + recall);
        score += support[c] as f64 / n * f1;
    }
    Ok(score)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(data: &[f64], cols: usize) -> Vec<usize> {
    data.chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_f1_examples() {
        assert_eq!(weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        let f = weighted_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((f - 0.733333).abs() < 1e-6, "{f}");
        assert_eq!(weighted_f1(&[0, 0], &[1, 1], 2).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_and_argmax() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
        assert_eq!(argmax_rows(&[0.1, 0.5, 0.5, 2.0, -1.0, 0.0], 3), vec![1, 0]);
        assert!(accuracy(&[], &[]).is_err());
    }
}
