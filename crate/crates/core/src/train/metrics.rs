use serde::{Deserialize, Serialize};

/// Accuracy, macro-F1 and the confusion matrix (`confusion[truth][pred]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    m
}

impl Evaluation {
    /// Derives every metric from a confusion matrix. A class absent from
    /// both truth and predictions has F1 = 0.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        };
        let per_class_f1: Vec<f64> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let fn_: u64 = confusion[c].iter().sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|r| confusion[r][c]).sum::<u64>() - tp;
                let denom = 2 * tp + fp + fn_;
                if denom == 0 {
                    0.0
                } else {
                    (2 * tp) as f64 / denom as f64
                }
            })
            .collect();
        let macro_f1 = if k == 0 {
            0.0
        } else {
            per_class_f1.iter().sum::<f64>() / k as f64
        };
        Self {
            accuracy,
            macro_f1,
            per_class_f1,
            confusion,
        }
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], classes: usize) -> Self {
        Self::from_confusion(confusion_matrix(truth, pred, classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2, 1, 0];
        let e = Evaluation::from_predictions(&t, &t, 3);
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.macro_f1, 1.0);
        assert_eq!(e.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn hand_example() {
        let e = Evaluation::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
        assert_eq!(e.accuracy, 0.75);
        assert_abs_diff_eq!(e.per_class_f1[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.per_class_f1[1], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(e.macro_f1, 0.733_333_333_3, epsilon = 1e-9);
    }

    #[test]
    fn constant_predictor() {
        let e = Evaluation::from_predictions(&[0, 1, 0, 1], &[0, 0, 0, 0], 2);
        assert_eq!(e.accuracy, 0.5);
        assert_abs_diff_eq!(e.macro_f1, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn absent_class_scores_zero() {
        let e = Evaluation::from_predictions(&[0, 1], &[0, 1], 3);
        assert_eq!(e.per_class_f1[2], 0.0);
        assert_abs_diff_eq!(e.macro_f1, 2.0 / 3.0, epsilon = 1e-12);
    }
}
