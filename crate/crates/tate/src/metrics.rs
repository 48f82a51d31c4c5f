//! Confusion matrix, accuracy and Macro-F1.

use serde::Serialize;

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<usize>>) -> Self {
        let c = counts.len();
        assert!(counts.iter().all(|r| r.len() == c));
        Self { counts }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    /// Merge another matrix in; used when evaluation shards are combined.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }

    /// F1 = 2PR/(P+R) per class, 0 when P+R = 0 (zero-support convention).
    pub fn per_class_f1(&self) -> Vec<f64> {
        let c = self.classes();
        (0..c)
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let pred: usize = (0..c).map(|i| self.counts[i][k]).sum();
                let actual: usize = self.counts[k].iter().sum();
                let precision = if pred == 0 { 0.0 } else { tp / pred as f64 };
                let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let f1 = self.per_class_f1();
        f1.iter().sum::<f64>() / f1.len() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            accuracy: confusion.accuracy(),
            macro_f1: confusion.macro_f1(),
            per_class_f1: confusion.per_class_f1(),
            confusion,
        }
    }
}
