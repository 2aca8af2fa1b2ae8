//! Confusion matrix and the three reported scores: accuracy, macro-F1 and
//! Cohen's kappa.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::input(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::input("truth and predictions differ in length"));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::input(format!(
                "class pair ({truth}, {predicted}) outside 0..{}",
                self.classes
            )));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.trace() as f64 / total as f64
    }

    /// Unweighted mean of per-class F1 over the classes present in the truth.
    /// A present class that is never predicted correctly scores 0.
    pub fn macro_f1(&self) -> f64 {
        let mut sum = 0.0;
        let mut present = 0;
        for c in 0..self.classes {
            let support = self.row_sum(c);
            if support == 0 {
                continue;
            }
            present += 1;
            let tp = self.get(c, c) as f64;
            let fp = (self.col_sum(c) - self.get(c, c)) as f64;
            let fn_ = (support - self.get(c, c)) as f64;
            sum += 2.0 * tp / (2.0 * tp + fp + fn_);
        }
        if present == 0 {
            0.0
        } else {
            sum / present as f64
        }
    }

    /// `(p_o − p_e) / (1 − p_e)` with chance agreement from the marginals.
    ///
    /// When every sample sits in one class on both axes, `p_e = 1`; the
    /// agreement is then perfect and kappa is reported as 1.
    pub fn kappa(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let n = total as f64;
        let po = self.trace() as f64 / n;
        let pe: f64 = (0..self.classes)
            .map(|c| (self.row_sum(c) as f64 / n) * (self.col_sum(c) as f64 / n))
            .sum();
        if pe >= 1.0 {
            return 1.0;
        }
        (po - pe) / (1.0 - pe)
    }

    pub fn scores(&self) -> Scores {
        Scores {
            accuracy: self.accuracy(),
            f1: self.macro_f1(),
            kappa: self.kappa(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub kappa: f64,
}
