use serde::Serialize;

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<usize>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(Error::invalid("confusion", "matrix must be square"));
        }
        Ok(Confusion { classes: c, counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let mut m = Confusion::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::invalid(
                "confusion",
                format!("class pair ({truth}, {predicted}) out of range for {}", self.classes),
            ));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    fn support(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    fn predicted(&self, c: usize) -> usize {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        let correct: usize = (0..self.classes).map(|c| self.counts[c][c]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Recall of every class; `None` for classes without samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let s = self.support(c);
                (s > 0).then(|| self.counts[c][c] as f64 / s as f64)
            })
            .collect()
    }

    /// Unweighted mean of the recalls of classes present.
    pub fn avg_class_accuracy(&self) -> f64 {
        mean(self.per_class_accuracy().into_iter().flatten())
    }

    pub fn precision(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| match self.predicted(c) {
                0 => 0.0,
                p => self.counts[c][c] as f64 / p as f64,
            })
            .collect()
    }

    /// Harmonic mean of precision and recall per class (0 when both are 0).
    pub fn f1(&self) -> Vec<f64> {
        let recall = self.per_class_accuracy();
        self.precision()
            .into_iter()
            .zip(recall)
            .map(|(p, r)| {
                let r = r.unwrap_or(0.0);
                if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Mean F1 over classes present.
    pub fn macro_f1(&self) -> f64 {
        let f1 = self.f1();
        mean((0..self.classes).filter(|&c| self.support(c) > 0).map(|c| f1[c]))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Summary of one evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub overall_acc: f64,
    pub avg_class_acc: f64,
    pub per_class_acc: Vec<Option<f64>>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub loss: f64,
    pub confusion: Confusion,
}

impl Evaluation {
    pub fn from_confusion(confusion: Confusion, loss: f64) -> Self {
        Evaluation {
            overall_acc: confusion.overall_accuracy(),
            avg_class_acc: confusion.avg_class_accuracy(),
            per_class_acc: confusion.per_class_accuracy(),
            f1: confusion.f1(),
            macro_f1: confusion.macro_f1(),
            loss,
            confusion,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Confusion::from_predictions(3, &[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap();
        assert_eq!(m.overall_accuracy(), 1.0);
        assert_eq!(m.avg_class_accuracy(), 1.0);
        assert_eq!(m.f1(), vec![1.0; 3]);
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 2]]);
    }

    #[test]
    fn constant_predictor() {
        let m = Confusion::from_predictions(2, &[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(m.overall_accuracy(), 0.5);
        assert_eq!(m.avg_class_accuracy(), 0.5);
        let f1 = m.f1();
        assert_eq!(f1[1], 0.0);
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hand_built_matrix() {
        // rows: true class
        let m = Confusion::from_rows(vec![vec![8, 1, 1], vec![2, 6, 2], vec![0, 3, 27]]).unwrap();
        let recalls = [0.8, 0.6, 0.9];
        assert!((m.avg_class_accuracy() - (0.8 + 0.6 + 0.9) / 3.0).abs() < 1e-15);
        assert!((m.overall_accuracy() - 41.0 / 50.0).abs() < 1e-15);
        let precision = [8.0 / 10.0, 6.0 / 10.0, 27.0 / 30.0];
        for c in 0..3 {
            let (p, r) = (precision[c], recalls[c]);
            assert!((m.f1()[c] - 2.0 * p * r / (p + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_class() {
        assert!(Confusion::from_predictions(2, &[0, 2], &[0, 1]).is_err());
    }
}
