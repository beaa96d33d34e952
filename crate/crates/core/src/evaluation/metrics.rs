use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::signal_io::Stage;

/// Rows are true stages, columns predicted, both in (Wake, N1, N2, N3, REM) order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..5).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, s: usize) -> u64 {
        self.counts[s].iter().sum()
    }

    pub fn col_sum(&self, s: usize) -> u64 {
        self.counts.iter().map(|r| r[s]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            r.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }

    pub fn record(&mut self, truth: Stage, pred: Stage) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    /// Aligned text grid with stage labels.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:>8}", "true\\pred");
        for s in Stage::ALL {
            let _ = write!(out, "{:>8}", s.as_str());
        }
        out.push('\n');
        for s in Stage::ALL {
            let _ = write!(out, "{:>9}", s.as_str());
            for p in Stage::ALL {
                let _ = write!(out, "{:>8}", self.counts[s.index()][p.index()]);
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(truth: &[Stage], pred: &[Stage]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(pred) {
        cm.record(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub precision: [f64; 5],
    pub recall: [f64; 5],
    pub f1: [f64; 5],
    pub accuracy: f64,
    pub macro_f1: f64,
    /// One entry per zero denominator that was reported as 0.
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-stage precision/recall/F1, accuracy and macro-F1.
///
/// Zero denominators give 0 and add a warning rather than NaN.
pub fn metrics(cm: &ConfusionMatrix) -> Result<StageMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut m = StageMetrics {
        precision: [0.0; 5],
        recall: [0.0; 5],
        f1: [0.0; 5],
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1: 0.0,
        warnings: Vec::new(),
    };
    for s in Stage::ALL {
        let i = s.index();
        let tp = cm.counts[i][i];
        m.precision[i] = ratio(tp, cm.col_sum(i)).unwrap_or_else(|| {
            m.warnings.push(format!("{s}: no predictions, precision set to 0"));
            0.0
        });
        m.recall[i] = ratio(tp, cm.row_sum(i)).unwrap_or_else(|| {
            m.warnings.push(format!("{s}: no true epochs, recall set to 0"));
            0.0
        });
        let (p, r) = (m.precision[i], m.recall[i]);
        m.f1[i] = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    m.macro_f1 = m.f1.iter().sum::<f64>() / 5.0;
    Ok(m)
}

impl StageMetrics {
    /// Pre/Re/F1 rows by stage column, plus overall accuracy and macro-F1.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<6}", "");
        for s in Stage::ALL {
            let _ = write!(out, "{:>7}", s.as_str());
        }
        out.push_str("   Overall Accuracy\n");
        let rows: [(&str, &[f64; 5]); 3] = [("Pre", &self.precision), ("Re", &self.recall), ("F1", &self.f1)];
        for (i, (label, vals)) in rows.iter().enumerate() {
            let _ = write!(out, "{label:<6}");
            for v in vals.iter() {
                let _ = write!(out, "{v:>7.2}");
            }
            if i == 0 {
                let _ = write!(out, "   {:.2}", self.accuracy);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "macro-F1 {:.4}", self.macro_f1);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let t: Vec<Stage> = (0..100).map(|i| Stage::ALL[i % 5]).collect();
        let cm = confusion(&t, &t).unwrap();
        assert_eq!(cm.trace(), 100);
        let m = metrics(&cm).unwrap();
        assert!(m.precision.iter().chain(&m.recall).chain(&m.f1).all(|&v| v == 1.0));
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn all_wake_predicted_n1() {
        let cm = confusion(&[Stage::Wake; 7], &[Stage::N1; 7]).unwrap();
        assert_eq!(cm.counts[0][1], 7);
        assert_eq!(cm.total(), 7);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert!(!m.warnings.is_empty());
    }

    #[test]
    fn definitional_arithmetic() {
        // Wake: TP 8, FP 2 (N1 predicted Wake), FN 8 (Wake predicted N2).
        let mut cm = ConfusionMatrix::default();
        cm.counts[0][0] = 8;
        cm.counts[1][0] = 2;
        cm.counts[0][2] = 8;
        let m = metrics(&cm).unwrap();
        assert!((m.precision[0] - 0.8).abs() < 1e-15);
        assert!((m.recall[0] - 0.5).abs() < 1e-15);
        assert!((m.f1[0] - 8.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion(&[Stage::Wake], &[]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(metrics(&ConfusionMatrix::default()), Err(EvalError::EmptyMatrix)));
    }

    #[test]
    fn table_layout() {
        let m = StageMetrics {
            precision: [0.91, 0.31, 0.86, 0.85, 0.79],
            recall: [0.92, 0.35, 0.80, 0.87, 0.78],
            f1: [0.92, 0.33, 0.83, 0.86, 0.78],
            accuracy: 0.85,
            macro_f1: 0.744,
            warnings: vec![],
        };
        let t = m.to_table();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].contains("Wake") && lines[0].contains("REM") && lines[0].contains("Overall Accuracy"));
        assert!(lines[1].starts_with("Pre"));
        assert!(lines[1].contains("0.91") && lines[1].ends_with("0.85"));
        assert!(lines[2].starts_with("Re") && lines[2].contains("0.92"));
        assert!(lines[3].starts_with("F1") && lines[3].contains("0.92"));
    }
}
