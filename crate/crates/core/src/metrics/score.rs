//! Macro-F1 scoring over `k` IND classes plus the OOD class.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[usize], truths: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} truths",
                predictions.len(),
                truths.len()
            )));
        }
        let mut counts = vec![0; classes * classes];
        for (&p, &t) in predictions.iter().zip(truths) {
            if p >= classes || t >= classes {
                return Err(Error::invalid(format!(
                    "label pair ({t}, {p}) outside {classes} classes"
                )));
            }
            counts[t * classes + p] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True samples of the class.
    pub support: usize,
    pub predicted: usize,
}

impl ClassScore {
    /// Absent from both truths and predictions; contributes F1 = 0.
    pub fn zero_support(&self) -> bool {
        self.support == 0 && self.predicted == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub f1_all: f64,
    pub f1_ood: f64,
    pub f1_ind: f64,
    /// IND classes first, OOD last.
    pub classes: Vec<ClassScore>,
    pub samples: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Scores 0-based predictions against truths, where label `k` is OOD.
pub fn score(predictions: &[usize], truths: &[usize], k: usize) -> Result<ScoreReport> {
    if k == 0 {
        return Err(Error::invalid("scoring needs at least one IND class"));
    }
    let cm = ConfusionMatrix::from_predictions(predictions, truths, k + 1)?;
    Ok(ScoreReport::from_confusion(&cm))
}

impl ScoreReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let k = cm.classes() - 1;
        let classes: Vec<ClassScore> = (0..=k)
            .map(|c| {
                let tp = cm.get(c, c);
                let precision = ratio(tp, cm.predicted(c));
                let recall = ratio(tp, cm.support(c));
                // 2PR/(P+R) in count form: one rounding, and 0 whenever tp = 0.
                let errors = cm.predicted(c) + cm.support(c) - 2 * tp;
                let f1 = ratio(2 * tp, 2 * tp + errors);
                ClassScore {
                    name: if c == k { "ood".to_string() } else { format!("class{c}") },
                    precision,
                    recall,
                    f1,
                    support: cm.support(c),
                    predicted: cm.predicted(c),
                }
            })
            .collect();
        let f1_ind = classes[..k].iter().map(|c| c.f1).sum::<f64>() / k as f64;
        let f1_all = classes.iter().map(|c| c.f1).sum::<f64>() / (k + 1) as f64;
        ScoreReport {
            f1_all,
            f1_ood: classes[k].f1,
            f1_ind,
            classes,
            samples: cm.total(),
        }
    }

    /// Renames the IND classes (OOD keeps its name).
    pub fn with_names(mut self, names: &[String]) -> Self {
        for (c, n) in self.classes.iter_mut().zip(names) {
            c.name = n.clone();
        }
        self
    }

    pub fn k(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn zero_support_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&c| self.classes[c].zero_support()).collect()
    }

    /// Fixed column order: the three macro scores, then one row per class.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("f1_all\tf1_ood\tf1_ind\tsamples\n");
        writeln!(s, "{}\t{}\t{}\t{}", self.f1_all, self.f1_ood, self.f1_ind, self.samples).unwrap();
        s.push_str("class\tname\tprecision\trecall\tf1\tsupport\tpredicted\tzero_support\n");
        for (i, c) in self.classes.iter().enumerate() {
            writeln!(
                s,
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.name,
                c.precision,
                c.recall,
                c.f1,
                c.support,
                c.predicted,
                c.zero_support()
            )
            .unwrap();
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Parse {
            path: "<score report>".into(),
            line,
            message: message.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 4 || !lines[0].starts_with("f1_all\t") || !lines[2].starts_with("class\t") {
            return Err(bad(1, "missing score report headers"));
        }
        let num = |line: usize, s: &str| s.parse::<f64>().map_err(|e| bad(line, &e.to_string()));
        let count = |line: usize, s: &str| s.parse::<usize>().map_err(|e| bad(line, &e.to_string()));
        let head: Vec<&str> = lines[1].split('\t').collect();
        if head.len() != 4 {
            return Err(bad(2, "expected 4 columns"));
        }
        let mut classes = Vec::new();
        for (i, l) in lines[3..].iter().enumerate() {
            let line = i + 4;
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 8 {
                return Err(bad(line, "expected 8 columns"));
            }
            if count(line, f[0])? != i {
                return Err(bad(line, "class rows out of order"));
            }
            classes.push(ClassScore {
                name: f[1].to_string(),
                precision: num(line, f[2])?,
                recall: num(line, f[3])?,
                f1: num(line, f[4])?,
                support: count(line, f[5])?,
                predicted: count(line, f[6])?,
            });
        }
        if classes.len() < 2 {
            return Err(bad(4, "need at least one IND class and the OOD class"));
        }
        Ok(ScoreReport {
            f1_all: num(2, head[0])?,
            f1_ood: num(2, head[1])?,
            f1_ind: num(2, head[2])?,
            samples: count(2, head[3])?,
            classes,
        })
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }

    /// Human-readable table with scores in percent.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:>8} {:>8} {:>8}", "F1-All", "F1-OOD", "F1-IND").unwrap();
        writeln!(
            s,
            "{:>8.2} {:>8.2} {:>8.2}",
            100.0 * self.f1_all,
            100.0 * self.f1_ood,
            100.0 * self.f1_ind
        )
        .unwrap();
        writeln!(s).unwrap();
        let width = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        writeln!(s, "{:<width$} {:>9} {:>7} {:>7} {:>7} {:>9}", "class", "precision", "recall", "f1", "support", "predicted").unwrap();
        for c in &self.classes {
            write!(
                s,
                "{:<width$} {:>9.2} {:>7.2} {:>7.2} {:>7} {:>9}",
                c.name,
                100.0 * c.precision,
                100.0 * c.recall,
                100.0 * c.f1,
                c.support,
                c.predicted
            )
            .unwrap();
            if c.zero_support() {
                s.push_str("  (zero support)");
            }
            s.push('\n');
        }
        writeln!(s, "samples: {}", self.samples).unwrap();
        s
    }
}
