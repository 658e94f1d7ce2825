use std::collections::BTreeMap;
use std::io::{self, Write};

/// Per-token softmax weights of the adaptive view for one sample. Only the
/// real (unmasked) positions are kept, in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRecord {
    pub sample_id: String,
    pub label: Option<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    pub max_len: usize,
    pub records: Vec<AlphaRecord>,
}

impl AlphaTable {
    /// Mean weight at each token index over the samples of each label;
    /// positions beyond a sample's length count as zero.
    pub fn per_intent_mean(&self) -> BTreeMap<usize, Vec<f64>> {
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for r in &self.records {
            let Some(label) = r.label else { continue };
            let entry = sums
                .entry(label)
                .or_insert_with(|| (vec![0.0; self.max_len], 0));
            for (s, &w) in entry.0.iter_mut().zip(&r.weights) {
                *s += w;
            }
            entry.1 += 1;
        }
        sums.into_iter()
            .map(|(l, (s, c))| (l, s.into_iter().map(|v| v / c as f64).collect()))
            .collect()
    }

    /// Index-wise difference of two intents' averaged curves.
    pub fn difference(&self, a: usize, b: usize) -> Option<Vec<f64>> {
        let means = self.per_intent_mean();
        let (x, y) = (means.get(&a)?, means.get(&b)?);
        Some(x.iter().zip(y).map(|(p, q)| p - q).collect())
    }

    pub fn write_samples_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "sample_id\tlabel\tindex\tweight")?;
        for r in &self.records {
            let label = r.label.map_or_else(|| "-".to_string(), |l| l.to_string());
            for (i, weight) in r.weights.iter().enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}", r.sample_id, label, i, weight)?;
            }
        }
        Ok(())
    }

    pub fn write_intents_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "label\tindex\tmean_weight")?;
        for (label, curve) in self.per_intent_mean() {
            for (i, v) in curve.iter().enumerate() {
                writeln!(w, "{label}\t{i}\t{v}")?;
            }
        }
        Ok(())
    }
}

/// Per-dimension averaged gate values and the weight difference `2β − 1`
/// between the pooled and the adaptive view.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaTable {
    pub mean_beta: Vec<f64>,
    pub samples: usize,
}

impl BetaTable {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut count = 0;
        for row in rows {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
            }
            for (s, &b) in sum.iter_mut().zip(row) {
                *s += b;
            }
            count += 1;
        }
        (count > 0).then(|| BetaTable {
            mean_beta: sum.into_iter().map(|s| s / count as f64).collect(),
            samples: count,
        })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.mean_beta.iter().map(|b| 2.0 * b - 1.0).collect()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "dim\tmean_beta\tdifference")?;
        for (i, (b, d)) in self.mean_beta.iter().zip(self.differences()).enumerate() {
            writeln!(w, "{i}\t{b}\t{d}")?;
        }
        Ok(())
    }
}
