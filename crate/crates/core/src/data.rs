//! Labeled feature-vector datasets and CSV I/O.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Vec<f64>>,
    labels: Vec<usize>,
    dim: usize,
    classes: Vec<usize>,
    split: Split,
}

impl LabeledDataset {
    /// Class list is the sorted set of labels present.
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let dim = samples.first().map_or(0, Vec::len);
        for s in &samples {
            check_dim(dim, s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset sample"));
            }
        }
        let mut classes = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        Ok(Self { samples, labels, dim, classes, split: Split::Train })
    }

    /// Dataset with an explicit class list, which may include classes with
    /// no samples.
    pub fn with_classes(samples: Vec<Vec<f64>>, labels: Vec<usize>, classes: Vec<usize>) -> Result<Self> {
        let mut ds = Self::new(samples, labels)?;
        if let Some(l) = ds.labels.iter().find(|l| !classes.contains(l)) {
            return Err(Error::UnknownClass(*l));
        }
        let mut classes = classes;
        classes.sort_unstable();
        classes.dedup();
        ds.classes = classes;
        Ok(ds)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn class_samples(&self, label: usize) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == label)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut m: BTreeMap<usize, usize> = self.classes.iter().map(|&c| (c, 0)).collect();
        for l in &self.labels {
            *m.entry(*l).or_default() += 1;
        }
        m
    }

    pub fn map_samples(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let samples = self.samples.iter().map(|s| f(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self::with_classes(samples, self.labels.clone(), self.classes.clone())?.with_split(self.split))
    }

    /// Stratified split; `test_fraction` of each class goes to the test set.
    pub fn stratified_split(&self, test_fraction: f64, rng: &mut RngStream) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidParameter(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let (mut tr, mut te) = ((vec![], vec![]), (vec![], vec![]));
        for &c in &self.classes {
            let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            let order = rng.choose_indices(idx.len(), idx.len());
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            for (k, &o) in order.iter().enumerate() {
                let i = idx[o];
                let dst = if k < n_test { &mut te } else { &mut tr };
                dst.0.push(self.samples[i].clone());
                dst.1.push(c);
            }
        }
        Ok((
            Self::with_classes(tr.0, tr.1, self.classes.clone())?.with_split(Split::Train),
            Self::with_classes(te.0, te.1, self.classes.clone())?.with_split(Split::Test),
        ))
    }

    /// Reads feature columns plus one integer label column. A first line
    /// that does not parse as numbers is treated as a header; lines starting
    /// with `#` are skipped. `label_column = None` means the last column.
    pub fn read_csv(path: &Path, label_column: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse_csv(std::io::BufReader::new(file), label_column)
    }

    pub fn parse_csv(reader: impl BufRead, label_column: Option<usize>) -> Result<Self> {
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if samples.is_empty() && labels.is_empty() && lineno == 0 => continue,
                Err(e) => return Err(Error::Format(format!("line {}: {e}", lineno + 1))),
            };
            if values.len() < 2 {
                return Err(Error::Format(format!("line {}: need features and a label", lineno + 1)));
            }
            let lc = label_column.unwrap_or(values.len() - 1);
            if lc >= values.len() {
                return Err(Error::Format(format!("line {}: no label column {lc}", lineno + 1)));
            }
            let lv = values[lc];
            if lv < 0.0 || lv.fract() != 0.0 {
                return Err(Error::Format(format!("line {}: label {lv} is not a non-negative integer", lineno + 1)));
            }
            labels.push(lv as usize);
            samples.push(values.iter().enumerate().filter(|(i, _)| *i != lc).map(|(_, v)| *v).collect());
        }
        Self::new(samples, labels)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).chain(["label".to_string()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for (s, l) in self.samples.iter().zip(&self.labels) {
            let row: Vec<String> = s.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{},{l}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_header() {
        let ds = LabeledDataset::new(vec![vec![0.5, -1.25], vec![3.0, 1e-3]], vec![1, 0]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = LabeledDataset::parse_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_label_column_and_errors() {
        let text = "# comment\n2,0.5,0.25\n0,1.5,2.5\n";
        let ds = LabeledDataset::parse_csv(text.as_bytes(), Some(0)).unwrap();
        assert_eq!(ds.labels(), &[2, 0]);
        assert_eq!(ds.samples()[0], vec![0.5, 0.25]);
        assert!(LabeledDataset::parse_csv("1,2\n1,x\n".as_bytes(), None).is_err());
        assert!(LabeledDataset::parse_csv("1,2.5\n".as_bytes(), None).is_err());
        assert!(LabeledDataset::parse_csv("1,2\n1,2,0\n".as_bytes(), None).is_err());
    }

    #[test]
    fn invariants_enforced() {
        assert!(LabeledDataset::new(vec![vec![1.0]], vec![]).is_err());
        assert!(LabeledDataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 0]).is_err());
        assert!(LabeledDataset::with_classes(vec![vec![1.0]], vec![3], vec![0, 1]).is_err());
    }

    #[test]
    fn stratified_split_keeps_classes() {
        let samples: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let ds = LabeledDataset::new(samples, labels).unwrap();
        let mut rng = RngStream::new(0, 0);
        let (tr, te) = ds.stratified_split(0.2, &mut rng).unwrap();
        assert_eq!(tr.len() + te.len(), 100);
        assert!(te.class_counts().values().all(|&n| n == 5));
        assert_eq!(te.split(), Split::Test);
    }
}
