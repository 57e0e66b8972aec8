use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Classification data: `N x d` inputs in `[0, 1]` and one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Which source and transforms produced this data.
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        inputs: Tensor<f32>,
        labels: Vec<usize>,
        class_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::shape("dataset inputs rank", 2, inputs.shape().len()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::shape("dataset labels", inputs.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        self.inputs.row(i)
    }

    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            provenance: provenance.into(),
        }
    }

    /// Row indices of each class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }

    pub fn in_unit_range(&self) -> bool {
        self.inputs.data().iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// SHA-256 over shape, labels and the raw bits of every input value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.class_count as u64).to_le_bytes());
        for &y in &self.labels {
            h.update((y as u32).to_le_bytes());
        }
        for v in self.inputs.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Concatenates datasets with identical width and class count.
    pub fn concat(parts: &[&LabeledDataset], provenance: impl Into<String>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != first.dim() || p.class_count != first.class_count {
                return Err(Error::shape("concat", first.dim(), p.dim()));
            }
            data.extend_from_slice(p.inputs.data());
            labels.extend_from_slice(&p.labels);
        }
        let n = labels.len();
        Self::new(Tensor::matrix(n, first.dim(), data)?, labels, first.class_count, provenance)
    }
}

/// Flat CSV: one example per line, `label,x_1,...,x_d`, values already in
/// `[0, 1]`. Blank lines and lines starting with `#` are skipped.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::format(path, format!("line {}: bad label", lineno + 1)))?;
        let values = fields
            .map(|f| f.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(path, format!("line {}: value outside [0,1]", lineno + 1)));
        }
        labels.push(label);
        rows.push(values);
    }
    let inputs = Tensor::from_rows(&rows).map_err(|e| Error::format(path, e.to_string()))?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(inputs, labels, k, format!("csv:{}", path.display()))
}
