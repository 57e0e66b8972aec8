//! Per-task input transforms. Each is a pure function of the dataset and its
//! [`TransformSpec`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::color::{color_space_task, ColorSpace};
use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{gemm, leaky_relu, leaky_relu_inverse, orthogonal, Tensor};
use crate::rng::Rng;

fn default_alpha() -> f64 {
    0.2
}

fn default_layers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Identity,
    Permutation {
        seed: u64,
    },
    NonlinearMlp {
        seed: u64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_layers")]
        layers: usize,
    },
    ColorSpace {
        space: ColorSpace,
    },
}

impl TransformSpec {
    pub fn label(&self) -> String {
        match self {
            TransformSpec::Identity => "identity".into(),
            TransformSpec::Permutation { seed } => format!("permutation(seed={seed})"),
            TransformSpec::NonlinearMlp { seed, alpha, layers } => {
                format!("nonlinear_mlp(seed={seed},alpha={alpha},layers={layers})")
            }
            TransformSpec::ColorSpace { space } => format!("color_space({})", space.name()),
        }
    }

    /// Transforms a `(train, val, test)` triple. Statistics that are fitted
    /// to data (nonlinear renormalization) come from `train` only.
    pub fn apply(
        &self,
        train: &LabeledDataset,
        val: &LabeledDataset,
        test: &LabeledDataset,
    ) -> Result<[LabeledDataset; 3]> {
        match self {
            TransformSpec::Identity => Ok([train.clone(), val.clone(), test.clone()]),
            TransformSpec::Permutation { seed } => {
                let perm = permutation(train.dim(), *seed);
                Ok([train, val, test].map(|d| apply_permutation(d, &perm, self)))
            }
            TransformSpec::NonlinearMlp { seed, alpha, layers } => {
                let t = NonlinearTransform::new(train.dim(), *layers, *alpha, *seed)?;
                let fitted = t.fit_range(train);
                Ok([train, val, test].map(|d| fitted.apply(d, self)))
            }
            TransformSpec::ColorSpace { space } => {
                let out = [train, val, test].map(|d| color_space_task(d, *space));
                let [a, b, c] = out;
                Ok([a?, b?, c?])
            }
        }
    }
}

/// Uniform random permutation of `0..d` determined by `seed`.
pub fn permutation(d: usize, seed: u64) -> Vec<usize> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..d).collect();
    p.shuffle(&mut rng);
    p
}

pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// `out[:, k] = in[:, perm[k]]` for every example.
pub fn apply_permutation(ds: &LabeledDataset, perm: &[usize], spec: &TransformSpec) -> LabeledDataset {
    let d = ds.dim();
    assert_eq!(perm.len(), d);
    let mut data = Vec::with_capacity(ds.inputs.len());
    for row in ds.inputs.iter_rows() {
        data.extend(perm.iter().map(|&k| row[k]));
    }
    LabeledDataset {
        inputs: Tensor::matrix(ds.len(), d, data).expect("shape"),
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        provenance: format!("{}|{}", ds.provenance, spec.label()),
    }
}

pub fn permute_task(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let spec = TransformSpec::Permutation { seed };
    apply_permutation(ds, &permutation(ds.dim(), seed), &spec)
}

/// Fixed random invertible map: `layers` square layers with orthogonal
/// weights and leaky-ReLU activations, no biases.
#[derive(Debug, Clone)]
pub struct NonlinearTransform {
    pub dim: usize,
    pub alpha: f64,
    /// Row-major `dim x dim` weights; layer `l` computes `act(W_l x)`.
    pub weights: Vec<Vec<f64>>,
}

impl NonlinearTransform {
    pub fn new(dim: usize, layers: usize, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("nonlinear transform needs alpha > 0"));
        }
        if dim == 0 || layers == 0 {
            return Err(Error::invalid("nonlinear transform needs dim, layers >= 1"));
        }
        let mut rng = Rng::seed_from_u64(seed);
        let weights = (0..layers).map(|_| orthogonal(dim, dim, &mut rng)).collect();
        Ok(Self { dim, alpha, weights })
    }

    pub fn from_weights(dim: usize, alpha: f64, weights: Vec<Vec<f64>>) -> Self {
        Self { dim, alpha, weights }
    }

    /// The invertible map before renormalization, `N x dim` row-major.
    pub fn forward_raw(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = vec![0.0; cur.len()];
        for w in &self.weights {
            // next = cur W^T
            gemm(n, self.dim, self.dim, 1.0, &cur, false, w, true, 0.0, &mut next);
            next.iter_mut().for_each(|v| *v = leaky_relu(*v, self.alpha));
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Exact inverse of [`forward_raw`](Self::forward_raw) using `W^-1 = W^T`.
    pub fn inverse_raw(&self, y: &[f64], n: usize) -> Vec<f64> {
        let mut cur = y.to_vec();
        let mut next = vec![0.0; cur.len()];
        for w in self.weights.iter().rev() {
            cur.iter_mut().for_each(|v| *v = leaky_relu_inverse(*v, self.alpha));
            // next = cur W  (rows times W, i.e. W^T applied per row)
            gemm(n, self.dim, self.dim, 1.0, &cur, false, w, false, 0.0, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Fits the global min/max of the raw outputs on `reference`.
    pub fn fit_range(&self, reference: &LabeledDataset) -> FittedNonlinear<'_> {
        let raw = self.forward_raw(&to_f64(&reference.inputs), reference.len());
        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        FittedNonlinear { map: self, lo, hi }
    }
}

fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// Nonlinear transform plus the renormalization range fitted on a training
/// split.
#[derive(Debug, Clone, Copy)]
pub struct FittedNonlinear<'a> {
    pub map: &'a NonlinearTransform,
    pub lo: f64,
    pub hi: f64,
}

impl FittedNonlinear<'_> {
    /// Applies the map, then `(v - lo) / (hi - lo)` clamped to `[0, 1]`.
    pub fn apply(&self, ds: &LabeledDataset, spec: &TransformSpec) -> LabeledDataset {
        let raw = self.map.forward_raw(&to_f64(&ds.inputs), ds.len());
        let span = self.hi - self.lo;
        let data = raw
            .into_iter()
            .map(|v| {
                let s = if span > 0.0 { (v - self.lo) / span } else { 0.0 };
                s.clamp(0.0, 1.0) as f32
            })
            .collect();
        LabeledDataset {
            inputs: Tensor::matrix(ds.len(), ds.dim(), data).expect("shape"),
            labels: ds.labels.clone(),
            class_count: ds.class_count,
            provenance: format!("{}|{}", ds.provenance, spec.label()),
        }
    }
}

/// Nonlinear task over a single dataset, renormalized over that dataset.
pub fn nonlinear_transform_task(ds: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let spec = TransformSpec::NonlinearMlp {
        seed,
        alpha: default_alpha(),
        layers: default_layers(),
    };
    let t = NonlinearTransform::new(ds.dim(), default_layers(), default_alpha(), seed)?;
    Ok(t.fit_range(ds).apply(ds, &spec))
}
