//! Weight initialization schemes.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`, zero biases.
    #[default]
    KaimingUniform,
    /// Orthogonal weights, zero biases.
    Orthogonal,
}

impl InitScheme {
    pub fn weight<F: Scalar>(&self, rows: usize, cols: usize, rng: &mut Rng) -> Tensor<F> {
        let data = match self {
            InitScheme::KaimingUniform => {
                let bound = (6.0 / cols.max(1) as f64).sqrt();
                (0..rows * cols)
                    .map(|_| F::of(rng.gen_range(-bound..bound)))
                    .collect()
            }
            InitScheme::Orthogonal => orthogonal(rows, cols, rng)
                .into_iter()
                .map(F::of)
                .collect(),
        };
        Tensor::matrix(rows, cols, data).expect("shape")
    }
}

/// Random `rows x cols` matrix (row-major) with orthonormal rows or columns,
/// whichever is the smaller dimension.
///
/// Householder QR of a standard-normal matrix, with the columns of `Q`
/// flipped so that `R` has a positive diagonal. That makes the draw uniform
/// over the orthogonal group (Haar measure).
pub fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    assert!(rows >= 1 && cols >= 1, "orthogonal: empty matrix");
    let (n, k) = (rows.max(cols), rows.min(cols));
    // Column-major n x k working matrix.
    let mut a: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(rng)).collect();
    let q = householder_q(&mut a, n, k);
    let mut out = vec![0.0; rows * cols];
    if rows >= cols {
        for j in 0..k {
            for i in 0..n {
                out[i * cols + j] = q[j * n + i];
            }
        }
    } else {
        // rows < cols: use Q^T, whose rows are orthonormal.
        for j in 0..k {
            out[j * cols..(j + 1) * cols].copy_from_slice(&q[j * n..(j + 1) * n]);
        }
    }
    out
}

/// Thin `Q` (column-major `n x k`) of the column-major `a`, sign-corrected.
/// `a` is overwritten with the reflectors.
fn householder_q(a: &mut [f64], n: usize, k: usize) -> Vec<f64> {
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut diag_sign = vec![1.0; k];
    for j in 0..k {
        let col = &a[j * n..(j + 1) * n];
        let norm = col[j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let alpha = if col[j] >= 0.0 { -norm } else { norm };
        let mut v = col[j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        // R[j][j] = alpha after reflection.
        diag_sign[j] = if alpha < 0.0 { -1.0 } else { 1.0 };
        if vnorm2 > 0.0 {
            let scale = (2.0 / vnorm2).sqrt();
            v.iter_mut().for_each(|x| *x *= scale);
            for c in j..k {
                let colc = &mut a[c * n + j..(c + 1) * n];
                let dot: f64 = v.iter().zip(colc.iter()).map(|(x, y)| x * y).sum();
                for (y, x) in colc.iter_mut().zip(&v) {
                    *y -= dot * x;
                }
            }
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        vs.push(v);
    }
    // Q = H_0 H_1 ... H_{k-1} applied to the first k columns of I.
    let mut q = vec![0.0; n * k];
    for j in 0..k {
        q[j * n + j] = 1.0;
    }
    for (j, v) in vs.iter().enumerate().rev() {
        for c in 0..k {
            let colc = &mut q[c * n + j..(c + 1) * n];
            let dot: f64 = v.iter().zip(colc.iter()).map(|(x, y)| x * y).sum();
            if dot != 0.0 {
                for (y, x) in colc.iter_mut().zip(v) {
                    *y -= dot * x;
                }
            }
        }
    }
    for (c, s) in diag_sign.iter().enumerate() {
        if *s < 0.0 {
            q[c * n..(c + 1) * n].iter_mut().for_each(|x| *x = -*x);
        }
    }
    q
}
