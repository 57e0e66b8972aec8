//! Losses on logits. Each returns the loss and its gradient w.r.t. the
//! (student / current) logits.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check_finite<F: Scalar>(z: &[F], what: &'static str) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_tau<F: Scalar>(tau: F) -> Result<()> {
    if tau > F::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be > 0, got {:?}", tau)))
    }
}

/// `log softmax(z / tau)`, stabilized by max subtraction.
pub fn log_softmax<F: Scalar>(z: &[F], tau: F) -> Result<Vec<F>> {
    check_tau(tau)?;
    check_finite(z, "softmax input")?;
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let shifted: Vec<F> = z.iter().map(|&v| (v - max) / tau).collect();
    let lse = shifted.iter().map(|v| v.exp()).sum::<F>().ln();
    Ok(shifted.into_iter().map(|v| v - lse).collect())
}

pub fn softmax<F: Scalar>(z: &[F], tau: F) -> Result<Vec<F>> {
    Ok(log_softmax(z, tau)?.into_iter().map(F::exp).collect())
}

/// Mean cross-entropy over a `B x K` batch and its gradient
/// `(softmax(z) - onehot(y)) / B`.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<(F, Tensor<F>)> {
    let (b, k) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::shape("cross_entropy labels", b, labels.len()));
    }
    let inv_b = F::one() / F::of(b.max(1) as f64);
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(b * k);
    for (row, &y) in logits.iter_rows().zip(labels) {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let ls = log_softmax(row, F::one())?;
        loss -= ls[y];
        for (c, &l) in ls.iter().enumerate() {
            let onehot = if c == y { F::one() } else { F::zero() };
            grad.push((l.exp() - onehot) * inv_b);
        }
    }
    Ok((loss * inv_b, Tensor::matrix(b, k, grad)?))
}

/// `KL(softmax(teacher/tau) || softmax(student/tau))` and its gradient
/// w.r.t. the student logits, `(q - p) / tau`.
pub fn kl_distill<F: Scalar>(teacher: &[F], student: &[F], tau: F) -> Result<(F, Vec<F>)> {
    if teacher.len() != student.len() {
        return Err(Error::shape("kl_distill", teacher.len(), student.len()));
    }
    let lp = log_softmax(teacher, tau)?;
    let lq = log_softmax(student, tau)?;
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(lp.len());
    for (&a, &b) in lp.iter().zip(&lq) {
        let p = a.exp();
        loss += p * (a - b);
        grad.push((b.exp() - p) / tau);
    }
    // Rounding can leave a tiny negative value when p == q.
    Ok((loss.max(F::zero()), grad))
}

/// Squared Euclidean distance `||z - z_ref||^2` and gradient `2 (z - z_ref)`.
pub fn logit_match<F: Scalar>(z: &[F], z_ref: &[F]) -> Result<(F, Vec<F>)> {
    if z.len() != z_ref.len() {
        return Err(Error::shape("logit_match", z_ref.len(), z.len()));
    }
    let two = F::of(2.0);
    let mut loss = F::zero();
    let grad = z
        .iter()
        .zip(z_ref)
        .map(|(&a, &b)| {
            let d = a - b;
            loss += d * d;
            two * d
        })
        .collect();
    Ok((loss, grad))
}

pub fn logistic<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

/// `sum_k CE(g(z_ref_k), g(z_k))` with the logistic `g`, gradient
/// `g(z_k) - g(z_ref_k)`.
pub fn sigmoid_ce<F: Scalar>(z: &[F], z_ref: &[F]) -> Result<(F, Vec<F>)> {
    if z.len() != z_ref.len() {
        return Err(Error::shape("sigmoid_ce", z_ref.len(), z.len()));
    }
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(z.len());
    for (&zk, &rk) in z.iter().zip(z_ref) {
        let p = logistic(rk);
        // -p ln g(z) - (1-p) ln(1 - g(z)) = p softplus(-z) + (1-p) softplus(z)
        loss += p * softplus(-zk) + (F::one() - p) * softplus(zk);
        grad.push(logistic(zk) - p);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&[0.0f64, 3.0f64.ln()], 1.0).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
        let u = softmax(&[2.5f64; 4], 3.0).unwrap();
        assert!(u.iter().all(|v| (v - 0.25).abs() < 1e-12));
        assert!(softmax(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(softmax(&[0.0f64], 0.0).is_err());
    }

    #[test]
    fn cross_entropy_limits() {
        let z = Tensor::matrix(1, 3, vec![10.0f64, 0.0, 0.0]).unwrap();
        assert!(cross_entropy(&z, &[0]).unwrap().0 < 1e-4);
        let u = Tensor::matrix(2, 10, vec![0.3f64; 20]).unwrap();
        assert!((cross_entropy(&u, &[3, 9]).unwrap().0 - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy(&u, &[3, 10]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn logit_match_examples() {
        let (l, g) = logit_match(&[1.0f64, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(l, 5.0);
        assert_eq!(g, vec![2.0, 4.0]);
        assert_eq!(logit_match(&[0.0f64, 0.0], &[1.0, 1.0]).unwrap().0, 2.0);
        assert_eq!(logit_match(&[0.5f64], &[0.5]).unwrap(), (0.0, vec![0.0]));
        assert!(logit_match(&[0.0f64], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn kl_zero_cases() {
        let z = [0.3f64, -1.2, 2.0];
        assert!(kl_distill(&z, &z, 2.0).unwrap().0.abs() < 1e-15);
        let shifted: Vec<f64> = z.iter().map(|v| v + 7.5).collect();
        assert!(kl_distill(&z, &shifted, 2.0).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn sigmoid_ce_examples() {
        let (l, g) = sigmoid_ce(&[0.0f64], &[0.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.0]);
        let (_, g) = sigmoid_ce(&[5.0f64], &[10.0]).unwrap();
        assert!((g[0] - (logistic(5.0) - logistic(10.0))).abs() < 1e-15);
        assert!(g[0].abs() < 0.007);
    }
}
