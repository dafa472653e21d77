use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Smallest probability fed to the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean categorical cross-entropy over a batch and its gradient with respect to
/// the softmax logits, `(probs - onehot) / N`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, onehot: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if probs.shape() != onehot.shape() || probs.shape().len() != 2 {
        return Err(Error::shape(format!(
            "probabilities {:?} and targets {:?} must both be [N, K]",
            probs.shape(),
            onehot.shape()
        )));
    }
    let n = probs.shape()[0];
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    for (&p, &y) in probs.data().iter().zip(onehot.data()) {
        let y = y.as_f64();
        if y != 0.0 {
            loss -= y * p.as_f64().max(PROB_FLOOR).ln();
        }
    }
    let scale = T::from_f64_lossy(inv_n);
    let grad = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| (p - y) * scale)
        .collect();
    Ok((loss * inv_n, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// One-hot rows for class indices.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Range { index: l, classes });
        }
        data[i * classes + l] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let y = one_hot::<f64>(&[2, 0], 3).unwrap();
        let (loss, _) = cross_entropy(&y, &y).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln_k() {
        let p = Tensor::<f64>::full(vec![3, 7], 1.0 / 7.0).unwrap();
        let y = one_hot(&[0, 3, 6], 7).unwrap();
        let (loss, _) = cross_entropy(&p, &y).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_probability_is_floored() {
        let p = Tensor::<f64>::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let y = one_hot(&[0], 2).unwrap();
        let (loss, _) = cross_entropy(&p, &y).unwrap();
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let p = Tensor::<f64>::zeros(vec![2, 7]).unwrap();
        let y = Tensor::<f64>::zeros(vec![2, 6]).unwrap();
        assert!(matches!(cross_entropy(&p, &y), Err(Error::Shape(_))));
        assert!(matches!(one_hot::<f64>(&[7], 7), Err(Error::Range { .. })));
    }
}
