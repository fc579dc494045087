use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clipped to `[CLIP_EPSILON, 1 - CLIP_EPSILON]` before
/// taking logarithms.
pub const CLIP_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Rows along the last axis are class distributions; averaged over rows.
    CategoricalCrossentropy,
    /// Averaged over every element.
    BinaryCrossentropy,
    /// Averaged over every element.
    MeanSquaredError,
}

#[derive(Clone, Debug)]
pub struct LossValue<S> {
    pub value: S,
    /// Gradient of `value` with respect to the prediction.
    pub grad: Tensor<S>,
}

pub fn loss<S: Scalar>(
    kind: LossKind,
    pred: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<LossValue<S>> {
    if pred.shape() != target.shape() {
        return Err(TensorError::shape(
            "loss target",
            pred.shape(),
            target.shape(),
        ));
    }
    if !pred.is_finite() {
        return Err(TensorError::NonFinite("loss prediction".into()));
    }
    if !target.is_finite() {
        return Err(TensorError::NonFinite("loss target".into()));
    }
    let eps = S::lit(CLIP_EPSILON);
    let hi = S::one() - eps;
    let p = pred.data();
    let t = target.data();
    let mut grad = vec![S::zero(); p.len()];
    let mut total = S::zero();
    let denom = match kind {
        LossKind::CategoricalCrossentropy => {
            let classes = *pred.shape().last().unwrap();
            S::from_usize(p.len() / classes).unwrap()
        }
        _ => S::from_usize(p.len()).unwrap(),
    };
    match kind {
        LossKind::CategoricalCrossentropy => {
            for i in 0..p.len() {
                let (pc, inside) = clip(p[i], eps, hi);
                total -= t[i] * pc.ln();
                if inside {
                    grad[i] = -t[i] / pc / denom;
                }
            }
        }
        LossKind::BinaryCrossentropy => {
            for i in 0..p.len() {
                let (pc, inside) = clip(p[i], eps, hi);
                total -= t[i] * pc.ln() + (S::one() - t[i]) * (S::one() - pc).ln();
                if inside {
                    grad[i] = (pc - t[i]) / (pc * (S::one() - pc)) / denom;
                }
            }
        }
        LossKind::MeanSquaredError => {
            for i in 0..p.len() {
                let d = p[i] - t[i];
                total += d * d;
                grad[i] = S::lit(2.0) * d / denom;
            }
        }
    }
    Ok(LossValue {
        value: total / denom,
        grad: Tensor::new(pred.shape().to_vec(), grad)?,
    })
}

fn clip<S: Scalar>(v: S, lo: S, hi: S) -> (S, bool) {
    if v < lo {
        (lo, false)
    } else if v > hi {
        (hi, false)
    } else {
        (v, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let a = t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]);
        let l = loss(LossKind::MeanSquaredError, &a, &a).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn binary_crossentropy_at_half() {
        let l = loss(
            LossKind::BinaryCrossentropy,
            &t(&[1, 1], &[0.5]),
            &t(&[1, 1], &[1.0]),
        )
        .unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn categorical_crossentropy_averages_rows() {
        let p = t(&[2, 2], &[0.5, 0.5, 0.25, 0.75]);
        let y = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let l = loss(LossKind::CategoricalCrossentropy, &p, &y).unwrap();
        let want = -(0.5f64.ln() + 0.75f64.ln()) / 2.0;
        assert!((l.value - want).abs() < 1e-12);
    }

    #[test]
    fn nan_rejected() {
        let p = t(&[1, 2], &[f64::NAN, 0.5]);
        let y = t(&[1, 2], &[1.0, 0.0]);
        assert!(matches!(
            loss(LossKind::MeanSquaredError, &p, &y),
            Err(TensorError::NonFinite(_))
        ));
    }

    #[test]
    fn clipping_keeps_loss_finite() {
        let l = loss(
            LossKind::BinaryCrossentropy,
            &t(&[1, 2], &[0.0, 1.0]),
            &t(&[1, 2], &[1.0, 0.0]),
        )
        .unwrap();
        assert!(l.value.is_finite());
        assert!((l.value + CLIP_EPSILON.ln()).abs() < 1e-6);
    }
}
