use super::{Tensor, TensorError};

/// Mean squared error and its gradient with respect to `pred`.
///
/// `loss = mean((pred - target)^2)`, `grad = 2 (pred - target) / count`.
pub fn l2_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), TensorError> {
    if pred.shape() != target.shape() {
        let axis = pred
            .shape()
            .iter()
            .zip(target.shape())
            .position(|(a, b)| a != b)
            .unwrap_or(pred.shape().len().min(target.shape().len()));
        return Err(TensorError::ShapeMismatch {
            layer: super::LayerKind::ResidualAdd,
            axis,
            expected: target.shape().get(axis).copied().unwrap_or(0),
            actual: pred.shape().get(axis).copied().unwrap_or(0),
        });
    }
    let count = pred.len().max(1) as f64;
    let scale = (2.0 / count) as f32;
    let mut sum = 0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += f64::from(d) * f64::from(d);
            scale * d
        })
        .collect();
    Ok((sum / count, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_target() {
        let a = Tensor::from_slice(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (loss, grad) = l2_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_offset_of_two() {
        let t = Tensor::from_slice(&[4], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = Tensor::from_slice(&[4], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        let (loss, grad) = l2_loss(&p, &t).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn symmetric() {
        let a = Tensor::from_slice(&[3], &[0.5, -1.0, 7.0]).unwrap();
        let b = Tensor::from_slice(&[3], &[1.5, 2.0, -3.0]).unwrap();
        assert_eq!(l2_loss(&a, &b).unwrap().0, l2_loss(&b, &a).unwrap().0);
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert!(matches!(
            l2_loss(&a, &b),
            Err(TensorError::ShapeMismatch { axis: 1, .. })
        ));
    }
}
