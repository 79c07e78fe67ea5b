use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Loss value plus its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct MseLoss<T> {
    pub value: T,
    pub grad: Tensor4<T>,
}

/// Mean over every element of `(pred - target)^2`; gradient `2 (pred - target) / count`.
pub fn mse_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<MseLoss<T>> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "mse_loss",
            format!("pred {} vs target {}", pred.shape(), target.shape()),
        ));
    }
    let count = T::cast_from(pred.shape().len() as f64);
    let two_over_n = T::cast_from(2.0) / count;
    let mut sum = 0.0f64;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += (d * d).as_f64();
            d * two_over_n
        })
        .collect();
    Ok(MseLoss {
        value: T::cast_from(sum / pred.shape().len() as f64),
        grad: Tensor4::from_vec(pred.shape(), grad)?,
    })
}
