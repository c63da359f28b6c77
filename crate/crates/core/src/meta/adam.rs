//! Adam with bias correction, applied tensor-slot by tensor-slot over the
//! trainable set.

use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update in place: `m`/`v` are this slot's moment accumulators,
/// `step` the 1-based global step for bias correction.
pub fn adam_update<T: Scalar>(
    value: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    step: u64,
    lr: f64,
    p: &AdamParams,
) {
    let b1 = T::from_f64(p.beta1);
    let b2 = T::from_f64(p.beta2);
    let one = T::one();
    let eps = T::from_f64(p.epsilon);
    let corr1 = T::from_f64(1.0 - p.beta1.powi(step as i32));
    let corr2 = T::from_f64(1.0 - p.beta2.powi(step as i32));
    let lr = T::from_f64(lr);

    let md = m.data_mut();
    let vd = v.data_mut();
    let wd = value.data_mut();
    let gd = grad.data();
    for i in 0..wd.len() {
        let g = gd[i];
        md[i] = b1 * md[i] + (one - b1) * g;
        vd[i] = b2 * vd[i] + (one - b2) * g * g;
        let m_hat = md[i] / corr1;
        let v_hat = vd[i] / corr2;
        wd[i] = wd[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // With bias correction the first step is lr * g/|g| (modulo eps).
        let mut w = Tensor::<f64>::scalar(1.0);
        let mut m = Tensor::<f64>::zeros(&[]);
        let mut v = Tensor::<f64>::zeros(&[]);
        let g = Tensor::<f64>::scalar(0.3);
        adam_update(&mut w, &g, &mut m, &mut v, 1, 0.01, &AdamParams::default());
        assert!((w.item() - (1.0 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_leaves_values_bitwise() {
        let mut w = Tensor::<f64>::from_fn(&[3], |i| 0.1 * i as f64 - 0.05);
        let before = w.clone();
        let mut m = Tensor::<f64>::zeros(&[3]);
        let mut v = Tensor::<f64>::zeros(&[3]);
        let g = Tensor::<f64>::from_fn(&[3], |i| (i as f64 - 1.0) * 2.0);
        adam_update(&mut w, &g, &mut m, &mut v, 1, 0.0, &AdamParams::default());
        assert!(w
            .data()
            .iter()
            .zip(before.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
