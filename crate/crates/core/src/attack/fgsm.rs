//! Fast gradient sign method: one signed step along the input-loss gradient.

use super::{check_unit_range, mean_ce_loss, target_predict, AttackResult, TargetModel};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// `adversarial = clamp(image + epsilon * sign(grad loss), 0, 1)`.
///
/// Exactly one gradient evaluation. The perturbation's L-inf norm never
/// exceeds `epsilon`; a component falls short of it only where the [0,1] box
/// clips the step or the gradient is exactly zero.
pub fn fgsm(
    target: &dyn TargetModel,
    image: &Tensor,
    true_class: usize,
    epsilon: f64,
) -> Result<AttackResult> {
    check_unit_range(image)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Contract(format!("epsilon {epsilon} outside [0,1)")));
    }

    let mut tape = Tape::new();
    let x = tape.leaf(&image.clone().with_grad());
    let loss = mean_ce_loss(&mut tape, target, x, true_class)?;
    let grad = tape.backward(loss)?.get(x);
    if grad.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite loss gradient".into()));
    }

    let stepped = image.zip(&grad, |v, g| {
        let sign = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        v + epsilon * sign
    })?;
    let result = AttackResult::reconcile(image, &stepped, false, 1)?;
    let success = target_predict(target, &result.adversarial)? != true_class;
    Ok(AttackResult { success, ..result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::test_targets::LinearTarget;
    use crate::tensor::softmax;

    fn one_pixel(v: f64) -> Tensor {
        Tensor::new(vec![1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn zero_epsilon_returns_the_clean_image() {
        let target = LinearTarget::new(&[&[2.0], &[-1.0]], &[0.0, 0.0]);
        let img = one_pixel(0.5);
        let res = fgsm(&target, &img, 0, 0.0).unwrap();
        assert_eq!(res.adversarial.data(), img.data());
        assert_eq!(res.perturbation_linf, 0.0);
    }

    #[test]
    fn one_pixel_step_follows_the_loss_gradient() {
        // Binary model where raising the pixel raises the wrong class logit,
        // so the loss gradient at the pixel is positive.
        let target = LinearTarget::new(&[&[0.0], &[3.0]], &[1.0, 0.0]);
        let img = one_pixel(0.5);
        let res = fgsm(&target, &img, 0, 0.1).unwrap();
        assert!((res.adversarial.data()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_sign_pattern_search_on_linear_model() {
        // Loss of a softmax-linear model over the 3^2 sign patterns; the FGSM
        // step must select the pattern with the largest loss.
        let w0 = [1.5, -0.5];
        let w1 = [-1.0, 2.0];
        let target = LinearTarget::new(&[&w0, &w1], &[0.1, -0.2]);
        let img = Tensor::new(vec![1, 2, 1], vec![0.4, 0.6]).unwrap();
        let eps = 0.05;
        let true_class = 0;

        let loss_at = |p: &[f64]| {
            let z0 = w0[0] * p[0] + w0[1] * p[1] + 0.1;
            let z1 = w1[0] * p[0] + w1[1] * p[1] - 0.2;
            -softmax(&[z0, z1])[true_class].ln()
        };

        let mut best = vec![0.0; 2];
        let mut best_loss = f64::NEG_INFINITY;
        for s0 in [-1.0, 0.0, 1.0] {
            for s1 in [-1.0, 0.0, 1.0] {
                let p = vec![0.4 + eps * s0, 0.6 + eps * s1];
                let l = loss_at(&p);
                if l > best_loss {
                    best_loss = l;
                    best = p;
                }
            }
        }

        let res = fgsm(&target, &img, true_class, eps).unwrap();
        for (a, b) in res.adversarial.data().iter().zip(&best) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn linf_bound_is_exact_and_components_lie_in_the_step_set() {
        let target = LinearTarget::new(&[&[1.0, -2.0, 0.5], &[-1.0, 1.0, 2.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 3, 1], vec![0.02, 0.5, 0.99]).unwrap();
        let eps = 0.05;
        let res = fgsm(&target, &img, 0, eps).unwrap();
        assert!(res.perturbation_linf <= eps + 1e-15);
        for (&p, &v) in res.perturbation.data().iter().zip(img.data()) {
            let clipped = v + p == 0.0 || v + p == 1.0;
            assert!(
                p.abs() <= eps + 1e-15,
                "component {p} exceeds epsilon"
            );
            if p.abs() < eps - 1e-15 && p != 0.0 {
                assert!(clipped, "short component {p} without clipping at value {v}");
            }
        }
    }
}
