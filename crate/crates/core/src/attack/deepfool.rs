//! Multiclass L2 DeepFool: repeated linearization of the classifier, stepping
//! to the nearest approximate decision boundary.

use super::{check_unit_range, mean_logits, target_predict, AttackResult, TargetModel};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tape, Tensor, Value};

/// Per iteration, for every class `i != true`, linearize `f_i = Z_i - Z_true`
/// and step toward the class minimizing `|f_i| / ||grad f_i||`. Perturbations
/// accumulate across iterations; the classifier is linearized at (and the
/// stop check applied to) the box projection of the accumulated point, so the
/// walk never reasons about gradients outside the feasible pixel cube.
/// `(1 + overshoot)` is applied once at the end and the result is clamped to
/// [0,1].
///
/// Returns immediately with a zero perturbation when the target already
/// misclassifies the image. Reaching `max_iter` without crossing a boundary
/// is reported as `success = false`, not an error.
pub fn deepfool(
    target: &dyn TargetModel,
    image: &Tensor,
    true_class: usize,
    max_iter: usize,
    overshoot: f64,
) -> Result<AttackResult> {
    check_unit_range(image)?;
    if overshoot < 0.0 {
        return Err(Error::Contract(format!("overshoot {overshoot} negative")));
    }
    if max_iter == 0 {
        return Err(Error::Contract("max_iter must be positive".into()));
    }
    let classes = mean_logits(target, image)?.len();
    if true_class >= classes {
        return Err(Error::Index(format!(
            "class {true_class} out of range {classes}"
        )));
    }

    if argmax(&mean_logits(target, image)?) != true_class {
        return AttackResult::reconcile(image, image, true, 0);
    }

    let mut total = vec![0.0; image.numel()];
    let mut current = image.clone();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;

        let mut tape = Tape::new();
        let x = tape.leaf(&current.clone().with_grad());
        let logits = ensemble_mean_logits(&mut tape, target, x)?;

        let zdata = tape.data(logits).to_vec();
        let ztrue = tape.index(logits, true_class)?;

        // Nearest linearized boundary over the competing classes.
        let mut best: Option<(f64, Vec<f64>, f64)> = None; // (ratio, w, f)
        for i in 0..classes {
            if i == true_class {
                continue;
            }
            let zi = tape.index(logits, i)?;
            let diff = tape.sub(zi, ztrue)?;
            let grad = tape.backward(diff)?.get(x);
            let wnorm = grad.l2_norm();
            if wnorm < 1e-12 {
                continue;
            }
            let f = zdata[i] - zdata[true_class];
            let ratio = f.abs() / wnorm;
            if best.as_ref().map_or(true, |(r, _, _)| ratio < *r) {
                best = Some((ratio, grad.data().to_vec(), f));
            }
        }

        let Some((_, w, f)) = best else {
            break; // every competing gradient vanished; no progress possible
        };
        let wnorm_sq: f64 = w.iter().map(|v| v * v).sum();
        let scale = f.abs() / wnorm_sq;
        if !scale.is_finite() {
            return Err(Error::Numeric("non-finite linearization step".into()));
        }
        for (t, &wi) in total.iter_mut().zip(&w) {
            *t += scale * wi;
        }
        current = image.zip(
            &Tensor::from_raw(image.shape().to_vec(), total.clone()),
            |a, b| (a + b).clamp(0.0, 1.0),
        )?;
        if argmax(&mean_logits(target, &current)?) != true_class {
            break;
        }
    }

    let overshot = image.zip(
        &Tensor::from_raw(image.shape().to_vec(), total),
        move |a, b| a + (1.0 + overshoot) * b,
    )?;
    let result = AttackResult::reconcile(image, &overshot, false, iterations)?;
    let success = target_predict(target, &result.adversarial)? != true_class;
    Ok(AttackResult { success, ..result })
}

/// Mean of per-branch logits as a tape value (the target's differentiable
/// aggregate used for linearization).
fn ensemble_mean_logits(
    tape: &mut Tape,
    target: &dyn TargetModel,
    image: Value,
) -> Result<Value> {
    let branches = target.forward_branches(tape, image)?;
    if branches.is_empty() {
        return Err(Error::Contract("target exposes no branches".into()));
    }
    let n = branches.len();
    let mut acc = branches[0];
    for &b in &branches[1..] {
        acc = tape.add(acc, b)?;
    }
    Ok(tape.mul_scalar(acc, 1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::test_targets::LinearTarget;

    #[test]
    fn binary_linear_model_reaches_the_closed_form_distance_in_one_step() {
        // Boundary 3x + 4y = 3 passes through the box interior. Margin at
        // (0.55, 0.45) is 0.45, so the minimal L2 distance is 0.45/5 = 0.09.
        let target = LinearTarget::new(&[&[3.0, 4.0], &[0.0, 0.0]], &[-3.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![0.55, 0.45]).unwrap();
        let res = deepfool(&target, &img, 0, 1, 0.0).unwrap();
        assert_eq!(res.iterations_used, 1);
        assert!(
            (res.perturbation_l2 - 0.09).abs() < 1e-9,
            "perturbation norm {}",
            res.perturbation_l2
        );
        // Direction is -w / ||w||.
        let p = res.perturbation.data();
        assert!((p[0] / p[1] - 0.75).abs() < 1e-9);
        assert!(p[0] < 0.0 && p[1] < 0.0);
    }

    #[test]
    fn clamp_projects_steps_that_leave_the_box() {
        // With a boundary far outside the box, the linearization step lands
        // at (0.16, -0.12) and the final clamp pins it to (0.16, 0).
        let target = LinearTarget::new(&[&[3.0, 4.0], &[0.0, 0.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![1.0, 1.0]).unwrap();
        let res = deepfool(&target, &img, 0, 1, 0.0).unwrap();
        let a = res.adversarial.data();
        assert!((a[0] - 0.16).abs() < 1e-9);
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn multiclass_linear_model_matches_closed_form_over_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        let mut checked = 0;
        for trial in 0..60 {
            let dim = 3;
            let classes = 4;
            let rows: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let b: Vec<f64> = (0..classes).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let target = LinearTarget::new(&refs, &b);
            let pixels: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.3..0.7)).collect();
            let img = Tensor::new(vec![1, dim, 1], pixels.clone()).unwrap();

            let logits = mean_logits(&target, &img).unwrap();
            let true_class = argmax(&logits);

            // Closed-form minimal step over the competing boundaries.
            let mut expected = f64::INFINITY;
            let mut step = vec![0.0; dim];
            for i in 0..classes {
                if i == true_class {
                    continue;
                }
                let wdiff: Vec<f64> = rows[i]
                    .iter()
                    .zip(&rows[true_class])
                    .map(|(a, b)| a - b)
                    .collect();
                let norm_sq: f64 = wdiff.iter().map(|v| v * v).sum();
                if norm_sq < 1e-12 {
                    continue;
                }
                let margin = logits[true_class] - logits[i];
                let dist = margin / norm_sq.sqrt();
                if dist < expected {
                    expected = dist;
                    step = wdiff.iter().map(|&v| v * margin / norm_sq).collect();
                }
            }
            // Keep only instances whose minimal step stays inside the box, so
            // the final clamp is inactive and the comparison is exact.
            let inside = pixels
                .iter()
                .zip(&step)
                .all(|(&x, &s)| (0.02..=0.98).contains(&(x + s)));
            if !inside || !expected.is_finite() {
                continue;
            }
            checked += 1;

            let res = deepfool(&target, &img, true_class, 1, 0.0).unwrap();
            assert!(
                (res.perturbation_l2 - expected).abs() < 1e-6,
                "trial {trial}: {} vs {expected}",
                res.perturbation_l2
            );
        }
        assert!(checked >= 20, "only {checked} interior instances checked");
    }

    #[test]
    fn already_misclassified_image_returns_immediately() {
        let target = LinearTarget::new(&[&[1.0], &[2.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 1, 1], vec![0.5]).unwrap();
        // Class 1 wins at this pixel; asking for true class 0 means the
        // model already misclassifies.
        let res = deepfool(&target, &img, 0, 10, 0.02).unwrap();
        assert!(res.success);
        assert_eq!(res.iterations_used, 0);
        assert_eq!(res.perturbation_l2, 0.0);
    }

    #[test]
    fn default_overshoot_crosses_the_boundary() {
        let target = LinearTarget::new(&[&[3.0, 4.0], &[0.0, 0.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![1.0, 1.0]).unwrap();
        let res = deepfool(&target, &img, 0, 50, 0.02).unwrap();
        assert!(res.success);
    }
}
