//! Carlini-Wagner L2: gradient descent on an auxiliary variable under a tanh
//! change of variables, trading squared distortion against a logit margin.

use super::{check_unit_range, target_predict, AttackResult, TargetModel};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Value};

/// Pixel inset applied before the atanh initialization so boundary values
/// stay finite.
const BOX_INSET: f64 = 1e-6;

/// Minimizes `||x(w) - X||_2^2 + c * f(x(w))` over the auxiliary variable `w`
/// with `x(w) = (tanh(w) + 1) / 2`, plain gradient descent, and a fixed
/// iteration budget. `f` is the true-class margin over the strongest
/// competitor floored at `-k`, averaged over the target's branches.
///
/// Every iterate lies strictly inside (0,1) by construction. Returns the
/// lowest-distortion successful iterate, or the final iterate with
/// `success = false` when no iterate misclassified.
pub fn cw_l2(
    target: &dyn TargetModel,
    image: &Tensor,
    true_class: usize,
    c: f64,
    k: f64,
    max_iter: usize,
    lr: f64,
) -> Result<AttackResult> {
    check_unit_range(image)?;
    if c <= 0.0 {
        return Err(Error::Contract(format!("c {c} must be positive")));
    }
    if k < 0.0 || lr <= 0.0 || max_iter == 0 {
        return Err(Error::Contract(format!(
            "invalid cw parameters: k={k} lr={lr} max_iter={max_iter}"
        )));
    }

    // w = atanh(2x - 1) after squeezing pixels off the box boundary.
    let mut omega: Vec<f64> = image
        .data()
        .iter()
        .map(|&v| {
            let squeezed = v.clamp(BOX_INSET, 1.0 - BOX_INSET);
            (2.0 * squeezed - 1.0).atanh()
        })
        .collect();

    let shape = image.shape().to_vec();
    let mut best: Option<(f64, Tensor, usize)> = None;

    for iter in 1..=max_iter {
        let mut tape = Tape::new();
        let w = tape.leaf(&Tensor::new(shape.clone(), omega.clone())?.with_grad());
        let candidate = reparameterize(&mut tape, w)?;
        let diff = {
            let clean = tape.constant(image);
            tape.sub(candidate, clean)?
        };
        let sq = tape.square(diff);
        let dist_sq = tape.sum(sq);
        let margin = mean_margin(&mut tape, target, candidate, true_class, k)?;
        let weighted = tape.mul_scalar(margin, c);
        let objective = tape.add(dist_sq, weighted)?;

        let obj_value = tape.data(objective)[0];
        if !obj_value.is_finite() {
            return Err(Error::Numeric(format!(
                "cw objective diverged at iteration {iter}"
            )));
        }

        record_if_better(
            target,
            image,
            &tape.tensor(candidate),
            true_class,
            iter - 1,
            &mut best,
        )?;

        let grad = tape.backward(objective)?.get(w);
        if grad.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite cw gradient at iteration {iter}"
            )));
        }
        for (wv, gv) in omega.iter_mut().zip(grad.data()) {
            *wv -= lr * gv;
        }
    }

    // The final update deserves one forward look as well.
    let final_candidate = {
        let mut tape = Tape::new();
        let w = tape.constant(&Tensor::new(shape.clone(), omega.clone())?);
        let candidate = reparameterize(&mut tape, w)?;
        tape.tensor(candidate)
    };
    record_if_better(
        target,
        image,
        &final_candidate,
        true_class,
        max_iter,
        &mut best,
    )?;

    match best {
        Some((_, adv, at_iter)) => AttackResult::reconcile(image, &adv, true, at_iter.max(1)),
        None => AttackResult::reconcile(image, &final_candidate, false, max_iter),
    }
}

/// `(tanh(w) + 1) / 2`, strictly inside (0,1).
fn reparameterize(tape: &mut Tape, w: Value) -> Result<Value> {
    let t = tape.tanh(w);
    let shifted = tape.add_scalar(t, 1.0);
    Ok(tape.mul_scalar(shifted, 0.5))
}

/// Mean over branches of the floored true-class margin (the attack loss term).
fn mean_margin(
    tape: &mut Tape,
    target: &dyn TargetModel,
    image: Value,
    true_class: usize,
    k: f64,
) -> Result<Value> {
    let branches = target.forward_branches(tape, image)?;
    if branches.is_empty() {
        return Err(Error::Contract("target exposes no branches".into()));
    }
    let n = branches.len();
    let mut acc: Option<Value> = None;
    for b in branches {
        let m = tape.logit_margin(b, true_class, k)?;
        acc = Some(match acc {
            None => m,
            Some(a) => tape.add(a, m)?,
        });
    }
    Ok(tape.mul_scalar(acc.expect("nonempty"), 1.0 / n as f64))
}

fn record_if_better(
    target: &dyn TargetModel,
    clean: &Tensor,
    candidate: &Tensor,
    true_class: usize,
    iteration: usize,
    best: &mut Option<(f64, Tensor, usize)>,
) -> Result<()> {
    if target_predict(target, candidate)? == true_class {
        return Ok(());
    }
    let dist = candidate.zip(clean, |a, b| a - b)?.l2_norm();
    if best.as_ref().map_or(true, |(d, _, _)| dist < *d) {
        *best = Some((dist, candidate.clone(), iteration));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::test_targets::LinearTarget;

    #[test]
    fn zero_auxiliary_variable_maps_to_the_half_gray_image() {
        let mut tape = Tape::new();
        let w = tape.constant(&Tensor::new(vec![1, 2, 1], vec![0.0, 0.0]).unwrap());
        let x = reparameterize(&mut tape, w).unwrap();
        assert_eq!(tape.data(x), &[0.5, 0.5]);
    }

    #[test]
    fn vanishing_c_reduces_to_distance_minimization() {
        let target = LinearTarget::new(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![0.7, 0.3]).unwrap();
        let res = cw_l2(&target, &img, 0, 1e-9, 0.0, 100, 0.01).unwrap();
        let dist = res
            .adversarial
            .zip(&img, |a, b| a - b)
            .unwrap()
            .l2_norm();
        assert!(dist < 1e-3, "distortion {dist}");
        assert!(!res.success);
    }

    #[test]
    fn matches_grid_search_on_a_two_pixel_model() {
        // Boundary z0 = z1 at x0 = x1; closest crossing from (0.7, 0.3).
        let target = LinearTarget::new(&[&[2.0, 1.0], &[1.0, 2.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![0.7, 0.3]).unwrap();
        let true_class = 0;

        // Brute force over the auxiliary plane: minimal successful distortion.
        let mut oracle = f64::INFINITY;
        let steps = 1201; // omega in [-3, 3] at 0.005
        for i in 0..steps {
            for j in 0..steps {
                let w0 = -3.0 + i as f64 * 0.005;
                let w1 = -3.0 + j as f64 * 0.005;
                let x0 = 0.5 * (w0.tanh() + 1.0);
                let x1 = 0.5 * (w1.tanh() + 1.0);
                let z0 = 2.0 * x0 + x1;
                let z1 = x0 + 2.0 * x1;
                if z1 > z0 {
                    let d = ((x0 - 0.7).powi(2) + (x1 - 0.3).powi(2)).sqrt();
                    if d < oracle {
                        oracle = d;
                    }
                }
            }
        }

        let res = cw_l2(&target, &img, true_class, 1.0, 0.0, 400, 0.01).unwrap();
        assert!(res.success);
        let dist = res
            .adversarial
            .zip(&img, |a, b| a - b)
            .unwrap()
            .l2_norm();
        let rel = (dist - oracle).abs() / oracle;
        assert!(
            rel < 0.02,
            "cw distortion {dist} vs grid-search {oracle} (rel {rel})"
        );
    }

    #[test]
    fn all_iterates_stay_strictly_inside_the_unit_box() {
        let target = LinearTarget::new(&[&[2.0, 1.0], &[1.0, 2.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![1.0, 0.0]).unwrap();
        let res = cw_l2(&target, &img, 0, 5.0, 0.5, 300, 0.05).unwrap();
        for &v in res.adversarial.data() {
            assert!(v > 0.0 && v < 1.0, "iterate value {v} touches the box");
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let target = LinearTarget::new(&[&[2.0, 1.0], &[1.0, 2.0]], &[0.0, 0.0]);
        let img = Tensor::new(vec![1, 2, 1], vec![0.6, 0.4]).unwrap();
        let a = cw_l2(&target, &img, 0, 1.0, 0.0, 50, 0.01).unwrap();
        let b = cw_l2(&target, &img, 0, 1.0, 0.0, 50, 0.01).unwrap();
        assert_eq!(a.adversarial.data(), b.adversarial.data());
        assert_eq!(a.iterations_used, b.iterations_used);
    }
}
