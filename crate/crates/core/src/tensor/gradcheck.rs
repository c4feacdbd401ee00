//! Central finite-difference gradient checking.
//!
//! Used by the test suites to validate every differentiable op and composite
//! against an independent numeric derivative. The checker re-runs the caller's
//! graph builder from scratch for every probe, so it is independent of the
//! tape's backward path.

use super::{Tape, Tensor, Value};
use crate::error::Result;

/// Default probe step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Builds a scalar graph from one input leaf.
pub type ScalarGraph<'a> = dyn Fn(&mut Tape, Value) -> Result<Value> + 'a;

/// Evaluates the scalar output of `build` at `x`.
pub fn eval(build: &ScalarGraph, x: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let leaf = tape.leaf(x);
    let out = build(&mut tape, leaf)?;
    tape.tensor(out).item()
}

/// Gradient of `build` at `x` via the tape.
pub fn tape_gradient(build: &ScalarGraph, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let leaf = tape.leaf(&x.clone().with_grad());
    let out = build(&mut tape, leaf)?;
    Ok(tape.backward(out)?.get(leaf))
}

/// Gradient of `build` at `x` via central differences with step `h`.
pub fn numeric_gradient(build: &ScalarGraph, x: &Tensor, h: f64) -> Result<Tensor> {
    let mut grad = vec![0.0; x.numel()];
    let mut probe = x.data().to_vec();
    for i in 0..x.numel() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(build, &Tensor::from_raw(x.shape().to_vec(), probe.clone()))?;
        probe[i] = orig - h;
        let minus = eval(build, &Tensor::from_raw(x.shape().to_vec(), probe.clone()))?;
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), grad))
}

/// Largest relative disagreement between tape and numeric gradients,
/// `|a - b| / max(1, |a|, |b|)` over all elements.
pub fn max_relative_error(build: &ScalarGraph, x: &Tensor, h: f64) -> Result<f64> {
    let analytic = tape_gradient(build, x)?;
    let numeric = numeric_gradient(build, x, h)?;
    let mut worst = 0.0_f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let denom = 1.0_f64.max(a.abs()).max(n.abs());
        worst = worst.max((a - n).abs() / denom);
    }
    Ok(worst)
}

/// Asserts the analytic gradient agrees with central differences.
///
/// Panics with a diagnostic when the relative error exceeds `tol`.
pub fn assert_gradients_match(build: &ScalarGraph, x: &Tensor, h: f64, tol: f64) {
    let err = max_relative_error(build, x, h).expect("gradient check graph failed");
    assert!(
        err <= tol,
        "gradient mismatch: max relative error {err:.3e} exceeds {tol:.1e}"
    );
}
