//! Adversarial attacks and randomized input defenses on a self-contained,
//! CPU-only classifier.
//!
//! The crate bundles everything needed to study how inference-time random
//! resizing and random zero-padding blunt gradient-based attacks:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff
//! - [`model`]: a small size-polymorphic CNN, its training loops, and a
//!   procedurally generated shape dataset
//! - [`attack`]: FGSM, DeepFool, and the Carlini-Wagner L2 attack, all
//!   parameterized over a differentiable target so the same code attacks bare
//!   networks, fixed-pattern targets, and pattern ensembles
//! - [`defense`]: the randomization layers (resize, pad, flip, color jitter),
//!   pattern counting/sampling, and prediction averaging
//! - [`harness`]: attack scenarios, diagnostics, multi-run evaluation, and the
//!   normalized challenge score
//! - [`io`]: binary dataset/weight formats, experiment configuration, and
//!   report emission

pub mod attack;
pub mod defense;
pub mod error;
pub mod harness;
pub mod io;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Tape, Tensor, Value};
