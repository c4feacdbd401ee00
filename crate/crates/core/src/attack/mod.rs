//! Gradient-based attacks: FGSM, DeepFool, and Carlini-Wagner L2.
//!
//! Every attack is parameterized by a [`TargetModel`], a differentiable map
//! from an image to one or more logit vectors. A bare network exposes one
//! branch; a fixed-pattern target exposes one branch behind its transform; an
//! ensemble target exposes one branch per pattern and attacks optimize the
//! mean of the per-branch losses. Attacks are pure functions of their inputs:
//! identical arguments give bit-identical results.

mod cw;
mod deepfool;
mod fgsm;

pub use cw::cw_l2;
pub use deepfool::deepfool;
pub use fgsm::fgsm;

use crate::error::{Error, Result};
use crate::model::{forward_logits_on_tape, ModelWeights};
use crate::tensor::{argmax, Tape, Tensor, Value};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A differentiable attack target.
pub trait TargetModel: Sync {
    /// Logit vectors for every branch of the target, recorded on `tape`.
    fn forward_branches(&self, tape: &mut Tape, image: Value) -> Result<Vec<Value>>;
}

/// The bare network: one branch, no input transform.
pub struct PlainTarget<'a> {
    weights: &'a ModelWeights,
}

impl<'a> PlainTarget<'a> {
    pub fn new(weights: &'a ModelWeights) -> Self {
        Self { weights }
    }
}

impl TargetModel for PlainTarget<'_> {
    fn forward_branches(&self, tape: &mut Tape, image: Value) -> Result<Vec<Value>> {
        Ok(vec![forward_logits_on_tape(tape, self.weights, image)?])
    }
}

/// Mean of per-branch logits as plain data; the target's aggregate view.
pub fn mean_logits(target: &dyn TargetModel, image: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let branches = target.forward_branches(&mut tape, x)?;
    let n = branches.len();
    if n == 0 {
        return Err(Error::Contract("target exposes no branches".into()));
    }
    let classes = tape.shape(branches[0])[0];
    let mut acc = vec![0.0; classes];
    for b in branches {
        for (a, &v) in acc.iter_mut().zip(tape.data(b)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// Aggregate top-1 prediction of the target for an image.
pub fn target_predict(target: &dyn TargetModel, image: &Tensor) -> Result<usize> {
    Ok(argmax(&mean_logits(target, image)?))
}

/// Mean softmax cross-entropy over the target's branches, on the tape.
pub(crate) fn mean_ce_loss(
    tape: &mut Tape,
    target: &dyn TargetModel,
    image: Value,
    class: usize,
) -> Result<Value> {
    let branches = target.forward_branches(tape, image)?;
    if branches.is_empty() {
        return Err(Error::Contract("target exposes no branches".into()));
    }
    let n = branches.len();
    let mut acc: Option<Value> = None;
    for b in branches {
        let l = tape.softmax_cross_entropy(b, class)?;
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l)?,
        });
    }
    Ok(tape.mul_scalar(acc.expect("nonempty"), 1.0 / n as f64))
}

pub(crate) fn check_unit_range(image: &Tensor) -> Result<()> {
    if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Contract("image values must lie in [0,1]".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    DeepFool,
    Cw,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackKind::Fgsm => write!(f, "fgsm"),
            AttackKind::DeepFool => write!(f, "deepfool"),
            AttackKind::Cw => write!(f, "cw"),
        }
    }
}

/// Fully seeded parameter record for one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// FGSM step in pixel scale [0,1); 0 is the identity attack.
    #[serde(default)]
    pub epsilon: f64,
    /// Iteration budget; 0 means the per-kind default.
    #[serde(default)]
    pub max_iter: usize,
    /// DeepFool final overshoot.
    #[serde(default = "default_overshoot")]
    pub overshoot: f64,
    /// Carlini-Wagner tradeoff constant.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Carlini-Wagner confidence floor.
    #[serde(default)]
    pub k: f64,
    /// Carlini-Wagner gradient step size.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_overshoot() -> f64 {
    0.02
}
fn default_c() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.01
}

impl AttackConfig {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::Fgsm,
            epsilon,
            max_iter: 1,
            overshoot: default_overshoot(),
            c: default_c(),
            k: 0.0,
            lr: default_lr(),
            seed: 0,
        }
    }

    pub fn deepfool() -> Self {
        Self {
            kind: AttackKind::DeepFool,
            epsilon: 0.0,
            max_iter: 50,
            overshoot: default_overshoot(),
            c: default_c(),
            k: 0.0,
            lr: default_lr(),
            seed: 0,
        }
    }

    pub fn cw() -> Self {
        Self {
            kind: AttackKind::Cw,
            epsilon: 0.0,
            max_iter: 200,
            overshoot: default_overshoot(),
            c: default_c(),
            k: 0.0,
            lr: default_lr(),
            seed: 0,
        }
    }

    /// Fills kind-dependent defaults (currently only `max_iter`).
    pub fn normalized(mut self) -> Self {
        if self.max_iter == 0 {
            self.max_iter = match self.kind {
                AttackKind::Fgsm => 1,
                AttackKind::DeepFool => 50,
                AttackKind::Cw => 200,
            };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AttackKind::Fgsm => {
                if !(0.0..1.0).contains(&self.epsilon) {
                    return Err(Error::Contract(format!(
                        "fgsm epsilon {} outside [0,1)",
                        self.epsilon
                    )));
                }
            }
            AttackKind::DeepFool => {
                if self.overshoot < 0.0 {
                    return Err(Error::Contract(format!(
                        "deepfool overshoot {} negative",
                        self.overshoot
                    )));
                }
                if self.max_iter == 0 {
                    return Err(Error::Contract(
                        "deepfool max_iter must be positive".into(),
                    ));
                }
            }
            AttackKind::Cw => {
                if self.c <= 0.0 || self.lr <= 0.0 || self.k < 0.0 || self.max_iter == 0 {
                    return Err(Error::Contract(format!(
                        "cw parameters out of range: c={} k={} lr={} max_iter={}",
                        self.c, self.k, self.lr, self.max_iter
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short stable label used in reports and cache keys.
    pub fn label(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => format!("fgsm-{:.6}", self.epsilon),
            AttackKind::DeepFool => format!("deepfool-i{}-o{:.4}", self.max_iter, self.overshoot),
            AttackKind::Cw => format!(
                "cw-c{:.4}-k{:.4}-lr{:.4}-i{}",
                self.c, self.k, self.lr, self.max_iter
            ),
        }
    }

    /// Runs this attack on one image.
    pub fn run(
        &self,
        target: &dyn TargetModel,
        image: &Tensor,
        true_class: usize,
    ) -> Result<AttackResult> {
        self.validate()?;
        match self.kind {
            AttackKind::Fgsm => fgsm(target, image, true_class, self.epsilon),
            AttackKind::DeepFool => {
                deepfool(target, image, true_class, self.max_iter, self.overshoot)
            }
            AttackKind::Cw => cw_l2(
                target,
                image,
                true_class,
                self.c,
                self.k,
                self.max_iter,
                self.lr,
            ),
        }
    }
}

/// Outcome of one attack on one image.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// `adversarial - clean`, stored so that `clean + perturbation` is exactly
    /// the adversarial tensor.
    pub perturbation: Tensor,
    /// Whether the target's aggregate prediction moved off the true label.
    pub success: bool,
    pub iterations_used: usize,
    pub perturbation_l2: f64,
    pub perturbation_linf: f64,
}

impl AttackResult {
    /// Builds a result from the clean image and a raw adversarial candidate.
    ///
    /// The candidate is clamped to [0,1] and then reconciled so the stored
    /// adversarial equals `clean + perturbation` bit-exactly while staying in
    /// range; rounding can make one pass insufficient, hence the short loop.
    pub(crate) fn reconcile(
        clean: &Tensor,
        raw_adversarial: &Tensor,
        success: bool,
        iterations_used: usize,
    ) -> Result<Self> {
        let mut pert = vec![0.0; clean.numel()];
        let mut adv = vec![0.0; clean.numel()];
        for i in 0..clean.numel() {
            let c = clean.data()[i];
            let mut a = raw_adversarial.data()[i].clamp(0.0, 1.0);
            loop {
                let p = a - c;
                let s = c + p;
                if (0.0..=1.0).contains(&s) {
                    pert[i] = p;
                    adv[i] = s;
                    break;
                }
                a = s.clamp(0.0, 1.0);
            }
        }
        let shape = clean.shape().to_vec();
        let perturbation = Tensor::new(shape.clone(), pert)?;
        let adversarial = Tensor::new(shape, adv)?;
        Ok(Self {
            perturbation_l2: perturbation.l2_norm(),
            perturbation_linf: perturbation.linf_norm(),
            adversarial,
            perturbation,
            success,
            iterations_used,
        })
    }
}

/// Attacks every image of a dataset, preserving order.
///
/// Per-image failures become per-image `Err` records; the batch never aborts.
/// Results are bit-identical for any worker count because each image's attack
/// depends only on that image.
pub fn attack_batch(
    config: &AttackConfig,
    target: &dyn TargetModel,
    dataset: &crate::model::LabeledDataset,
) -> Result<Vec<Result<AttackResult>>> {
    config.validate()?;
    Ok(dataset
        .images
        .par_iter()
        .zip(&dataset.labels)
        .map(|(img, &label)| config.run(target, img, label))
        .collect())
}

#[cfg(test)]
pub(crate) mod test_targets {
    use super::*;

    /// Affine multiclass model over a flattened image: logits = W x + b.
    pub struct LinearTarget {
        pub w: Tensor,
        pub b: Vec<f64>,
    }

    impl LinearTarget {
        pub fn new(rows: &[&[f64]], b: &[f64]) -> Self {
            let c = rows.len();
            let n = rows[0].len();
            let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            Self {
                w: Tensor::new(vec![c, n], data).unwrap(),
                b: b.to_vec(),
            }
        }
    }

    impl TargetModel for LinearTarget {
        fn forward_branches(&self, tape: &mut Tape, image: Value) -> Result<Vec<Value>> {
            let n = tape.data(image).len();
            let c = self.w.shape()[0];
            let col = tape.reshape(image, vec![n, 1])?;
            let w = tape.constant(&self.w);
            let prod = tape.matmul(w, col)?;
            let flat = tape.reshape(prod, vec![c])?;
            let bias = tape.constant(&Tensor::new(vec![c], self.b.clone()).unwrap());
            Ok(vec![tape.add(flat, bias)?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelArch};

    #[test]
    fn attack_batch_on_empty_dataset_is_empty() {
        let w = init_model(&ModelArch::default(), 1).unwrap();
        let target = PlainTarget::new(&w);
        let empty = crate::model::LabeledDataset::new(vec![], vec![]).unwrap();
        let out = attack_batch(&AttackConfig::fgsm(0.01), &target, &empty).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn config_validation_catches_ranges() {
        assert!(AttackConfig::fgsm(1.0).validate().is_err());
        assert!(AttackConfig::fgsm(0.0).validate().is_ok());
        let mut cw = AttackConfig::cw();
        cw.c = 0.0;
        assert!(cw.validate().is_err());
        let mut df = AttackConfig::deepfool();
        df.overshoot = -0.1;
        assert!(df.validate().is_err());
    }

    #[test]
    fn normalized_fills_per_kind_iteration_defaults() {
        let mut cfg = AttackConfig::cw();
        cfg.max_iter = 0;
        assert_eq!(cfg.normalized().max_iter, 200);
        let mut cfg = AttackConfig::deepfool();
        cfg.max_iter = 0;
        assert_eq!(cfg.normalized().max_iter, 50);
    }
}
