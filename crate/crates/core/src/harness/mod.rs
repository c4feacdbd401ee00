//! Attack scenarios, diagnostics, multi-run defense evaluation, and the
//! normalized challenge score.
//!
//! A scenario pairs an attack with a target construction: the bare network
//! (vanilla), the network behind one fixed pattern, or the network behind an
//! ensemble of patterns whose attack loss is the mean of per-pattern losses.
//! Evaluation randomness derives from per-(scenario, run, image) seeds, so
//! reports are byte-identical for any worker count.

use crate::attack::{
    attack_batch, target_predict, AttackConfig, PlainTarget, TargetModel,
};
use crate::defense::{
    apply_pattern_on_tape, randomized_predict, DefenseConfig, PatternSpec, RandomizationParams,
};
use crate::error::{Error, Result};
use crate::model::{forward_logits_on_tape, LabeledDataset, ModelWeights};
use crate::tensor::{argmax, Tape, Tensor, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Vanilla,
    SinglePattern,
    EnsemblePattern,
    OnePixelPad,
    OnePixelResize,
}

impl ScenarioKind {
    pub fn id(&self) -> &'static str {
        match self {
            ScenarioKind::Vanilla => "vanilla",
            ScenarioKind::SinglePattern => "single-pattern",
            ScenarioKind::EnsemblePattern => "ensemble-pattern",
            ScenarioKind::OnePixelPad => "one-pixel-pad",
            ScenarioKind::OnePixelResize => "one-pixel-resize",
        }
    }

    fn seed_tag(&self) -> u64 {
        match self {
            ScenarioKind::Vanilla => 1,
            ScenarioKind::SinglePattern => 2,
            ScenarioKind::EnsemblePattern => 3,
            ScenarioKind::OnePixelPad => 4,
            ScenarioKind::OnePixelResize => 5,
        }
    }
}

/// One scenario to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Required for `SinglePattern`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_pattern: Option<PatternSpec>,
    /// Required (nonempty) for `EnsemblePattern`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_set: Option<Vec<PatternSpec>>,
    #[serde(default = "default_defense_runs")]
    pub defense_runs: usize,
}

fn default_defense_runs() -> usize {
    3
}

impl ScenarioSpec {
    pub fn vanilla() -> Self {
        Self {
            kind: ScenarioKind::Vanilla,
            fixed_pattern: None,
            pattern_set: None,
            defense_runs: 3,
        }
    }

    /// Single-pattern scenario with the centered no-resize default pattern.
    pub fn single_pattern_default(base_side: usize, pad_to: usize) -> Result<Self> {
        Ok(Self {
            kind: ScenarioKind::SinglePattern,
            fixed_pattern: Some(centered_pattern(base_side, pad_to)?),
            pattern_set: None,
            defense_runs: 3,
        })
    }

    /// Ensemble scenario with the default scale/placement grid.
    pub fn ensemble_default(resize_min: usize, pad_to: usize) -> Self {
        Self {
            kind: ScenarioKind::EnsemblePattern,
            fixed_pattern: None,
            pattern_set: Some(ensemble_patterns(resize_min, pad_to)),
            defense_runs: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.defense_runs == 0 {
            return Err(Error::Contract("defense_runs must be positive".into()));
        }
        match self.kind {
            ScenarioKind::SinglePattern if self.fixed_pattern.is_none() => Err(Error::Contract(
                "single-pattern scenario requires fixed_pattern".into(),
            )),
            ScenarioKind::EnsemblePattern
                if self.pattern_set.as_ref().map_or(true, Vec::is_empty) =>
            {
                Err(Error::Contract(
                    "ensemble-pattern scenario requires a nonempty pattern_set".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Per-(model, attack, scenario) accuracy record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub model_id: String,
    pub attack_id: String,
    pub scenario_id: String,
    /// Fraction of adversarial examples the attacked target still classifies
    /// correctly (per-(image, pattern) pairs for ensemble targets).
    pub target_accuracy: f64,
    pub defense_accuracy_mean: f64,
    pub defense_accuracy_runs: Vec<f64>,
    /// Correct counts per defense run; exact integers for score arithmetic.
    pub defense_correct_runs: Vec<u64>,
    /// Per-run, per-image defense correctness.
    pub defense_correct_bits: Vec<Vec<bool>>,
    pub n_images: usize,
    /// Images whose attack failed numerically (evaluated unperturbed).
    pub attack_failures: usize,
    /// Wall-clock seconds; never serialized, so report files stay
    /// reproducible.
    #[serde(skip)]
    pub timing_seconds: f64,
}

impl ScenarioReport {
    fn mean_accuracy(runs: &[f64]) -> f64 {
        runs.iter().sum::<f64>() / runs.len() as f64
    }
}

/// The bare network as a target.
pub fn make_vanilla_target(weights: &ModelWeights) -> PlainTarget<'_> {
    PlainTarget::new(weights)
}

/// The network behind one fixed randomization pattern.
pub struct PatternTarget<'a> {
    weights: &'a ModelWeights,
    pattern: PatternSpec,
    pad_to: usize,
}

impl TargetModel for PatternTarget<'_> {
    fn forward_branches(&self, tape: &mut Tape, image: Value) -> Result<Vec<Value>> {
        let transformed = apply_pattern_on_tape(tape, image, &self.pattern, self.pad_to)?;
        Ok(vec![forward_logits_on_tape(tape, self.weights, transformed)?])
    }
}

pub fn make_single_pattern_target<'a>(
    weights: &'a ModelWeights,
    pattern: PatternSpec,
    pad_to: usize,
) -> Result<PatternTarget<'a>> {
    pattern.validate(pad_to)?;
    Ok(PatternTarget {
        weights,
        pattern,
        pad_to,
    })
}

/// The default single-pattern placement: no resizing, centered padding.
pub fn centered_pattern(base_side: usize, pad_to: usize) -> Result<PatternSpec> {
    if pad_to < base_side {
        return Err(Error::Contract(format!(
            "pad target {pad_to} smaller than base side {base_side}"
        )));
    }
    if (pad_to - base_side) % 2 != 0 {
        return Err(Error::Contract(format!(
            "pad margin {} is odd; pass explicit offsets instead of the centered default",
            pad_to - base_side
        )));
    }
    let off = (pad_to - base_side) / 2;
    Ok(PatternSpec::geometric(base_side, off, off))
}

/// The network behind an ensemble of patterns; the attack loss is the mean of
/// per-pattern losses, and per-pattern logits stay exposed for accounting.
pub struct EnsembleTarget<'a> {
    weights: &'a ModelWeights,
    patterns: Vec<PatternSpec>,
    pad_to: usize,
}

impl EnsembleTarget<'_> {
    pub fn patterns(&self) -> &[PatternSpec] {
        &self.patterns
    }
}

impl TargetModel for EnsembleTarget<'_> {
    fn forward_branches(&self, tape: &mut Tape, image: Value) -> Result<Vec<Value>> {
        self.patterns
            .iter()
            .map(|p| {
                let transformed = apply_pattern_on_tape(tape, image, p, self.pad_to)?;
                forward_logits_on_tape(tape, self.weights, transformed)
            })
            .collect()
    }
}

pub fn make_ensemble_pattern_target<'a>(
    weights: &'a ModelWeights,
    patterns: Vec<PatternSpec>,
    pad_to: usize,
) -> Result<EnsembleTarget<'a>> {
    if patterns.is_empty() {
        return Err(Error::Contract("ensemble requires at least one pattern".into()));
    }
    for p in &patterns {
        p.validate(pad_to)?;
    }
    Ok(EnsembleTarget {
        weights,
        patterns,
        pad_to,
    })
}

/// Default ensemble grid: five evenly spaced scales from `resize_min` to
/// `pad_to`, each placed at the four corners and the center, deduplicated
/// (all placements coincide at the full-canvas scale).
pub fn ensemble_patterns(resize_min: usize, pad_to: usize) -> Vec<PatternSpec> {
    let span = pad_to - resize_min;
    let mut out = Vec::new();
    for step in 0..5 {
        let rnd = resize_min + span * step / 4;
        let m = pad_to - rnd;
        let placements = [
            (0, 0),
            (m, 0),
            (0, m),
            (m, m),
            (m / 2, m / 2),
        ];
        for (left, top) in placements {
            let spec = PatternSpec::geometric(rnd, left, top);
            if !out.contains(&spec) {
                out.push(spec);
            }
        }
    }
    out
}

/// Correct (image, pattern) pairs over all pairs, for an ensemble target.
pub fn ensemble_target_accuracy(
    target: &EnsembleTarget<'_>,
    images: &[Tensor],
    labels: &[usize],
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Contract("no images to account".into()));
    }
    let per_image: Vec<usize> = images
        .par_iter()
        .zip(labels)
        .map(|(img, &label)| -> Result<usize> {
            let mut tape = Tape::new();
            let x = tape.constant(img);
            let branches = target.forward_branches(&mut tape, x)?;
            Ok(branches
                .iter()
                .filter(|&&b| argmax(tape.data(b)) == label)
                .count())
        })
        .collect::<Result<_>>()?;
    let correct: usize = per_image.iter().sum();
    Ok(correct as f64 / (images.len() * target.patterns.len()) as f64)
}

/// Stable seed derivation for per-(scenario, run, image) rng streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        state ^= p;
        state = splitmix64(state);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn model_id(weights: &ModelWeights) -> String {
    let tag = if weights.adversarially_trained {
        "-advtrain"
    } else {
        ""
    };
    format!(
        "{}{}#seed{}",
        weights.arch.fingerprint(),
        tag,
        weights.training_seed
    )
}

/// Attacks every image of the dataset against the scenario's target and then
/// measures target and defense accuracy, the latter over
/// `scenario.defense_runs` independent randomized passes.
///
/// Per-image attack failures are recorded and those images are evaluated
/// unperturbed; the run never aborts. Deterministic given `master_seed`.
pub fn run_scenario(
    weights: &ModelWeights,
    scenario: &ScenarioSpec,
    attack: &AttackConfig,
    dataset: &LabeledDataset,
    defense: &DefenseConfig,
    master_seed: u64,
) -> Result<ScenarioReport> {
    scenario.validate()?;
    attack.validate()?;
    defense.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("scenario dataset is empty".into()));
    }

    match scenario.kind {
        ScenarioKind::OnePixelPad => {
            return run_diagnostic_one_pixel_pad(weights, attack, dataset, master_seed)
        }
        ScenarioKind::OnePixelResize => {
            return run_diagnostic_one_pixel_resize(weights, attack, dataset, master_seed)
        }
        _ => {}
    }

    let started = std::time::Instant::now();
    let pad_to = defense.randomization.pad_to;

    let vanilla;
    let single;
    let ensemble;
    let target: &dyn TargetModel = match scenario.kind {
        ScenarioKind::Vanilla => {
            vanilla = make_vanilla_target(weights);
            &vanilla
        }
        ScenarioKind::SinglePattern => {
            let pattern = scenario.fixed_pattern.expect("validated");
            single = make_single_pattern_target(weights, pattern, pad_to)?;
            &single
        }
        ScenarioKind::EnsemblePattern => {
            let patterns = scenario.pattern_set.clone().expect("validated");
            ensemble = make_ensemble_pattern_target(weights, patterns, pad_to)?;
            &ensemble
        }
        _ => unreachable!(),
    };

    let outcomes = attack_batch(attack, target, dataset)?;
    let mut attack_failures = 0usize;
    let adv_images: Vec<Tensor> = outcomes
        .into_iter()
        .zip(&dataset.images)
        .map(|(res, clean)| match res {
            Ok(r) => r.adversarial,
            Err(_) => {
                attack_failures += 1;
                clean.clone()
            }
        })
        .collect();

    let target_accuracy = match scenario.kind {
        ScenarioKind::EnsemblePattern => {
            let patterns = scenario.pattern_set.clone().expect("validated");
            let tgt = make_ensemble_pattern_target(weights, patterns, pad_to)?;
            ensemble_target_accuracy(&tgt, &adv_images, &dataset.labels)?
        }
        _ => {
            let correct: Vec<bool> = adv_images
                .par_iter()
                .zip(&dataset.labels)
                .map(|(img, &label)| Ok(target_predict(target, img)? == label))
                .collect::<Result<_>>()?;
            correct.iter().filter(|&&c| c).count() as f64 / adv_images.len() as f64
        }
    };

    let (runs, correct_runs, bits) = defense_passes(
        weights,
        &adv_images,
        &dataset.labels,
        defense,
        scenario.defense_runs,
        master_seed,
        scenario.kind.seed_tag(),
    )?;

    Ok(ScenarioReport {
        model_id: model_id(weights),
        attack_id: attack.label(),
        scenario_id: scenario.kind.id().to_string(),
        target_accuracy,
        defense_accuracy_mean: ScenarioReport::mean_accuracy(&runs),
        defense_accuracy_runs: runs,
        defense_correct_runs: correct_runs,
        defense_correct_bits: bits,
        n_images: dataset.len(),
        attack_failures,
        timing_seconds: started.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::type_complexity)]
fn defense_passes(
    weights: &ModelWeights,
    images: &[Tensor],
    labels: &[usize],
    defense: &DefenseConfig,
    defense_runs: usize,
    master_seed: u64,
    scenario_tag: u64,
) -> Result<(Vec<f64>, Vec<u64>, Vec<Vec<bool>>)> {
    let mut runs = Vec::with_capacity(defense_runs);
    let mut correct_runs = Vec::with_capacity(defense_runs);
    let mut bits = Vec::with_capacity(defense_runs);
    for run in 0..defense_runs {
        let row: Vec<bool> = images
            .par_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (img, &label))| -> Result<bool> {
                let seed = derive_seed(&[master_seed, scenario_tag, run as u64, i as u64]);
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let (pred, _) = randomized_predict(
                    weights,
                    img,
                    &defense.randomization,
                    defense.n_iterations,
                    &mut rng,
                )?;
                Ok(pred == label)
            })
            .collect::<Result<_>>()?;
        let correct = row.iter().filter(|&&c| c).count() as u64;
        runs.push(correct as f64 / images.len() as f64);
        correct_runs.push(correct);
        bits.push(row);
    }
    Ok((runs, correct_runs, bits))
}

/// One-pixel padding diagnostic: the target ensembles the top-left, top-right,
/// and bottom-left placements of a one-pixel pad; the defense deterministically
/// takes the remaining bottom-right placement and runs once.
///
/// Dataset images must already be at side `pad_to - 1`, where `pad_to` is
/// inferred as side + 1.
pub fn run_diagnostic_one_pixel_pad(
    weights: &ModelWeights,
    attack: &AttackConfig,
    dataset: &LabeledDataset,
    master_seed: u64,
) -> Result<ScenarioReport> {
    let _ = master_seed; // the diagnostic has no random choices
    let started = std::time::Instant::now();
    let side = diagnostic_side(dataset)?;
    let pad_to = side + 1;

    let target_patterns = vec![
        PatternSpec::geometric(side, 0, 0),
        PatternSpec::geometric(side, 1, 0),
        PatternSpec::geometric(side, 0, 1),
    ];
    let target = make_ensemble_pattern_target(weights, target_patterns.clone(), pad_to)?;

    let outcomes = attack_batch(attack, &target, dataset)?;
    let mut attack_failures = 0usize;
    let adv_images: Vec<Tensor> = outcomes
        .into_iter()
        .zip(&dataset.images)
        .map(|(res, clean)| match res {
            Ok(r) => r.adversarial,
            Err(_) => {
                attack_failures += 1;
                clean.clone()
            }
        })
        .collect();

    let target_accuracy = ensemble_target_accuracy(&target, &adv_images, &dataset.labels)?;

    let defense_pattern = PatternSpec::geometric(side, 1, 1);
    let row = fixed_pattern_pass(weights, &adv_images, &dataset.labels, &defense_pattern, pad_to)?;
    let correct = row.iter().filter(|&&c| c).count() as u64;
    let acc = correct as f64 / adv_images.len() as f64;

    Ok(ScenarioReport {
        model_id: model_id(weights),
        attack_id: attack.label(),
        scenario_id: ScenarioKind::OnePixelPad.id().to_string(),
        target_accuracy,
        defense_accuracy_mean: acc,
        defense_accuracy_runs: vec![acc],
        defense_correct_runs: vec![correct],
        defense_correct_bits: vec![row],
        n_images: dataset.len(),
        attack_failures,
        timing_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One-pixel resizing diagnostic: the target is the bare network at side
/// `pad_to - 1`; the defense deterministically resizes to `pad_to` and runs
/// once.
pub fn run_diagnostic_one_pixel_resize(
    weights: &ModelWeights,
    attack: &AttackConfig,
    dataset: &LabeledDataset,
    master_seed: u64,
) -> Result<ScenarioReport> {
    let _ = master_seed;
    let started = std::time::Instant::now();
    let side = diagnostic_side(dataset)?;
    let pad_to = side + 1;

    let target = make_vanilla_target(weights);
    let outcomes = attack_batch(attack, &target, dataset)?;
    let mut attack_failures = 0usize;
    let adv_images: Vec<Tensor> = outcomes
        .into_iter()
        .zip(&dataset.images)
        .map(|(res, clean)| match res {
            Ok(r) => r.adversarial,
            Err(_) => {
                attack_failures += 1;
                clean.clone()
            }
        })
        .collect();

    let correct_target: Vec<bool> = adv_images
        .par_iter()
        .zip(&dataset.labels)
        .map(|(img, &label)| Ok(target_predict(&target, img)? == label))
        .collect::<Result<_>>()?;
    let target_accuracy =
        correct_target.iter().filter(|&&c| c).count() as f64 / adv_images.len() as f64;

    let defense_pattern = PatternSpec::geometric(pad_to, 0, 0);
    let row = fixed_pattern_pass(weights, &adv_images, &dataset.labels, &defense_pattern, pad_to)?;
    let correct = row.iter().filter(|&&c| c).count() as u64;
    let acc = correct as f64 / adv_images.len() as f64;

    Ok(ScenarioReport {
        model_id: model_id(weights),
        attack_id: attack.label(),
        scenario_id: ScenarioKind::OnePixelResize.id().to_string(),
        target_accuracy,
        defense_accuracy_mean: acc,
        defense_accuracy_runs: vec![acc],
        defense_correct_runs: vec![correct],
        defense_correct_bits: vec![row],
        n_images: dataset.len(),
        attack_failures,
        timing_seconds: started.elapsed().as_secs_f64(),
    })
}

fn diagnostic_side(dataset: &LabeledDataset) -> Result<usize> {
    let first = dataset
        .images
        .first()
        .ok_or_else(|| Error::Contract("diagnostic dataset is empty".into()))?;
    let side = first.shape()[0];
    for img in &dataset.images {
        if img.shape()[0] != side || img.shape()[1] != side {
            return Err(Error::Contract(
                "diagnostic dataset images must share one square side".into(),
            ));
        }
    }
    Ok(side)
}

/// Classifies every image behind one fixed pattern.
fn fixed_pattern_pass(
    weights: &ModelWeights,
    images: &[Tensor],
    labels: &[usize],
    pattern: &PatternSpec,
    pad_to: usize,
) -> Result<Vec<bool>> {
    images
        .par_iter()
        .zip(labels)
        .map(|(img, &label)| -> Result<bool> {
            let mut tape = Tape::new();
            let x = tape.constant(img);
            let transformed = apply_pattern_on_tape(&mut tape, x, pattern, pad_to)?;
            let logits = forward_logits_on_tape(&mut tape, weights, transformed)?;
            Ok(argmax(tape.data(logits)) == label)
        })
        .collect()
}

/// Total correct classifications over all attacks divided by the total number
/// of adversarial examples. All attacks must cover the same image count.
pub fn normalized_score(correctness: &[Vec<bool>]) -> Result<f64> {
    if correctness.is_empty() {
        return Err(Error::Contract("score needs at least one attack".into()));
    }
    let n = correctness[0].len();
    if correctness.iter().any(|row| row.len() != n) {
        return Err(Error::Contract(
            "attacks cover inconsistent image counts".into(),
        ));
    }
    let total: usize = correctness.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Contract("score over zero adversarial examples".into()));
    }
    let correct: usize = correctness
        .iter()
        .map(|row| row.iter().filter(|&&c| c).count())
        .sum();
    Ok(correct as f64 / total as f64)
}
