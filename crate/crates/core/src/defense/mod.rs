//! Randomization layers: random resizing, random zero-padding, optional
//! horizontal flip and color jitter, plus prediction averaging.
//!
//! A *pattern* is one concrete instantiation of the layers. Applying a fixed
//! pattern is differentiable with respect to the image (resize backward is
//! the transpose of the interpolation operator, pad backward is a crop), which
//! is what lets attackers target specific patterns.

use crate::error::{Error, Result};
use crate::model::{forward_logits_on_tape, ModelWeights};
use crate::tensor::{argmax, softmax, Tape, Tensor, Value};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Jitter ranges; each transform is enabled by its presence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ColorJitter {
    /// Brightness offsets drawn from `[-delta_max, delta_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness: Option<f64>,
    /// Saturation factors drawn from `[lo, hi]`; needs 3 channels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<(f64, f64)>,
    /// Hue shifts (fraction of a turn) drawn from `[-theta_max, theta_max]`;
    /// needs 3 channels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hue: Option<f64>,
    /// Contrast factors drawn from `[lo, hi]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast: Option<(f64, f64)>,
}

impl ColorJitter {
    /// The conventional augmentation ranges: brightness 32/255, saturation
    /// and contrast in [0.5, 1.5], hue within 0.2 of a turn.
    pub fn full() -> Self {
        Self {
            brightness: Some(32.0 / 255.0),
            saturation: Some((0.5, 1.5)),
            hue: Some(0.2),
            contrast: Some((0.5, 1.5)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.brightness.is_none()
            && self.saturation.is_none()
            && self.hue.is_none()
            && self.contrast.is_none()
    }

    fn validate(&self) -> Result<()> {
        if let Some(d) = self.brightness {
            if d < 0.0 {
                return Err(Error::Contract(format!("brightness range {d} negative")));
            }
        }
        for (name, range) in [("saturation", self.saturation), ("contrast", self.contrast)] {
            if let Some((lo, hi)) = range {
                if lo > hi || lo < 0.0 {
                    return Err(Error::Contract(format!(
                        "{name} range [{lo}, {hi}] invalid"
                    )));
                }
            }
        }
        if let Some(t) = self.hue {
            if t < 0.0 {
                return Err(Error::Contract(format!("hue range {t} negative")));
            }
        }
        Ok(())
    }
}

/// Parameters of the randomization layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationParams {
    /// Side the classifier was trained on.
    pub base_side: usize,
    /// Smallest resize target (inclusive); may be below `base_side`.
    pub resize_min: usize,
    /// One past the largest resize target.
    pub resize_max_exclusive: usize,
    /// Side of the padded canvas.
    pub pad_to: usize,
    /// Probability of a horizontal flip per pattern.
    #[serde(default)]
    pub flip_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_jitter: Option<ColorJitter>,
}

impl Default for RandomizationParams {
    fn default() -> Self {
        Self {
            base_side: 28,
            resize_min: 28,
            resize_max_exclusive: 36,
            pad_to: 36,
            flip_prob: 0.0,
            color_jitter: None,
        }
    }
}

impl RandomizationParams {
    /// Single-pattern identity configuration for a given side.
    pub fn identity(side: usize) -> Self {
        Self {
            base_side: side,
            resize_min: side,
            resize_max_exclusive: side + 1,
            pad_to: side,
            flip_prob: 0.0,
            color_jitter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize_min == 0 {
            return Err(Error::Contract("resize_min must be positive".into()));
        }
        if self.resize_max_exclusive <= self.resize_min {
            return Err(Error::Contract(format!(
                "empty resize range [{}, {})",
                self.resize_min, self.resize_max_exclusive
            )));
        }
        if self.resize_max_exclusive - 1 > self.pad_to {
            return Err(Error::Contract(format!(
                "largest resize {} exceeds pad target {}",
                self.resize_max_exclusive - 1,
                self.pad_to
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Contract(format!(
                "flip probability {} outside [0,1]",
                self.flip_prob
            )));
        }
        if let Some(j) = &self.color_jitter {
            j.validate()?;
        }
        Ok(())
    }
}

/// One defense instantiation: randomization parameters plus the number of
/// averaged prediction passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub randomization: RandomizationParams,
    /// Patterns averaged per prediction.
    #[serde(default = "default_n_iterations")]
    pub n_iterations: usize,
}

fn default_n_iterations() -> usize {
    1
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            randomization: RandomizationParams::default(),
            n_iterations: 1,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::Contract("n_iterations must be at least 1".into()));
        }
        self.randomization.validate()
    }
}

/// Sampled color factors; identity values disable each transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorFactors {
    pub brightness: f64,
    pub saturation: f64,
    pub hue: f64,
    pub contrast: f64,
}

impl ColorFactors {
    pub fn identity() -> Self {
        Self {
            brightness: 0.0,
            saturation: 1.0,
            hue: 0.0,
            contrast: 1.0,
        }
    }
}

/// One concrete instantiation of the randomization layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub resize_to: usize,
    pub pad_left: usize,
    pub pad_top: usize,
    #[serde(default)]
    pub flip: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<ColorFactors>,
}

impl PatternSpec {
    pub fn geometric(resize_to: usize, pad_left: usize, pad_top: usize) -> Self {
        Self {
            resize_to,
            pad_left,
            pad_top,
            flip: false,
            color: None,
        }
    }

    pub fn validate(&self, pad_to: usize) -> Result<()> {
        if self.resize_to == 0 {
            return Err(Error::Contract("resize target must be positive".into()));
        }
        if self.resize_to + self.pad_left > pad_to || self.resize_to + self.pad_top > pad_to {
            return Err(Error::Contract(format!(
                "pattern {}+({},{}) does not fit canvas {pad_to}",
                self.resize_to, self.pad_left, self.pad_top
            )));
        }
        Ok(())
    }
}

/// Number of geometric (resize, pad-offset) patterns:
/// the sum over resize targets of `(pad_to - rnd + 1)^2`.
pub fn count_patterns(params: &RandomizationParams) -> Result<u64> {
    params.validate()?;
    let t = params.pad_to as u64;
    let mut total = 0u64;
    for rnd in params.resize_min..params.resize_max_exclusive {
        let slots = t - rnd as u64 + 1;
        total += slots * slots;
    }
    Ok(total)
}

/// Draws one pattern. Draw order is fixed (resize, left, top, flip, then the
/// enabled color factors), so a given rng stream always yields the same
/// pattern sequence.
pub fn sample_pattern<R: Rng>(params: &RandomizationParams, rng: &mut R) -> Result<PatternSpec> {
    params.validate()?;
    let rnd = rng.gen_range(params.resize_min..params.resize_max_exclusive);
    let max_off = params.pad_to - rnd;
    let left = rng.gen_range(0..=max_off);
    let top = rng.gen_range(0..=max_off);
    let flip = params.flip_prob > 0.0 && rng.gen::<f64>() < params.flip_prob;
    let color = match &params.color_jitter {
        None => None,
        Some(j) if j.is_empty() => None,
        Some(j) => {
            let mut f = ColorFactors::identity();
            if let Some(d) = j.brightness {
                f.brightness = rng.gen_range(-d..=d);
            }
            if let Some((lo, hi)) = j.saturation {
                f.saturation = rng.gen_range(lo..=hi);
            }
            if let Some(t) = j.hue {
                f.hue = rng.gen_range(-t..=t);
            }
            if let Some((lo, hi)) = j.contrast {
                f.contrast = rng.gen_range(lo..=hi);
            }
            Some(f)
        }
    };
    Ok(PatternSpec {
        resize_to: rnd,
        pad_left: left,
        pad_top: top,
        flip,
        color,
    })
}

/// Applies a pattern on the tape: flip, bilinear resize, zero-pad, color
/// jitter, clamp. Differentiable with respect to the image. Identity factors
/// skip their ops so the identity pattern is a bit-level identity.
pub fn apply_pattern_on_tape(
    tape: &mut Tape,
    image: Value,
    spec: &PatternSpec,
    pad_to: usize,
) -> Result<Value> {
    spec.validate(pad_to)?;
    let mut v = image;
    if spec.flip {
        v = tape.flip_h(v)?;
    }
    v = tape.bilinear_resize(v, spec.resize_to)?;
    v = tape.pad_zero(v, pad_to, spec.pad_left, spec.pad_top)?;
    if let Some(color) = &spec.color {
        if color.brightness != 0.0 {
            v = tape.add_scalar(v, color.brightness);
        }
        if color.saturation != 1.0 || color.hue != 0.0 {
            v = tape.adjust_sat_hue(v, color.saturation, color.hue)?;
        }
        if color.contrast != 1.0 {
            v = tape.adjust_contrast(v, color.contrast)?;
        }
    }
    tape.clamp(v, 0.0, 1.0)
}

/// Plain-value pattern application.
pub fn apply_pattern(image: &Tensor, spec: &PatternSpec, pad_to: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let out = apply_pattern_on_tape(&mut tape, x, spec, pad_to)?;
    Ok(tape.tensor(out))
}

/// Brightness: `x + delta`, clamped to [0,1].
pub fn adjust_brightness(image: &Tensor, delta: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let shifted = tape.add_scalar(x, delta);
    let out = tape.clamp(shifted, 0.0, 1.0)?;
    Ok(tape.tensor(out))
}

/// Saturation: scale the HSV saturation by `alpha`, clamped to [0,1].
pub fn adjust_saturation(image: &Tensor, alpha: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let adj = tape.adjust_sat_hue(x, alpha, 0.0)?;
    let out = tape.clamp(adj, 0.0, 1.0)?;
    Ok(tape.tensor(out))
}

/// Hue: shift the HSV hue by `theta` (fraction of a turn, modulo 1).
pub fn adjust_hue(image: &Tensor, theta: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let adj = tape.adjust_sat_hue(x, 1.0, theta)?;
    let out = tape.clamp(adj, 0.0, 1.0)?;
    Ok(tape.tensor(out))
}

/// Contrast: per-channel mean `m`, then `m + beta * (x - m)`, clamped.
pub fn adjust_contrast(image: &Tensor, beta: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let adj = tape.adjust_contrast(x, beta)?;
    let out = tape.clamp(adj, 0.0, 1.0)?;
    Ok(tape.tensor(out))
}

/// Randomized prediction: draw `n_iterations` patterns, average the softmax
/// probability vectors, return the argmax (ties to the lowest class index)
/// and the mean vector.
pub fn randomized_predict<R: Rng>(
    weights: &ModelWeights,
    image: &Tensor,
    params: &RandomizationParams,
    n_iterations: usize,
    rng: &mut R,
) -> Result<(usize, Vec<f64>)> {
    if n_iterations == 0 {
        return Err(Error::Contract("n_iterations must be at least 1".into()));
    }
    params.validate()?;
    let mut mean = vec![0.0; weights.arch.num_classes];
    for _ in 0..n_iterations {
        let spec = sample_pattern(params, rng)?;
        let mut tape = Tape::new();
        let x = tape.constant(image);
        let transformed = apply_pattern_on_tape(&mut tape, x, &spec, params.pad_to)?;
        let logits = forward_logits_on_tape(&mut tape, weights, transformed)?;
        let probs = softmax(tape.data(logits));
        for (m, p) in mean.iter_mut().zip(&probs) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= n_iterations as f64;
    }
    Ok((argmax(&mean), mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelArch};
    use crate::tensor::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn pattern_counts_match_the_published_configurations() {
        let large = RandomizationParams {
            base_side: 299,
            resize_min: 299,
            resize_max_exclusive: 331,
            pad_to: 331,
            ..RandomizationParams::default()
        };
        assert_eq!(count_patterns(&large).unwrap(), 12528);

        let one_pixel_pad = RandomizationParams {
            base_side: 330,
            resize_min: 330,
            resize_max_exclusive: 331,
            pad_to: 331,
            ..RandomizationParams::default()
        };
        assert_eq!(count_patterns(&one_pixel_pad).unwrap(), 4);

        let one_pixel_resize = RandomizationParams {
            base_side: 330,
            resize_min: 331,
            resize_max_exclusive: 332,
            pad_to: 331,
            ..RandomizationParams::default()
        };
        assert_eq!(count_patterns(&one_pixel_resize).unwrap(), 1);
    }

    #[test]
    fn count_matches_exhaustive_enumeration_for_small_canvases() {
        for pad_to in 1..=40usize {
            for resize_min in 1..=pad_to {
                for resize_max in resize_min + 1..=pad_to + 1 {
                    let params = RandomizationParams {
                        base_side: resize_min,
                        resize_min,
                        resize_max_exclusive: resize_max,
                        pad_to,
                        ..RandomizationParams::default()
                    };
                    let mut brute = 0u64;
                    for rnd in resize_min..resize_max {
                        for left in 0..=pad_to - rnd {
                            for top in 0..=pad_to - rnd {
                                let spec = PatternSpec::geometric(rnd, left, top);
                                assert!(spec.validate(pad_to).is_ok());
                                brute += 1;
                            }
                        }
                    }
                    assert_eq!(count_patterns(&params).unwrap(), brute);
                }
            }
        }
    }

    #[test]
    fn downscaling_range_has_the_same_freedom_as_upscaling() {
        let up = RandomizationParams::default(); // [28,36) -> 36
        let down = RandomizationParams {
            base_side: 28,
            resize_min: 20,
            resize_max_exclusive: 28,
            pad_to: 28,
            ..RandomizationParams::default()
        };
        assert_eq!(
            count_patterns(&up).unwrap(),
            count_patterns(&down).unwrap()
        );
    }

    #[test]
    fn single_pattern_range_samples_the_identity() {
        let params = RandomizationParams::identity(16);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..10 {
            let spec = sample_pattern(&params, &mut rng).unwrap();
            assert_eq!(spec, PatternSpec::geometric(16, 0, 0));
        }
    }

    #[test]
    fn four_pattern_case_is_sampled_uniformly() {
        let params = RandomizationParams {
            base_side: 330,
            resize_min: 330,
            resize_max_exclusive: 331,
            pad_to: 331,
            ..RandomizationParams::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut counts = [0u32; 4];
        let n = 1_000_000;
        for _ in 0..n {
            let s = sample_pattern(&params, &mut rng).unwrap();
            counts[s.pad_left * 2 + s.pad_top] += 1;
        }
        for &c in &counts {
            let freq = f64::from(c) / f64::from(n);
            assert!(
                (freq - 0.25).abs() < 0.01,
                "pattern frequency {freq} strays from 25%"
            );
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let params = RandomizationParams {
            flip_prob: 0.5,
            color_jitter: Some(ColorJitter::full()),
            ..RandomizationParams::default()
        };
        let mut a = ChaCha12Rng::seed_from_u64(3);
        let mut b = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(
                sample_pattern(&params, &mut a).unwrap(),
                sample_pattern(&params, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn identity_pattern_is_a_bit_level_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let img = Tensor::new(
            vec![9, 9, 3],
            (0..9 * 9 * 3).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let spec = PatternSpec {
            resize_to: 9,
            pad_left: 0,
            pad_top: 0,
            flip: false,
            color: Some(ColorFactors::identity()),
        };
        let out = apply_pattern(&img, &spec, 9).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn one_pixel_source_fills_the_expected_canvas_cells() {
        let img = Tensor::new(vec![1, 1, 1], vec![0.37]).unwrap();
        let spec = PatternSpec::geometric(2, 1, 0);
        let out = apply_pattern(&img, &spec, 3).unwrap();
        assert_eq!(
            out.data(),
            &[0.0, 0.37, 0.37, 0.0, 0.37, 0.37, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn padding_preserves_pixel_energy() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let img = Tensor::new(
            vec![6, 6, 2],
            (0..72).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let spec = PatternSpec::geometric(6, 3, 2);
        let out = apply_pattern(&img, &spec, 10).unwrap();
        let sum_in: f64 = img.data().iter().sum();
        let sum_out: f64 = out.data().iter().sum();
        assert!((sum_in - sum_out).abs() < 1e-12);
    }

    #[test]
    fn pattern_output_stays_in_unit_range() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let params = RandomizationParams {
            flip_prob: 0.5,
            color_jitter: Some(ColorJitter::full()),
            base_side: 8,
            resize_min: 7,
            resize_max_exclusive: 11,
            pad_to: 12,
        };
        let img = Tensor::new(
            vec![8, 8, 3],
            (0..192).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        for _ in 0..40 {
            let spec = sample_pattern(&params, &mut rng).unwrap();
            let out = apply_pattern(&img, &spec, params.pad_to).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn oversized_pattern_is_rejected() {
        let img = Tensor::new(vec![4, 4, 1], vec![0.5; 16]).unwrap();
        let spec = PatternSpec::geometric(6, 2, 0);
        assert!(matches!(
            apply_pattern(&img, &spec, 7),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn model_through_pattern_gradient_matches_finite_differences() {
        let arch = ModelArch {
            input_side: 7,
            channels: 1,
            conv1_filters: 3,
            conv2_filters: 4,
            num_classes: 3,
        };
        let w = init_model(&arch, 21).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let img = Tensor::new(
            vec![7, 7, 1],
            (0..49).map(|_| rng.gen_range(0.1..0.9)).collect(),
        )
        .unwrap();
        let spec = PatternSpec {
            resize_to: 8,
            pad_left: 1,
            pad_top: 2,
            flip: true,
            color: None,
        };
        gradcheck::assert_gradients_match(
            &|tape, x| {
                let patterned = apply_pattern_on_tape(tape, x, &spec, 10)?;
                let logits = forward_logits_on_tape(tape, &w, patterned)?;
                tape.softmax_cross_entropy(logits, 2)
            },
            &img,
            gradcheck::DEFAULT_STEP,
            1e-4,
        );
    }

    #[test]
    fn color_ops_have_identity_factors() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let img = Tensor::new(
            vec![4, 4, 3],
            (0..48).map(|_| rng.gen_range(0.05..0.95)).collect(),
        )
        .unwrap();
        assert_eq!(adjust_brightness(&img, 0.0).unwrap().data(), img.data());
        let sat = adjust_saturation(&img, 1.0).unwrap();
        for (a, b) in sat.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let hue = adjust_hue(&img, 0.0).unwrap();
        for (a, b) in hue.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let con = adjust_contrast(&img, 1.0).unwrap();
        for (a, b) in con.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn brightness_clamps_at_the_top_of_the_range() {
        let img = Tensor::new(vec![1, 2, 1], vec![0.8, 0.8]).unwrap();
        let out = adjust_brightness(&img, 0.5).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0]);
    }

    #[test]
    fn hue_shift_by_a_third_turn_rotates_primaries() {
        let img = Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let out = adjust_hue(&img, 1.0 / 3.0).unwrap();
        assert!((out.data()[0] - 0.0).abs() < 1e-12);
        assert!((out.data()[1] - 1.0).abs() < 1e-12);
        assert!((out.data()[2] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn hue_and_saturation_require_three_channels() {
        let gray = Tensor::new(vec![2, 2, 1], vec![0.5; 4]).unwrap();
        assert!(matches!(
            adjust_hue(&gray, 0.1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            adjust_saturation(&gray, 1.2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_identity_pattern_prediction_matches_bare_forward() {
        let arch = ModelArch {
            input_side: 8,
            channels: 1,
            conv1_filters: 3,
            conv2_filters: 4,
            num_classes: 5,
        };
        let w = init_model(&arch, 33).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(34);
        let img = Tensor::new(vec![8, 8, 1], (0..64).map(|_| rng.gen()).collect()).unwrap();
        let params = RandomizationParams::identity(8);
        let mut prng = ChaCha12Rng::seed_from_u64(1);
        let (class, probs) = randomized_predict(&w, &img, &params, 1, &mut prng).unwrap();
        assert_eq!(class, crate::model::predict(&w, &img).unwrap());
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mean_probability_vector_is_normalized() {
        let w = init_model(
            &ModelArch {
                input_side: 8,
                channels: 1,
                conv1_filters: 2,
                conv2_filters: 3,
                num_classes: 4,
            },
            1,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let img = Tensor::new(vec![8, 8, 1], (0..64).map(|_| rng.gen()).collect()).unwrap();
        let params = RandomizationParams {
            base_side: 8,
            resize_min: 8,
            resize_max_exclusive: 11,
            pad_to: 11,
            flip_prob: 0.5,
            color_jitter: None,
        };
        let (_, probs) = randomized_predict(&w, &img, &params, 7, &mut rng).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
