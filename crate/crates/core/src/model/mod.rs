//! A small convolutional classifier that accepts any square input side.
//!
//! The fixed layer stack is conv(3x3)-relu-conv(3x3)-relu-global-average-pool-
//! dense. Global average pooling absorbs the spatial size, so one trained
//! weight set classifies the base side, every resized side, and every padded
//! canvas without retraining. The stack is bias-free: zero-padded regions
//! contribute exactly nothing to the pooled features, which keeps padding from
//! shifting logits through bias terms.

mod dataset;
mod train;

pub use dataset::{synthetic_dataset, LabeledDataset, SyntheticSpec};
pub use train::{
    accuracy, adversarial_train, select_correct_subset, train, AdvTrainConfig, TrainConfig,
};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Smallest input side the two 3x3 convolutions accept.
pub const MIN_INPUT_SIDE: usize = 5;

/// Architecture parameters; the layer sequence itself is fixed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    /// Base image side the model is trained on.
    pub input_side: usize,
    /// Input channels (1 grayscale, 3 color).
    pub channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub num_classes: usize,
}

impl Default for ModelArch {
    fn default() -> Self {
        Self {
            input_side: 28,
            channels: 1,
            conv1_filters: 8,
            conv2_filters: 16,
            num_classes: 10,
        }
    }
}

impl ModelArch {
    /// Stable identity string embedded in weight files.
    pub fn fingerprint(&self) -> String {
        format!(
            "conv3x3x{}-relu-conv3x3x{}-relu-gap-dense{}/in{}x{}x{}",
            self.conv1_filters,
            self.conv2_filters,
            self.num_classes,
            self.input_side,
            self.input_side,
            self.channels
        )
    }

    fn validate(&self) -> Result<()> {
        if self.input_side < MIN_INPUT_SIDE {
            return Err(Error::Contract(format!(
                "input side {} below minimum {MIN_INPUT_SIDE}",
                self.input_side
            )));
        }
        if self.channels == 0
            || self.conv1_filters == 0
            || self.conv2_filters == 0
            || self.num_classes == 0
        {
            return Err(Error::Contract(
                "architecture fields must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered, named weight tensors plus provenance flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub arch: ModelArch,
    tensors: Vec<(String, Tensor)>,
    pub training_seed: u64,
    pub adversarially_trained: bool,
}

impl ModelWeights {
    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn from_parts(
        arch: ModelArch,
        tensors: Vec<(String, Tensor)>,
        training_seed: u64,
        adversarially_trained: bool,
    ) -> Result<Self> {
        let expect = expected_shapes(&arch);
        if tensors.len() != expect.len() {
            return Err(Error::Contract(format!(
                "expected {} weight tensors, got {}",
                expect.len(),
                tensors.len()
            )));
        }
        for ((name, t), (ename, eshape)) in tensors.iter().zip(&expect) {
            if name != ename || t.shape() != &eshape[..] {
                return Err(Error::Contract(format!(
                    "weight tensor {name} {:?} does not match architecture ({ename} {eshape:?})",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            arch,
            tensors,
            training_seed,
            adversarially_trained,
        })
    }

    pub(crate) fn replace_tensors(&self, tensors: Vec<(String, Tensor)>) -> Self {
        Self {
            arch: self.arch.clone(),
            tensors,
            training_seed: self.training_seed,
            adversarially_trained: self.adversarially_trained,
        }
    }
}

fn expected_shapes(arch: &ModelArch) -> Vec<(String, Vec<usize>)> {
    vec![
        (
            "conv1".into(),
            vec![3, 3, arch.channels, arch.conv1_filters],
        ),
        (
            "conv2".into(),
            vec![3, 3, arch.conv1_filters, arch.conv2_filters],
        ),
        ("dense".into(), vec![arch.num_classes, arch.conv2_filters]),
    ]
}

/// Deterministic weight initialization: each layer uniform in `[-s, s]` with
/// `s = sqrt(6 / (fan_in + fan_out))`.
pub fn init_model(arch: &ModelArch, seed: u64) -> Result<ModelWeights> {
    arch.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, shape) in expected_shapes(arch) {
        let (fan_in, fan_out) = match name.as_str() {
            "conv1" => (9 * arch.channels, 9 * arch.conv1_filters),
            "conv2" => (9 * arch.conv1_filters, 9 * arch.conv2_filters),
            _ => (arch.conv2_filters, arch.num_classes),
        };
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * s)
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(ModelWeights {
        arch: arch.clone(),
        tensors,
        training_seed: seed,
        adversarially_trained: false,
    })
}

/// Places the weight tensors on a tape, optionally as gradient leaves.
pub fn place_weights(tape: &mut Tape, weights: &ModelWeights, trainable: bool) -> Vec<Value> {
    weights
        .tensors
        .iter()
        .map(|(_, t)| {
            if trainable {
                tape.leaf(&t.clone().with_grad())
            } else {
                tape.constant(t)
            }
        })
        .collect()
}

/// Forward pass over already-placed weights. `image` may be any square side
/// at or above [`MIN_INPUT_SIDE`]; the output is always `[num_classes]`.
pub fn forward_with_weights(
    tape: &mut Tape,
    arch: &ModelArch,
    weight_values: &[Value],
    image: Value,
) -> Result<Value> {
    let shape = tape.shape(image).to_vec();
    if shape.len() != 3 || shape[2] != arch.channels {
        return Err(Error::Dimension(format!(
            "model expects [side,side,{}], got {shape:?}",
            arch.channels
        )));
    }
    if shape[0] != shape[1] || shape[0] < MIN_INPUT_SIDE {
        return Err(Error::Dimension(format!(
            "input side must be square and >= {MIN_INPUT_SIDE}, got {shape:?}"
        )));
    }
    let a1 = tape.conv2d(image, weight_values[0], 1)?;
    let a1 = tape.relu(a1);
    let a2 = tape.conv2d(a1, weight_values[1], 1)?;
    let a2 = tape.relu(a2);
    let pooled = tape.global_avg_pool(a2)?;
    let col = tape.reshape(pooled, vec![arch.conv2_filters, 1])?;
    let logits = tape.matmul(weight_values[2], col)?;
    tape.reshape(logits, vec![arch.num_classes])
}

/// Forward pass with frozen weights, recording only the image on the tape.
pub fn forward_logits_on_tape(
    tape: &mut Tape,
    weights: &ModelWeights,
    image: Value,
) -> Result<Value> {
    let wv = place_weights(tape, weights, false);
    forward_with_weights(tape, &weights.arch, &wv, image)
}

/// Convenience forward pass returning the logits as a plain tensor.
pub fn forward_logits(weights: &ModelWeights, image: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(image);
    let logits = forward_logits_on_tape(&mut tape, weights, x)?;
    Ok(tape.tensor(logits))
}

/// Top-1 prediction for one image.
pub fn predict(weights: &ModelWeights, image: &Tensor) -> Result<usize> {
    Ok(crate::tensor::argmax(forward_logits(weights, image)?.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = ModelArch::default();
        let a = init_model(&arch, 7).unwrap();
        let b = init_model(&arch, 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&arch, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_is_size_polymorphic() {
        let arch = ModelArch {
            input_side: 12,
            ..ModelArch::default()
        };
        let w = init_model(&arch, 1).unwrap();
        for side in [12, 13, 20] {
            let img = Tensor::zeros(vec![side, side, 1]);
            let logits = forward_logits(&w, &img).unwrap();
            assert_eq!(logits.shape(), &[10]);
        }
    }

    #[test]
    fn forward_rejects_tiny_inputs() {
        let w = init_model(&ModelArch::default(), 1).unwrap();
        let img = Tensor::zeros(vec![4, 4, 1]);
        assert!(matches!(forward_logits(&w, &img), Err(Error::Dimension(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let w = init_model(&ModelArch::default(), 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let img = Tensor::new(
            vec![28, 28, 1],
            (0..28 * 28).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let a = forward_logits(&w, &img).unwrap();
        let b = forward_logits(&w, &img).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let arch = ModelArch {
            input_side: 8,
            channels: 1,
            conv1_filters: 3,
            conv2_filters: 4,
            num_classes: 3,
        };
        let w = init_model(&arch, 11).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let img =
            Tensor::new(vec![8, 8, 1], (0..64).map(|_| rng.gen::<f64>()).collect()).unwrap();
        gradcheck::assert_gradients_match(
            &|tape, x| {
                let logits = forward_logits_on_tape(tape, &w, x)?;
                tape.softmax_cross_entropy(logits, 1)
            },
            &img,
            gradcheck::DEFAULT_STEP,
            1e-4,
        );
    }
}
