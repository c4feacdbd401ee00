//! Training loops (plain and adversarial) and the correct-subset selector.
//!
//! Training is plain SGD with seeded shuffling. Per-example gradients within a
//! batch may be computed on worker threads, but they are reduced in index
//! order, so the resulting weights are bit-identical for any worker count.

use super::{forward_with_weights, place_weights, ModelWeights};
use crate::attack::{fgsm, PlainTarget};
use crate::error::{Error, Result};
use crate::model::LabeledDataset;
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// SGD schedule with classical momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            lr: 0.2,
            momentum: 0.9,
            batch_size: 32,
            seed: 1,
        }
    }
}

/// Adversarial-training schedule: each batch swaps a fraction of its examples
/// for FGSM examples generated against the current weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvTrainConfig {
    pub base: TrainConfig,
    /// Per-example step sizes drawn uniformly; pixel scale in (0,1).
    pub epsilons: Vec<f64>,
    /// Fraction of each batch replaced with adversarial examples, in [0,1].
    pub mix_fraction: f64,
}

impl Default for AdvTrainConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            epsilons: vec![2.0 / 255.0, 5.0 / 255.0, 10.0 / 255.0],
            mix_fraction: 0.5,
        }
    }
}

pub fn train(
    weights: &ModelWeights,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    run_sgd(weights, dataset, cfg, None)
}

pub fn adversarial_train(
    weights: &ModelWeights,
    dataset: &LabeledDataset,
    cfg: &AdvTrainConfig,
) -> Result<ModelWeights> {
    if !(0.0..=1.0).contains(&cfg.mix_fraction) {
        return Err(Error::Contract(format!(
            "mix_fraction {} outside [0,1]",
            cfg.mix_fraction
        )));
    }
    if cfg.epsilons.is_empty() && cfg.mix_fraction > 0.0 {
        return Err(Error::Contract("empty epsilon list".into()));
    }
    if let Some(&eps) = cfg.epsilons.iter().find(|&&e| !(0.0 < e && e < 1.0)) {
        return Err(Error::Contract(format!("epsilon {eps} outside (0,1)")));
    }
    let mut out = run_sgd(weights, dataset, &cfg.base, Some(cfg))?;
    out.adversarially_trained = true;
    Ok(out)
}

fn run_sgd(
    weights: &ModelWeights,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    adv: Option<&AdvTrainConfig>,
) -> Result<ModelWeights> {
    if dataset.is_empty() {
        return Err(Error::Contract("training dataset is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.lr <= 0.0 {
        return Err(Error::Contract(
            "epochs, batch size, and learning rate must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Contract(format!(
            "momentum {} outside [0,1)",
            cfg.momentum
        )));
    }
    dataset.validate(weights.arch.num_classes)?;

    let mut current = weights.clone();
    let mut velocity: Vec<Vec<f64>> = current
        .tensors()
        .iter()
        .map(|(_, t)| vec![0.0; t.numel()])
        .collect();
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    // Separate stream so the shuffle sequence is unchanged by the mix.
    let mut adv_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0xadf0_5eed);

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut items: Vec<(Tensor, usize)> = batch
                .iter()
                .map(|&i| (dataset.images[i].clone(), dataset.labels[i]))
                .collect();

            if let Some(advcfg) = adv {
                let n_adv =
                    ((advcfg.mix_fraction * items.len() as f64).round() as usize).min(items.len());
                let target = PlainTarget::new(&current);
                for item in items.iter_mut().take(n_adv) {
                    let eps = advcfg.epsilons[adv_rng.gen_range(0..advcfg.epsilons.len())];
                    let res = fgsm(&target, &item.0, item.1, eps)?;
                    item.0 = res.adversarial;
                }
            }

            let grads: Vec<Result<Vec<Vec<f64>>>> = items
                .par_iter()
                .map(|(img, label)| example_gradients(&current, img, *label))
                .collect();

            let n_items = items.len() as f64;
            let mut tensors: Vec<(String, Tensor)> = current.tensors().to_vec();
            let mut accum: Vec<Vec<f64>> = tensors
                .iter()
                .map(|(_, t)| vec![0.0; t.numel()])
                .collect();
            for g in grads {
                let g = g?;
                for (acc, layer) in accum.iter_mut().zip(&g) {
                    for (a, v) in acc.iter_mut().zip(layer) {
                        *a += v;
                    }
                }
            }
            for (((name, t), acc), vel) in tensors.iter_mut().zip(&accum).zip(&mut velocity) {
                let data: Vec<f64> = t
                    .data()
                    .iter()
                    .zip(acc)
                    .zip(vel.iter_mut())
                    .map(|((&w, &g), v)| {
                        *v = cfg.momentum * *v + g / n_items;
                        w - cfg.lr * *v
                    })
                    .collect();
                *t = Tensor::new(t.shape().to_vec(), data)
                    .map_err(|_| Error::Numeric(format!("non-finite update in {name}")))?;
            }
            current = current.replace_tensors(tensors);
        }
    }
    current.training_seed = cfg.seed;
    Ok(current)
}

fn example_gradients(
    weights: &ModelWeights,
    image: &Tensor,
    label: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let wv = place_weights(&mut tape, weights, true);
    let x = tape.constant(image);
    let logits = forward_with_weights(&mut tape, &weights.arch, &wv, x)?;
    let loss = tape.softmax_cross_entropy(logits, label)?;
    let grads = tape.backward(loss)?;
    Ok(wv.iter().map(|&v| grads.get(v).data().to_vec()).collect())
}

/// Mean training loss over a dataset; used by tests to confirm descent.
pub(crate) fn mean_loss(weights: &ModelWeights, dataset: &LabeledDataset) -> Result<f64> {
    let mut total = 0.0;
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        let mut tape = Tape::new();
        let x = tape.constant(img);
        let logits = super::forward_logits_on_tape(&mut tape, weights, x)?;
        let loss = tape.softmax_cross_entropy(logits, label)?;
        total += tape.data(loss)[0];
    }
    Ok(total / dataset.len() as f64)
}

/// Top-1 accuracy of frozen weights over a dataset.
pub fn accuracy(weights: &ModelWeights, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("accuracy over empty dataset".into()));
    }
    let correct: Vec<bool> = dataset
        .images
        .par_iter()
        .zip(&dataset.labels)
        .map(|(img, &label)| super::predict(weights, img).map(|p| p == label))
        .collect::<Result<_>>()?;
    Ok(correct.iter().filter(|&&c| c).count() as f64 / dataset.len() as f64)
}

/// Seeded random subset of `n` images classified correctly by every model.
///
/// Selected indices keep their dataset order. Errors when fewer than `n`
/// images qualify, reporting the qualifying count.
pub fn select_correct_subset(
    models: &[&ModelWeights],
    dataset: &LabeledDataset,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if models.is_empty() {
        return Err(Error::Contract("no models to select against".into()));
    }
    let qualifying: Vec<usize> = (0..dataset.len())
        .into_par_iter()
        .map(|i| -> Result<Option<usize>> {
            for m in models {
                if super::predict(m, &dataset.images[i])? != dataset.labels[i] {
                    return Ok(None);
                }
            }
            Ok(Some(i))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if qualifying.len() < n {
        return Err(Error::Contract(format!(
            "only {} of {} images are classified correctly by all models (need {n})",
            qualifying.len(),
            dataset.len()
        )));
    }
    let mut pool = qualifying;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pool.into_iter().take(n).collect();
    chosen.sort_unstable();
    Ok(dataset.subset(&chosen))
}
