#![allow(dead_code)]

use cifm::data::{EncodedBatch, EncodedSplit, Target, TaskKind};
use cifm::encoder::{Backbone, EncoderConfig, Model};
use cifm::estimators::MineConfig;
use cifm::objective::{MiEstimator, ObjectiveConfig, StepSeeds};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 30;

pub fn tiny(backbone: Backbone) -> EncoderConfig {
    EncoderConfig {
        vocab_size: VOCAB,
        dim: 6,
        hidden: 8,
        heads: 2,
        blocks: 2,
        ffn: 7,
        max_positions: 12,
        ..EncoderConfig::new(backbone)
    }
}

pub fn model(backbone: Backbone, outputs: usize, seed: u64) -> Model {
    Model::new(tiny(backbone), outputs, seed).unwrap()
}

pub fn with_critic(mut m: Model, seed: u64) -> Model {
    m.attach_critic(&MineConfig { hidden: 4, ..Default::default() }, seed).unwrap();
    m
}

/// `n` random sequences of 2..=6 tokens; the transformer ones start with `[CLS]`.
pub fn sequences(backbone: Backbone, n: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=6);
            let mut s: Vec<usize> = (0..len).map(|_| rng.random_range(2..VOCAB)).collect();
            if backbone == Backbone::Transformer {
                s[0] = cifm::data::CLS_ID;
            }
            s
        })
        .collect()
}

pub fn class_batch(backbone: Backbone, n: usize, classes: usize, seed: u64) -> EncodedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = sequences(backbone, n, &mut rng);
    let targets = (0..n).map(|i| Target::Class(i % classes)).collect();
    EncodedSplit { sequences, targets }.batch(&(0..n).collect::<Vec<_>>(), 1)
}

pub fn value_batch(backbone: Backbone, n: usize, dims: usize, seed: u64) -> EncodedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequences = sequences(backbone, n, &mut rng);
    let targets = (0..n).map(|_| Target::Scores((0..dims).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
    EncodedSplit { sequences, targets }.batch(&(0..n).collect::<Vec<_>>(), 1)
}

pub fn seeds(n: usize, seed: u64) -> StepSeeds {
    StepSeeds::draw(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

pub fn objective(estimator: MiEstimator, beta: f64) -> ObjectiveConfig {
    ObjectiveConfig { beta, mi_estimator: estimator, ..ObjectiveConfig::baseline(TaskKind::Classification) }
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

/// Move every weight off its initial value. Zero-initialized biases put
/// ReLU inputs exactly on the kink, where finite differences are meaningless.
pub fn jitter(m: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in m.params.tensors_mut() {
        t.mapv_inplace(|v| v + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal));
    }
    if let Some(c) = m.critic.as_mut() {
        for t in c.params.tensors_mut() {
            t.mapv_inplace(|v| v + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
    }
}
