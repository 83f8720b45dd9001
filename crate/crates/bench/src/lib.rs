//! Shared fixtures for the benchmark targets.

use ferntrack_core::cascade::{train_cascade, CascadeConfig, CascadeModel, TrainingFrame};
use ferntrack_core::nalgebra::DMatrix;
use ferntrack_core::synthscene::{
    generate_sequence, make_toy_model, SceneSequence, SequenceConfig, ToyModel, ToyModelSpec,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_appearance(rows: usize, cols: usize, seed: u64) -> DMatrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0f32..1.0))
}

pub fn random_targets(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn bench_toy() -> ToyModel {
    make_toy_model(&ToyModelSpec {
        vertex_count: 200,
        identity_rank: 6,
        expression_rank: 6,
        landmark_count: 32,
        seed: 7,
        ..ToyModelSpec::default()
    })
    .expect("toy model")
}

pub fn bench_scene(toy: &ToyModel, frames: usize, seed: u64) -> SceneSequence {
    generate_sequence(toy, &SequenceConfig::default(), frames, seed).expect("scene")
}

/// A small trained cascade plus one sequence for runtime benchmarks.
pub fn bench_cascade(toy: &ToyModel) -> (CascadeModel, SceneSequence) {
    let mut frames = Vec::new();
    for s in 0..2 {
        let seq = bench_scene(toy, 15, 100 + s);
        for (image, truth) in seq.frames.iter().cloned().zip(seq.ground_truth.iter().cloned()) {
            frames.push(TrainingFrame {
                image,
                truth,
                statics: seq.statics.clone(),
            });
        }
    }
    let config = CascadeConfig {
        stages: 3,
        depth: 4,
        feature_count: 120,
        runtime_initializations: 10,
        seed: 3,
        ..CascadeConfig::default()
    };
    let (model, _) = train_cascade(&toy.shape, &toy.prior_sigmas, &frames, &config).expect("train");
    (model, bench_scene(toy, 30, 999))
}
