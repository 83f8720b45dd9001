use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use ferntrack_bench::{bench_cascade, bench_toy, random_appearance, random_targets};
use ferntrack_core::cascade::track_frame;
use ferntrack_core::ferns::{train_boosted, BoostConfig};
use ferntrack_core::gombf::{global_optimize, train_modular, ModalityLayout};
use ferntrack_core::linalg::SpdFactor;
use ferntrack_core::nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn boosted_ferns(c: &mut Criterion) {
    let x = random_appearance(2000, 200, 1);
    let targets = random_targets(2000, 64, 2);
    let config = BoostConfig {
        fern_count: 8,
        depth: 5,
        shrinkage: 1000.0,
    };
    c.bench_function("train_boosted_8x5_2000x200", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(42),
            |mut rng| train_boosted(&x, &targets, &config, &mut rng).unwrap(),
            BatchSize::LargeInput,
        )
    });

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = train_boosted(&x, &targets, &config, &mut rng).unwrap();
    let probe: Vec<f32> = (0..200).map(|c| x[(17, c)]).collect();
    c.bench_function("predict_boosted_8x5", |b| {
        b.iter(|| model.predict(black_box(&probe)).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let x = random_appearance(3000, 120, 3);
    let targets = random_targets(3000, 40, 4);
    let layout = ModalityLayout::new(vec![
        ferntrack_core::gombf::ModalityGroup { name: "a".into(), offset: 0, width: 10, fern_count: 10 },
        ferntrack_core::gombf::ModalityGroup { name: "b".into(), offset: 10, width: 30, fern_count: 10 },
    ])
    .unwrap();
    let config = BoostConfig {
        fern_count: 0,
        depth: 5,
        shrinkage: 1000.0,
    };
    let model = train_modular(&x, &targets, &layout, &config, 5).unwrap();
    c.bench_function("global_optimize_20x32_leaves", |b| {
        b.iter_batched(
            || model.clone(),
            |mut m| global_optimize(&mut m, &x, &targets, 1.0).unwrap(),
            BatchSize::LargeInput,
        )
    });

    let spd = {
        let m = random_targets(640, 640, 6);
        &m * m.transpose() + DMatrix::identity(640, 640) * 640.0
    };
    c.bench_function("spd_factor_640", |b| {
        b.iter_batched(
            || spd.clone(),
            |a| SpdFactor::new(a).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn tracking(c: &mut Criterion) {
    let toy = bench_toy();
    let (model, scene) = bench_cascade(&toy);
    let previous = scene.ground_truth[0].clone();
    c.bench_function("track_frame_T3_M120_L10", |b| {
        b.iter(|| {
            track_frame(
                &model,
                black_box(&scene.frames[5]),
                black_box(&previous),
                &scene.statics,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, boosted_ferns, fusion, tracking);
criterion_main!(benches);
