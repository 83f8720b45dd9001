//! Cascade training and runtime tracking.
//!
//! Training synthesizes guess-truth pairs per image (expression guesses
//! borrowed from other images, Gaussian pose perturbations), then per stage:
//! index feature points barycentrically against the mean landmarks of the
//! current estimates, extract appearance vectors, regress the remaining
//! increment with a modality-grouped (or monolithic) boosted-ferns model,
//! and advance every sample. Tracking runs the stages from several
//! initializations seeded with the nearest expression vectors from the
//! training bank and averages the outputs.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Point2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::delaunay::{barycentric, locate, triangulate, Triangle};
use crate::error::{check_dim, Error, Result};
use crate::ferns::{AppearanceMatrix, BoostConfig};
use crate::gombf::{global_optimize, train_modular, GombfModel, ModalityLayout};
use crate::image::GrayImage;
use crate::metrics::normalized_landmark_error;
use crate::rng::{derive_seed, stream_rng};
use crate::shape_model::{
    interocular_distance, Camera, MotionParams, ParametricShapeModel, StaticParams,
};

/// One feature point stored as affine weights over a landmark triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoint {
    pub triangle: usize,
    pub bary: [f64; 3],
}

/// Barycentric feature-point index for one cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndexer {
    reference_landmarks: Vec<Point2<f64>>,
    triangles: Vec<Triangle>,
    points: Vec<FeaturePoint>,
}

impl FeatureIndexer {
    pub fn from_parts(
        reference_landmarks: Vec<Point2<f64>>,
        triangles: Vec<Triangle>,
        points: Vec<FeaturePoint>,
    ) -> Result<Self> {
        for tri in &triangles {
            if tri.iter().any(|&v| v >= reference_landmarks.len()) {
                return Err(Error::InvalidConfig("triangle index out of range".into()));
            }
        }
        for p in &points {
            if p.triangle >= triangles.len() {
                return Err(Error::InvalidConfig("feature point triangle out of range".into()));
            }
        }
        Ok(FeatureIndexer {
            reference_landmarks,
            triangles,
            points,
        })
    }

    pub fn reference_landmarks(&self) -> &[Point2<f64>] {
        &self.reference_landmarks
    }
    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }
    pub fn points(&self) -> &[FeaturePoint] {
        &self.points
    }
    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    /// Feature-point positions under the given landmark configuration.
    pub fn reconstruct(&self, landmarks: &[Point2<f64>]) -> Vec<Point2<f64>> {
        self.points
            .iter()
            .map(|p| {
                let tri = self.triangles[p.triangle];
                let (a, b, c) = (landmarks[tri[0]], landmarks[tri[1]], landmarks[tri[2]]);
                Point2::new(
                    p.bary[0] * a.x + p.bary[1] * b.x + p.bary[2] * c.x,
                    p.bary[0] * a.y + p.bary[1] * b.y + p.bary[2] * c.y,
                )
            })
            .collect()
    }
}

/// Sample feature points around the reference landmarks and index them by
/// barycentric coordinates against the landmarks' Delaunay triangulation.
/// Points outside every triangle attach to the nearest triangle centroid.
pub fn build_feature_indexer(
    mean_landmarks: &[Point2<f64>],
    count: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureIndexer> {
    if count == 0 {
        return Err(Error::InvalidConfig("feature count must be >= 1".into()));
    }
    let triangles = triangulate(mean_landmarks)?;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = mean_landmarks[rng.random_range(0..mean_landmarks.len())];
        let dx: f64 = rng.sample::<f64, _>(StandardNormal) * spread;
        let dy: f64 = rng.sample::<f64, _>(StandardNormal) * spread;
        let p = Point2::new(anchor.x + dx, anchor.y + dy);
        let t = locate(mean_landmarks, &triangles, p);
        let tri = triangles[t];
        let bary = barycentric(
            mean_landmarks[tri[0]],
            mean_landmarks[tri[1]],
            mean_landmarks[tri[2]],
            p,
        )?;
        points.push(FeaturePoint { triangle: t, bary });
    }
    FeatureIndexer::from_parts(mean_landmarks.to_vec(), triangles, points)
}

/// Appearance vector: reconstruct every feature point from the current
/// landmark estimate and sample the frame at the nearest pixel.
pub fn extract_appearance(
    image: &GrayImage,
    model: &ParametricShapeModel,
    alpha: &DVector<f64>,
    camera: &Camera,
    motion: &MotionParams,
    indexer: &FeatureIndexer,
) -> Result<Vec<f32>> {
    let landmarks = model.landmark_positions(alpha, camera, motion)?;
    Ok(indexer
        .reconstruct(&landmarks)
        .iter()
        .map(|p| image.sample_nearest(p.x, p.y) as f32)
        .collect())
}

/// One training image with its ground truth and per-subject statics.
#[derive(Debug, Clone)]
pub struct TrainingFrame {
    pub image: GrayImage,
    pub truth: MotionParams,
    pub statics: StaticParams,
}

/// A guess-truth pair: the ground truth of a frame and one perturbed
/// initial state.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub frame: usize,
    pub truth: MotionParams,
    pub initial: MotionParams,
}

/// Counts and scales of the guess-truth pair generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub expression_pairs: usize,
    pub rotation_pairs: usize,
    pub translation_pairs: usize,
    /// Std-dev of the Euler-angle noise, radians per axis.
    pub rotation_sigma: f64,
    /// Std-dev of the translation noise as a fraction of the model's
    /// bounding-sphere diameter, per axis.
    pub translation_sigma_factor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            expression_pairs: 30,
            rotation_pairs: 8,
            translation_pairs: 8,
            rotation_sigma: 0.1,
            translation_sigma_factor: 0.02,
        }
    }
}

/// Diameter of the bounding sphere of the mean shape around its centroid.
fn bounding_diameter(model: &ParametricShapeModel) -> f64 {
    let mean = model.identity_basis().column(0);
    let n = model.vertex_count();
    let mut centroid = Vector3::zeros();
    for v in 0..n {
        centroid += Vector3::new(mean[3 * v], mean[3 * v + 1], mean[3 * v + 2]);
    }
    centroid /= n as f64;
    let mut radius: f64 = 0.0;
    for v in 0..n {
        let p = Vector3::new(mean[3 * v], mean[3 * v + 1], mean[3 * v + 2]);
        radius = radius.max((p - centroid).norm());
    }
    2.0 * radius
}

/// Build guess-truth pairs per image: expression guesses borrow another
/// image's ground-truth expression, rotation/translation guesses add
/// Gaussian noise, and every guess starts with zero displacements.
pub fn generate_guess_truth_pairs(
    frames: &[TrainingFrame],
    model: &ParametricShapeModel,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    if noise.expression_pairs > 0 && frames.len() < 2 {
        return Err(Error::InvalidConfig(
            "expression guesses need at least 2 distinct images".into(),
        ));
    }
    let dims = model.motion_dims();
    let translation_sigma = noise.translation_sigma_factor * bounding_diameter(model);
    let mut rng = stream_rng(seed, "guess-truth", 0);
    let mut samples =
        Vec::with_capacity(frames.len() * (noise.expression_pairs + noise.rotation_pairs + noise.translation_pairs));

    for (i, frame) in frames.iter().enumerate() {
        check_dim("frame motion dims", dims.total(), frame.truth.as_vector().len())?;
        let truth = &frame.truth;
        let zero_d = DVector::zeros(2 * dims.landmarks);

        for _ in 0..noise.expression_pairs {
            let mut other = rng.random_range(0..frames.len() - 1);
            if other >= i {
                other += 1;
            }
            let initial = MotionParams::from_parts(
                frames[other].truth.expression(),
                truth.rotation(),
                truth.translation(),
                zero_d.clone(),
            )?;
            samples.push(TrainingSample {
                frame: i,
                truth: truth.clone(),
                initial,
            });
        }
        for _ in 0..noise.rotation_pairs {
            let jitter = Vector3::new(
                rng.sample::<f64, _>(StandardNormal) * noise.rotation_sigma,
                rng.sample::<f64, _>(StandardNormal) * noise.rotation_sigma,
                rng.sample::<f64, _>(StandardNormal) * noise.rotation_sigma,
            );
            let initial = MotionParams::from_parts(
                truth.expression(),
                truth.rotation() + jitter,
                truth.translation(),
                zero_d.clone(),
            )?;
            samples.push(TrainingSample {
                frame: i,
                truth: truth.clone(),
                initial,
            });
        }
        for _ in 0..noise.translation_pairs {
            let jitter = Vector3::new(
                rng.sample::<f64, _>(StandardNormal) * translation_sigma,
                rng.sample::<f64, _>(StandardNormal) * translation_sigma,
                rng.sample::<f64, _>(StandardNormal) * translation_sigma,
            );
            let initial = MotionParams::from_parts(
                truth.expression(),
                truth.rotation(),
                truth.translation() + jitter,
                zero_d.clone(),
            )?;
            samples.push(TrainingSample {
                frame: i,
                truth: truth.clone(),
                initial,
            });
        }
    }
    Ok(samples)
}

/// Which stage regressor the cascade trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorMode {
    /// Four modality groups with per-group fern budgets, fused globally.
    Grouped { fern_counts: [usize; 4] },
    /// One group over the whole target with no fusion step.
    Monolithic { fern_count: usize },
}

impl RegressorMode {
    pub fn total_ferns(&self) -> usize {
        match *self {
            RegressorMode::Grouped { fern_counts } => fern_counts.iter().sum(),
            RegressorMode::Monolithic { fern_count } => fern_count,
        }
    }
}

/// Cascade training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub stages: usize,
    pub depth: usize,
    pub mode: RegressorMode,
    pub feature_count: usize,
    pub shrinkage: f64,
    pub ridge_lambda: f64,
    /// Feature-point spread as a fraction of the reference inter-ocular
    /// distance.
    pub spread_factor: f64,
    pub runtime_initializations: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            stages: 6,
            depth: 5,
            mode: RegressorMode::Grouped { fern_counts: [20; 4] },
            feature_count: 200,
            shrinkage: 1000.0,
            ridge_lambda: 1.0,
            spread_factor: 0.15,
            runtime_initializations: 20,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

/// One trained stage: its feature index and its regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStage {
    pub indexer: FeatureIndexer,
    pub regressor: GombfModel,
}

/// Trained cascade plus everything tracking needs at runtime.
#[derive(Debug, Clone)]
pub struct CascadeModel {
    shape: ParametricShapeModel,
    camera: Camera,
    prior_sigmas: DVector<f64>,
    stages: Vec<CascadeStage>,
    expression_bank: Vec<DVector<f64>>,
    /// 3D landmark geometry per bank entry at mean identity; derived.
    bank_geometry: Vec<DVector<f64>>,
    runtime_initializations: usize,
}

impl CascadeModel {
    pub fn from_parts(
        shape: ParametricShapeModel,
        camera: Camera,
        prior_sigmas: DVector<f64>,
        stages: Vec<CascadeStage>,
        expression_bank: Vec<DVector<f64>>,
        runtime_initializations: usize,
    ) -> Result<Self> {
        check_dim("prior sigmas", shape.identity_rank(), prior_sigmas.len())?;
        for (t, stage) in stages.iter().enumerate() {
            check_dim(
                "stage regressor dimension",
                shape.motion_dims().total(),
                stage.regressor.total_dim(),
            )?;
            if stage.indexer.point_count() != stage.regressor.appearance_len() {
                return Err(Error::InvalidConfig(format!(
                    "stage {t}: indexer has {} points but regressor expects {}",
                    stage.indexer.point_count(),
                    stage.regressor.appearance_len()
                )));
            }
        }
        for entry in &expression_bank {
            check_dim("bank expression", shape.expression_rank(), entry.len())?;
        }
        let bank_geometry = expression_bank
            .iter()
            .map(|delta| bank_landmark_geometry(&shape, delta))
            .collect::<Result<Vec<_>>>()?;
        Ok(CascadeModel {
            shape,
            camera,
            prior_sigmas,
            stages,
            expression_bank,
            bank_geometry,
            runtime_initializations,
        })
    }

    pub fn shape(&self) -> &ParametricShapeModel {
        &self.shape
    }
    pub fn camera(&self) -> &Camera {
        &self.camera
    }
    pub fn prior_sigmas(&self) -> &DVector<f64> {
        &self.prior_sigmas
    }
    pub fn stages(&self) -> &[CascadeStage] {
        &self.stages
    }
    pub fn expression_bank(&self) -> &[DVector<f64>] {
        &self.expression_bank
    }
    pub fn runtime_initializations(&self) -> usize {
        self.runtime_initializations
    }
}

/// Stacked 3D landmark coordinates of a shape evaluated at mean identity.
fn bank_landmark_geometry(model: &ParametricShapeModel, delta: &DVector<f64>) -> Result<DVector<f64>> {
    let mut alpha = DVector::zeros(model.identity_rank() + 1);
    alpha[0] = 1.0;
    let shape = model.landmark_shape(&alpha, delta)?;
    let mut out = DVector::zeros(3 * shape.len());
    for (k, v) in shape.iter().enumerate() {
        out.fixed_rows_mut::<3>(3 * k).copy_from(v);
    }
    Ok(out)
}

/// Mean landmark distance between the 3D shapes of two expression vectors
/// at mean identity.
pub fn expression_distance(
    model: &ParametricShapeModel,
    delta_a: &DVector<f64>,
    delta_b: &DVector<f64>,
) -> Result<f64> {
    let a = bank_landmark_geometry(model, delta_a)?;
    let b = bank_landmark_geometry(model, delta_b)?;
    Ok(geometry_distance(&a, &b))
}

fn geometry_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let landmarks = a.len() / 3;
    let mut total = 0.0;
    for k in 0..landmarks {
        let d = a.fixed_rows::<3>(3 * k) - b.fixed_rows::<3>(3 * k);
        total += d.norm();
    }
    total / landmarks as f64
}

/// Indices of the `count` bank entries closest to `delta_prev`; ties break
/// toward the lower bank index. A short bank is used whole, with a warning.
pub fn select_initializations(
    model: &CascadeModel,
    delta_prev: &DVector<f64>,
    count: usize,
) -> Result<Vec<usize>> {
    let bank = &model.expression_bank;
    if bank.is_empty() {
        return Err(Error::InvalidConfig("empty expression bank".into()));
    }
    if bank.len() < count {
        log::warn!(
            "expression bank has {} entries, fewer than the {} requested; using all",
            bank.len(),
            count
        );
        return Ok((0..bank.len()).collect());
    }
    let prev_geometry = bank_landmark_geometry(&model.shape, delta_prev)?;
    let mut order: Vec<(f64, usize)> = model
        .bank_geometry
        .iter()
        .enumerate()
        .map(|(i, g)| (geometry_distance(g, &prev_geometry), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(order.into_iter().take(count).map(|(_, i)| i).collect())
}

/// Run the stage loop from one initial state.
pub fn run_cascade_single(
    model: &CascadeModel,
    image: &GrayImage,
    initial: &MotionParams,
    statics: &StaticParams,
) -> Result<MotionParams> {
    let mut state = initial.clone();
    for (t, stage) in model.stages.iter().enumerate() {
        let x = extract_appearance(
            image,
            &model.shape,
            &statics.identity,
            &statics.camera,
            &state,
            &stage.indexer,
        )
        .map_err(|e| e.context(format!("stage {t}")))?;
        let increment = stage
            .regressor
            .predict(&x)
            .map_err(|e| e.context(format!("stage {t}")))?;
        state.add_increment(&increment)?;
    }
    Ok(state)
}

/// Track one frame: run the cascade from the closest-expression
/// initializations and average the outputs.
pub fn track_frame(
    model: &CascadeModel,
    image: &GrayImage,
    previous: &MotionParams,
    statics: &StaticParams,
) -> Result<MotionParams> {
    let dims = model.shape.motion_dims();
    check_dim("previous motion", dims.total(), previous.as_vector().len())?;
    let picks = select_initializations(model, &previous.expression(), model.runtime_initializations)?;
    let zero_d = DVector::zeros(2 * dims.landmarks);

    let outputs: Vec<Result<MotionParams>> = picks
        .par_iter()
        .map(|&bank_index| {
            let initial = MotionParams::from_parts(
                model.expression_bank[bank_index].clone(),
                previous.rotation(),
                previous.translation(),
                zero_d.clone(),
            )?;
            run_cascade_single(model, image, &initial, statics)
        })
        .collect();

    let mut mean = DVector::zeros(dims.total());
    let mut n = 0.0;
    for output in outputs {
        mean += output?.as_vector();
        n += 1.0;
    }
    mean /= n;
    MotionParams::from_vector(mean, dims)
}

/// Wall-clock breakdown of one trained stage.
#[derive(Debug, Clone, Copy)]
pub struct StageTiming {
    pub extraction: Duration,
    pub regressor: Duration,
    pub fusion: Duration,
}

/// Training summary: normalized landmark RMSE before any stage and after
/// each stage, plus per-stage timings.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_rmse: f64,
    pub stage_rmse: Vec<f64>,
    pub timings: Vec<StageTiming>,
    pub sample_count: usize,
}

fn mean_landmark_positions(
    shape: &ParametricShapeModel,
    frames: &[TrainingFrame],
    samples: &[TrainingSample],
    states: &[MotionParams],
) -> Result<Vec<Point2<f64>>> {
    let landmark_count = shape.landmark_count();
    let per_sample: Vec<Result<Vec<Point2<f64>>>> = samples
        .par_iter()
        .zip(states.par_iter())
        .map(|(sample, state)| {
            let statics = &frames[sample.frame].statics;
            shape.landmark_positions(&statics.identity, &statics.camera, state)
        })
        .collect();
    let mut mean = vec![Point2::new(0.0, 0.0); landmark_count];
    for entry in per_sample {
        let positions = entry?;
        for (m, p) in mean.iter_mut().zip(&positions) {
            m.x += p.x;
            m.y += p.y;
        }
    }
    for m in &mut mean {
        m.x /= samples.len() as f64;
        m.y /= samples.len() as f64;
    }
    Ok(mean)
}

fn training_rmse(
    shape: &ParametricShapeModel,
    frames: &[TrainingFrame],
    samples: &[TrainingSample],
    states: &[MotionParams],
) -> Result<f64> {
    let errors: Vec<Result<f64>> = samples
        .par_iter()
        .zip(states.par_iter())
        .map(|(sample, state)| {
            let statics = &frames[sample.frame].statics;
            let predicted = shape.landmark_positions(&statics.identity, &statics.camera, state)?;
            let truth =
                shape.landmark_positions(&statics.identity, &statics.camera, &sample.truth)?;
            Ok(normalized_landmark_error(
                &predicted,
                &truth,
                shape.interocular_pair(),
            ))
        })
        .collect();
    let mut total = 0.0;
    for e in errors {
        total += e?;
    }
    Ok(total / samples.len() as f64)
}

/// Train the cascade on a set of ground-truth frames: the guess-truth
/// pairs come from [`generate_guess_truth_pairs`].
pub fn train_cascade(
    shape: &ParametricShapeModel,
    prior_sigmas: &DVector<f64>,
    frames: &[TrainingFrame],
    config: &CascadeConfig,
) -> Result<(CascadeModel, TrainReport)> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let samples = generate_guess_truth_pairs(frames, shape, &config.noise, config.seed)?;
    train_cascade_on_samples(shape, prior_sigmas, frames, &samples, config)
}

/// Train the cascade on explicit guess-truth samples.
pub fn train_cascade_on_samples(
    shape: &ParametricShapeModel,
    prior_sigmas: &DVector<f64>,
    frames: &[TrainingFrame],
    samples: &[TrainingSample],
    config: &CascadeConfig,
) -> Result<(CascadeModel, TrainReport)> {
    if frames.is_empty() || samples.is_empty() {
        return Err(Error::InvalidConfig("empty training set".into()));
    }
    let dims = shape.motion_dims();
    let layout = match config.mode {
        RegressorMode::Grouped { fern_counts } => ModalityLayout::for_motion(dims, fern_counts)?,
        RegressorMode::Monolithic { fern_count } => {
            ModalityLayout::single(dims.total(), fern_count)?
        }
    };
    let fuse = matches!(config.mode, RegressorMode::Grouped { .. });

    let mut states: Vec<MotionParams> = samples.iter().map(|s| s.initial.clone()).collect();

    let initial_rmse = training_rmse(shape, frames, samples, &states)?;
    let mut stage_rmse = Vec::with_capacity(config.stages);
    let mut timings = Vec::with_capacity(config.stages);
    let mut stages = Vec::with_capacity(config.stages);

    for t in 0..config.stages {
        let stage_context = |e: Error| e.context(format!("stage {t}"));

        let started = Instant::now();
        let mean_landmarks =
            mean_landmark_positions(shape, frames, samples, &states).map_err(stage_context)?;
        let spread = config.spread_factor
            * interocular_distance(&mean_landmarks, shape.interocular_pair());
        let mut indexer_rng = stream_rng(config.seed, "indexer", t as u64);
        let indexer =
            build_feature_indexer(&mean_landmarks, config.feature_count, spread, &mut indexer_rng)
                .map_err(|e| e.context(format!("stage {t}")))?;

        // Appearance extraction for all samples.
        let appearance_rows: Vec<Result<Vec<f32>>> = samples
            .par_iter()
            .zip(states.par_iter())
            .map(|(sample, state)| {
                let frame = &frames[sample.frame];
                extract_appearance(
                    &frame.image,
                    shape,
                    &frame.statics.identity,
                    &frame.statics.camera,
                    state,
                    &indexer,
                )
            })
            .collect();
        let mut x = AppearanceMatrix::zeros(samples.len(), config.feature_count);
        for (s, row) in appearance_rows.into_iter().enumerate() {
            let row = row.map_err(|e| e.context(format!("stage {t}, sample {s}")))?;
            for (c, v) in row.iter().enumerate() {
                x[(s, c)] = *v;
            }
        }
        let extraction = started.elapsed();

        // Regression targets: what is left toward the truth.
        let mut targets = DMatrix::zeros(samples.len(), dims.total());
        for (s, (sample, state)) in samples.iter().zip(&states).enumerate() {
            let diff = sample.truth.as_vector() - state.as_vector();
            targets.row_mut(s).tr_copy_from(&diff);
        }

        let boost = BoostConfig {
            fern_count: 0, // per-group budgets come from the layout
            depth: config.depth,
            shrinkage: config.shrinkage,
        };
        let stage_seed = derive_seed(config.seed, "stage", t as u64);
        let started = Instant::now();
        let mut regressor =
            train_modular(&x, &targets, &layout, &boost, stage_seed).map_err(stage_context)?;
        let regressor_time = started.elapsed();

        let started = Instant::now();
        if fuse {
            global_optimize(&mut regressor, &x, &targets, config.ridge_lambda)
                .map_err(stage_context)?;
        }
        let fusion = started.elapsed();

        // Advance every sample by the stage prediction.
        let predictions = regressor.predict_batch(&x).map_err(stage_context)?;
        for (s, state) in states.iter_mut().enumerate() {
            state.add_increment(&predictions.row(s).transpose())?;
        }

        stage_rmse.push(training_rmse(shape, frames, samples, &states)?);
        timings.push(StageTiming {
            extraction,
            regressor: regressor_time,
            fusion,
        });
        stages.push(CascadeStage { indexer, regressor });
    }

    let expression_bank: Vec<DVector<f64>> =
        frames.iter().map(|f| f.truth.expression()).collect();
    let model = CascadeModel::from_parts(
        shape.clone(),
        frames[0].statics.camera,
        prior_sigmas.clone(),
        stages,
        expression_bank,
        config.runtime_initializations,
    )?;
    Ok((
        model,
        TrainReport {
            initial_rmse,
            stage_rmse,
            timings,
            sample_count: samples.len(),
        },
    ))
}
