//! Desk-scale synthetic data: a randomly generated parametric shape with
//! smooth basis fields, an intensity-splat renderer, and bounded random-walk
//! frame sequences with exact ground truth.
//!
//! Rendering splats a small Gaussian kernel at every projected vertex with a
//! per-vertex albedo, so pixel intensities respond smoothly to expression,
//! rotation, translation and landmark displacements alike — which is exactly
//! what pixel-difference features can pick up. Landmark displacement slices
//! shift the splat centers of their landmark vertices, making the
//! displacement modality observable in the frame.

use nalgebra::{DVector, Point2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::{derive_seed, stream_rng};
use crate::shape_model::{
    euler_to_rotation, project_with, Camera, MotionParams, ParametricShapeModel, StaticParams,
};

/// Parameters of the generated toy shape model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelSpec {
    pub vertex_count: usize,
    pub identity_rank: usize,
    pub expression_rank: usize,
    pub landmark_count: usize,
    /// Half-extent of the vertex grid in world units.
    pub scale: f64,
    /// Spatial frequency cutoff of the random basis fields; lower is
    /// smoother.
    pub smoothness: f64,
    /// RMS per-vertex displacement of one identity basis column.
    pub identity_amplitude: f64,
    /// RMS per-vertex displacement of one expression blendshape.
    pub expression_amplitude: f64,
    pub seed: u64,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        ToyModelSpec {
            vertex_count: 400,
            identity_rank: 12,
            expression_rank: 8,
            landmark_count: 66,
            scale: 16.0,
            smoothness: 1.0,
            identity_amplitude: 0.8,
            expression_amplitude: 3.0,
            seed: 0,
        }
    }
}

impl ToyModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vertex_count < self.landmark_count {
            return Err(Error::InvalidConfig(format!(
                "vertex count {} below landmark count {}",
                self.vertex_count, self.landmark_count
            )));
        }
        if self.landmark_count < 3 {
            return Err(Error::InvalidConfig("need at least 3 landmarks".into()));
        }
        if self.identity_rank == 0 || self.expression_rank == 0 {
            return Err(Error::InvalidConfig("basis ranks must be >= 1".into()));
        }
        if self.scale <= 0.0 || self.smoothness <= 0.0 || self.scale.is_nan() || self.smoothness.is_nan() {
            return Err(Error::InvalidConfig(
                "scale and smoothness must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A generated toy model plus the standard deviations its identity
/// coefficients are drawn with (the identity prior of the first-frame fit).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub shape: ParametricShapeModel,
    pub prior_sigmas: DVector<f64>,
    pub spec: ToyModelSpec,
}

/// Smooth random field over grid coordinates: a few random cosine modes.
fn smooth_field(rng: &mut ChaCha8Rng, cutoff: f64) -> impl Fn(f64, f64) -> f64 {
    const MODES: usize = 4;
    let mut modes = Vec::with_capacity(MODES);
    for _ in 0..MODES {
        let fx = rng.random_range(-cutoff..cutoff);
        let fy = rng.random_range(-cutoff..cutoff);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp: f64 = rng.sample(StandardNormal);
        modes.push((fx, fy, phase, amp));
    }
    move |u: f64, v: f64| {
        modes
            .iter()
            .map(|&(fx, fy, phase, amp)| amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).cos())
            .sum()
    }
}

/// Generate the toy parametric shape: vertices on a jittered dome grid,
/// basis columns as seeded smooth fields normalized to the configured
/// amplitudes, landmarks spread uniformly over the vertex order.
pub fn make_toy_model(spec: &ToyModelSpec) -> Result<ToyModel> {
    spec.validate()?;
    let n = spec.vertex_count;
    let grid = (n as f64).sqrt().ceil() as usize;
    let mut rng = stream_rng(spec.seed, "toy-model", 0);

    // Grid coordinates in [-1, 1]^2 per vertex, reused by the basis fields.
    let mut uv = Vec::with_capacity(n);
    let mut mean = DVector::zeros(3 * n);
    for v in 0..n {
        let i = v / grid;
        let j = v % grid;
        let u = if grid > 1 { 2.0 * j as f64 / (grid - 1) as f64 - 1.0 } else { 0.0 };
        let w = if grid > 1 { 2.0 * i as f64 / (grid - 1) as f64 - 1.0 } else { 0.0 };
        uv.push((u, w));
        let jitter = 0.03 * spec.scale;
        mean[3 * v] = u * spec.scale + rng.random_range(-jitter..jitter);
        mean[3 * v + 1] = w * spec.scale + rng.random_range(-jitter..jitter);
        // Shallow dome so rotations move pixels.
        mean[3 * v + 2] =
            0.25 * spec.scale * (1.0 - (u * u + w * w) * 0.5) + rng.random_range(-jitter..jitter);
    }

    // Orthonormal basis of the affine deformations of the mean shape
    // (translations plus linear maps). Generated basis columns are
    // projected off this subspace: morphable-model bases are built from
    // rigidly aligned scans and carry no rigid/affine motion, and leaving
    // such content in would let identity and expression masquerade as pose.
    let affine_basis = {
        let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(12);
        for axis in 0..3 {
            let mut d = DVector::zeros(3 * n);
            for v in 0..n {
                d[3 * v + axis] = 1.0;
            }
            dirs.push(d);
        }
        for axis in 0..3 {
            for coord in 0..3 {
                let mut d = DVector::zeros(3 * n);
                for v in 0..n {
                    d[3 * v + axis] = mean[3 * v + coord];
                }
                dirs.push(d);
            }
        }
        let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(dirs.len());
        for mut d in dirs {
            for q in &ortho {
                let proj = q.dot(&d);
                d -= q * proj;
            }
            let norm = d.norm();
            if norm > 1e-9 {
                ortho.push(d / norm);
            }
        }
        ortho
    };

    let field_column = |rng: &mut ChaCha8Rng, amplitude: f64| -> DVector<f64> {
        let fx = smooth_field(rng, spec.smoothness);
        let fy = smooth_field(rng, spec.smoothness);
        let fz = smooth_field(rng, spec.smoothness);
        let mut col = DVector::zeros(3 * n);
        for (v, &(u, w)) in uv.iter().enumerate() {
            col[3 * v] = fx(u, w);
            col[3 * v + 1] = fy(u, w);
            col[3 * v + 2] = fz(u, w);
        }
        for q in &affine_basis {
            let proj = q.dot(&col);
            col -= q * proj;
        }
        let rms = (col.norm_squared() / (3 * n) as f64).sqrt();
        if rms > 0.0 {
            col *= amplitude / rms;
        }
        col
    };

    let mut identity = nalgebra::DMatrix::zeros(3 * n, spec.identity_rank + 1);
    identity.column_mut(0).copy_from(&mean);
    for c in 1..=spec.identity_rank {
        identity
            .column_mut(c)
            .copy_from(&field_column(&mut rng, spec.identity_amplitude));
    }
    let mut expression = nalgebra::DMatrix::zeros(3 * n, spec.expression_rank);
    for c in 0..spec.expression_rank {
        expression
            .column_mut(c)
            .copy_from(&field_column(&mut rng, spec.expression_amplitude));
    }

    // Landmarks spread uniformly over vertex order (strictly increasing
    // because n >= landmark_count).
    let landmarks: Vec<usize> = (0..spec.landmark_count)
        .map(|k| k * n / spec.landmark_count)
        .collect();

    // Inter-ocular pair: widest horizontal separation within the middle
    // height band of the mean shape; stable by construction.
    let band = 0.5 * spec.scale;
    let mut left = None;
    let mut right = None;
    for (slot, &v) in landmarks.iter().enumerate() {
        let x = mean[3 * v];
        let y = mean[3 * v + 1];
        if y.abs() > band {
            continue;
        }
        if left.is_none_or(|(lx, _)| x < lx) {
            left = Some((x, slot));
        }
        if right.is_none_or(|(rx, _)| x > rx) {
            right = Some((x, slot));
        }
    }
    let pair = match (left, right) {
        (Some((_, a)), Some((_, b))) if a != b => (a, b),
        _ => (0, spec.landmark_count - 1),
    };

    let shape = ParametricShapeModel::new(identity, expression, landmarks, pair)?;
    let prior_sigmas =
        DVector::from_fn(spec.identity_rank, |i, _| 1.0 / (1.0 + 0.2 * i as f64));
    Ok(ToyModel {
        shape,
        prior_sigmas,
        spec: spec.clone(),
    })
}

/// Per-vertex albedo derived from the appearance seed only.
fn albedo(appearance_seed: u64, vertex: usize) -> f64 {
    let h = derive_seed(appearance_seed, "albedo", vertex as u64);
    0.25 + 0.75 * (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Render one frame by splatting a Gaussian kernel at every projected
/// vertex. Landmark vertices splat at their displaced positions.
pub fn render_frame(
    model: &ParametricShapeModel,
    alpha: &DVector<f64>,
    camera: &Camera,
    motion: &MotionParams,
    size: (usize, usize),
    appearance_seed: u64,
    kernel_sigma: f64,
) -> Result<GrayImage> {
    let shape = model.evaluate_shape(alpha, &motion.expression())?;
    let rot = euler_to_rotation(motion.rotation());
    let translation = motion.translation();
    let mut landmark_of_vertex = vec![usize::MAX; model.vertex_count()];
    for (slot, &v) in model.landmark_indices().iter().enumerate() {
        landmark_of_vertex[v] = slot;
    }

    let mut image = GrayImage::new(size.0, size.1)?;
    let radius = (3.0 * kernel_sigma).ceil() as isize;
    let inv_two_sigma2 = 1.0 / (2.0 * kernel_sigma * kernel_sigma);
    for v in 0..model.vertex_count() {
        let world = Vector3::new(shape[3 * v], shape[3 * v + 1], shape[3 * v + 2]);
        let mut center = project_with(&rot, &world, &translation, camera)?;
        let slot = landmark_of_vertex[v];
        if slot != usize::MAX {
            let d = motion.displacement(slot);
            center.x += d.x;
            center.y += d.y;
        }
        let brightness = 0.55 * albedo(appearance_seed, v);
        let cx = center.x.round() as isize;
        let cy = center.y.round() as isize;
        for py in (cy - radius).max(0)..=(cy + radius).min(size.1 as isize - 1) {
            for px in (cx - radius).max(0)..=(cx + radius).min(size.0 as isize - 1) {
                let dx = px as f64 - center.x;
                let dy = py as f64 - center.y;
                let w = (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
                image.add(px as usize, py as usize, brightness * w);
            }
        }
    }
    image.clamp_intensities();
    Ok(image)
}

/// Per-step bounds of the ground-truth random walk (uniform increments).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkBounds {
    pub expression: f64,
    pub rotation: f64,
    pub translation: f64,
    pub displacement: f64,
}

impl Default for WalkBounds {
    fn default() -> Self {
        WalkBounds {
            expression: 0.04,
            rotation: 0.015,
            translation: 0.25,
            displacement: 0.15,
        }
    }
}

/// Scene generation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub image_size: (usize, usize),
    pub focal: f64,
    /// Depth of the face center along +z.
    pub base_depth: f64,
    pub walk: WalkBounds,
    /// Hard limits keeping the walk in a trackable envelope.
    pub rotation_limit: f64,
    pub translation_limit: f64,
    pub displacement_limit: f64,
    /// Gaussian noise added to the first frame's detected landmarks.
    pub landmark_noise: f64,
    pub kernel_sigma: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            image_size: (64, 64),
            focal: 1000.0,
            base_depth: 1500.0,
            walk: WalkBounds::default(),
            rotation_limit: 0.3,
            translation_limit: 6.0,
            displacement_limit: 2.0,
            landmark_noise: 0.0,
            kernel_sigma: 1.2,
        }
    }
}

/// A generated frame sequence with exact per-frame ground truth.
#[derive(Debug, Clone)]
pub struct SceneSequence {
    pub frames: Vec<GrayImage>,
    pub ground_truth: Vec<MotionParams>,
    pub statics: StaticParams,
    /// Detected landmarks handed to the first-frame fit.
    pub first_frame_landmarks: Vec<Point2<f64>>,
    pub seed: u64,
    pub appearance_seed: u64,
}

fn reflect_unit(v: f64) -> f64 {
    if v < 0.0 {
        -v
    } else if v > 1.0 {
        2.0 - v
    } else {
        v
    }
}

/// Generate a sequence whose ground truth evolves by a bounded seeded
/// random walk; frame i is rendered from ground truth i.
pub fn generate_sequence(
    toy: &ToyModel,
    config: &SequenceConfig,
    length: usize,
    seed: u64,
) -> Result<SceneSequence> {
    if length == 0 {
        return Err(Error::InvalidConfig("sequence length must be >= 1".into()));
    }
    let model = &toy.shape;
    let dims = model.motion_dims();
    let camera = Camera::new(
        config.focal,
        (config.image_size.0 as f64 / 2.0, config.image_size.1 as f64 / 2.0),
    )?;

    let mut rng = stream_rng(seed, "sequence", 0);
    let appearance_seed = derive_seed(seed, "appearance", 0);

    // Static identity drawn from the prior.
    let mut alpha = DVector::zeros(toy.spec.identity_rank + 1);
    alpha[0] = 1.0;
    for i in 0..toy.spec.identity_rank {
        let z: f64 = rng.sample(StandardNormal);
        alpha[i + 1] = z * toy.prior_sigmas[i];
    }
    let statics = StaticParams::new(alpha.clone(), camera)?;

    // Initial state away from the walk limits.
    let mut expression = DVector::from_fn(dims.m_exp, |_, _| rng.random_range(0.25..0.75));
    let mut rotation = Vector3::new(
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    let mut translation = Vector3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        config.base_depth + rng.random_range(-20.0..20.0),
    );
    let base_translation = translation;
    let mut displacement = DVector::from_fn(2 * dims.landmarks, |_, _| rng.random_range(-0.5..0.5));

    let mut ground_truth = Vec::with_capacity(length);
    for frame in 0..length {
        if frame > 0 {
            for d in 0..dims.m_exp {
                expression[d] =
                    reflect_unit(expression[d] + rng.random_range(-config.walk.expression..=config.walk.expression));
            }
            for d in 0..3 {
                rotation[d] = (rotation[d]
                    + rng.random_range(-config.walk.rotation..=config.walk.rotation))
                .clamp(-config.rotation_limit, config.rotation_limit);
                let step = rng.random_range(-config.walk.translation..=config.walk.translation);
                translation[d] = (translation[d] + step).clamp(
                    base_translation[d] - config.translation_limit,
                    base_translation[d] + config.translation_limit,
                );
            }
            for d in 0..2 * dims.landmarks {
                displacement[d] = (displacement[d]
                    + rng.random_range(-config.walk.displacement..=config.walk.displacement))
                .clamp(-config.displacement_limit, config.displacement_limit);
            }
        }
        ground_truth.push(MotionParams::from_parts(
            expression.clone(),
            rotation,
            translation,
            displacement.clone(),
        )?);
    }

    let frames: Vec<GrayImage> = ground_truth
        .iter()
        .map(|motion| {
            render_frame(
                model,
                &statics.identity,
                &camera,
                motion,
                config.image_size,
                appearance_seed,
                config.kernel_sigma,
            )
        })
        .collect::<Result<_>>()?;

    let mut first_frame_landmarks =
        model.landmark_positions(&statics.identity, &camera, &ground_truth[0])?;
    if config.landmark_noise > 0.0 {
        for p in &mut first_frame_landmarks {
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            p.x += nx * config.landmark_noise;
            p.y += ny * config.landmark_noise;
        }
    }

    Ok(SceneSequence {
        frames,
        ground_truth,
        statics,
        first_frame_landmarks,
        seed,
        appearance_seed,
    })
}
