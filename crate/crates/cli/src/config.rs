//! Run configuration: a plain `key = value` file with every knob, plus a
//! handful of command-line overrides (flags win).
//!
//! Defaults are desk scale so the whole loop runs in minutes on a laptop.
//! The reference configuration from the method this implements is
//! `stages = 10, fern_depth = 5, ferns_per_group = 80, feature_count = 600,
//! initializations = 20` with 66 landmarks; those values work unchanged,
//! they just take correspondingly longer to train.

use std::collections::BTreeMap;
use std::path::Path;

use ferntrack_core::cascade::{CascadeConfig, NoiseConfig, RegressorMode};
use ferntrack_core::init_fit::FitConfig;
use ferntrack_core::synthscene::{SequenceConfig, ToyModelSpec, WalkBounds};
use ferntrack_core::{Error, Result};

/// Which stage regressor `train` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Gombf,
    Monolithic,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gombf" => Ok(Mode::Gombf),
            "monolithic" => Ok(Mode::Monolithic),
            other => Err(Error::InvalidConfig(format!(
                "mode must be `gombf` or `monolithic`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Gombf => "gombf",
            Mode::Monolithic => "monolithic",
        })
    }
}

/// Every knob of the pipeline, with desk-scale defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Toy shape model.
    pub vertex_count: usize,
    pub identity_rank: usize,
    pub expression_rank: usize,
    pub landmark_count: usize,
    pub scale: f64,
    pub smoothness: f64,
    pub identity_amplitude: f64,
    pub expression_amplitude: f64,

    // Scene generation.
    pub sequences: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub base_depth: f64,
    pub kernel_sigma: f64,
    pub walk_expression: f64,
    pub walk_rotation: f64,
    pub walk_translation: f64,
    pub walk_displacement: f64,
    pub rotation_limit: f64,
    pub translation_limit: f64,
    pub displacement_limit: f64,
    pub landmark_noise: f64,

    // Cascade training.
    pub stages: usize,
    pub fern_depth: usize,
    /// Ferns per modality group; the monolithic baseline gets 4x this so
    /// total budgets match.
    pub ferns_per_group: usize,
    pub feature_count: usize,
    pub shrinkage: f64,
    pub ridge_lambda: f64,
    pub spread_factor: f64,
    pub expression_pairs: usize,
    pub rotation_pairs: usize,
    pub translation_pairs: usize,
    pub rotation_sigma: f64,
    pub translation_sigma_factor: f64,
    /// Train on every `train_stride`-th frame of the dataset.
    pub train_stride: usize,

    // Runtime prediction.
    pub initializations: usize,
    pub fit_identity_weight: f64,
    pub fit_sparsity_weight: f64,
    pub fit_iterations: usize,

    pub mode: Mode,
    pub seed: u64,
    /// Rayon worker threads; 0 picks the machine default.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            vertex_count: 400,
            identity_rank: 12,
            expression_rank: 8,
            landmark_count: 66,
            scale: 16.0,
            smoothness: 1.0,
            identity_amplitude: 0.8,
            expression_amplitude: 3.0,

            sequences: 10,
            frames: 200,
            width: 64,
            height: 64,
            focal: 1000.0,
            base_depth: 1500.0,
            kernel_sigma: 1.2,
            walk_expression: 0.04,
            walk_rotation: 0.015,
            walk_translation: 0.25,
            walk_displacement: 0.15,
            rotation_limit: 0.3,
            translation_limit: 6.0,
            displacement_limit: 2.0,
            landmark_noise: 0.0,

            stages: 6,
            fern_depth: 5,
            ferns_per_group: 20,
            feature_count: 200,
            shrinkage: 1000.0,
            ridge_lambda: 1.0,
            spread_factor: 0.15,
            expression_pairs: 30,
            rotation_pairs: 8,
            translation_pairs: 8,
            rotation_sigma: 0.1,
            translation_sigma_factor: 0.02,
            train_stride: 5,

            initializations: 20,
            fit_identity_weight: 10.0,
            fit_sparsity_weight: 1.0,
            fit_iterations: 3,

            mode: Mode::Gombf,
            seed: 42,
            threads: 0,
        }
    }
}

macro_rules! parse_keys {
    ($cfg:ident, $key:ident, $value:ident, $path:ident, $($name:ident),+ $(,)?) => {
        match $key {
            $(stringify!($name) => {
                $cfg.$name = $value.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "{}: cannot parse `{}` as value for `{}`",
                        $path.display(), $value, stringify!($name)
                    ))
                })?;
            })+
            "mode" => $cfg.mode = $value.parse()?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "{}: unknown configuration key `{other}`",
                    $path.display()
                )))
            }
        }
    };
}

impl RunConfig {
    /// Parse a `key = value` file over the defaults. Lines starting with
    /// `#` and blank lines are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected `key = value`, got `{raw}`",
                    path.display(),
                    line_no + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            parse_keys!(
                cfg, key, value, path,
                vertex_count, identity_rank, expression_rank, landmark_count,
                scale, smoothness, identity_amplitude, expression_amplitude,
                sequences, frames, width, height, focal, base_depth, kernel_sigma,
                walk_expression, walk_rotation, walk_translation, walk_displacement,
                rotation_limit, translation_limit, displacement_limit, landmark_noise,
                stages, fern_depth, ferns_per_group, feature_count, shrinkage,
                ridge_lambda, spread_factor, expression_pairs, rotation_pairs,
                translation_pairs, rotation_sigma, translation_sigma_factor,
                train_stride, initializations, fit_identity_weight,
                fit_sparsity_weight, fit_iterations, seed, threads,
            );
        }
        Ok(cfg)
    }

    /// Check every module precondition before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.toy_model_spec().validate()?;
        if self.sequences == 0 || self.frames == 0 {
            return Err(Error::InvalidConfig("need at least one sequence and frame".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image size must be nonzero".into()));
        }
        if self.focal <= 0.0 || self.focal.is_nan() {
            return Err(Error::InvalidConfig("focal length must be positive".into()));
        }
        if self.fern_depth == 0 || self.fern_depth > 20 {
            return Err(Error::InvalidConfig("fern_depth must be in 1..=20".into()));
        }
        if self.ferns_per_group == 0 {
            return Err(Error::InvalidConfig("ferns_per_group must be >= 1".into()));
        }
        if self.feature_count < 2 {
            return Err(Error::InvalidConfig("feature_count must be >= 2".into()));
        }
        if self.shrinkage < 0.0 || self.ridge_lambda < 0.0 || self.shrinkage.is_nan() || self.ridge_lambda.is_nan() {
            return Err(Error::InvalidConfig("shrinkage and ridge_lambda must be >= 0".into()));
        }
        if self.initializations == 0 {
            return Err(Error::InvalidConfig("initializations must be >= 1".into()));
        }
        if self.train_stride == 0 {
            return Err(Error::InvalidConfig("train_stride must be >= 1".into()));
        }
        if self.fit_iterations == 0 {
            return Err(Error::InvalidConfig("fit_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn toy_model_spec(&self) -> ToyModelSpec {
        ToyModelSpec {
            vertex_count: self.vertex_count,
            identity_rank: self.identity_rank,
            expression_rank: self.expression_rank,
            landmark_count: self.landmark_count,
            scale: self.scale,
            smoothness: self.smoothness,
            identity_amplitude: self.identity_amplitude,
            expression_amplitude: self.expression_amplitude,
            seed: self.seed,
        }
    }

    pub fn sequence_config(&self) -> SequenceConfig {
        SequenceConfig {
            image_size: (self.width, self.height),
            focal: self.focal,
            base_depth: self.base_depth,
            walk: WalkBounds {
                expression: self.walk_expression,
                rotation: self.walk_rotation,
                translation: self.walk_translation,
                displacement: self.walk_displacement,
            },
            rotation_limit: self.rotation_limit,
            translation_limit: self.translation_limit,
            displacement_limit: self.displacement_limit,
            landmark_noise: self.landmark_noise,
            kernel_sigma: self.kernel_sigma,
        }
    }

    pub fn cascade_config(&self, mode: Mode) -> CascadeConfig {
        let regressor = match mode {
            Mode::Gombf => RegressorMode::Grouped {
                fern_counts: [self.ferns_per_group; 4],
            },
            Mode::Monolithic => RegressorMode::Monolithic {
                fern_count: 4 * self.ferns_per_group,
            },
        };
        CascadeConfig {
            stages: self.stages,
            depth: self.fern_depth,
            mode: regressor,
            feature_count: self.feature_count,
            shrinkage: self.shrinkage,
            ridge_lambda: self.ridge_lambda,
            spread_factor: self.spread_factor,
            runtime_initializations: self.initializations,
            noise: NoiseConfig {
                expression_pairs: self.expression_pairs,
                rotation_pairs: self.rotation_pairs,
                translation_pairs: self.translation_pairs,
                rotation_sigma: self.rotation_sigma,
                translation_sigma_factor: self.translation_sigma_factor,
            },
            seed: self.seed,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            identity_weight: self.fit_identity_weight,
            sparsity_weight: self.fit_sparsity_weight,
            outer_iterations: self.fit_iterations,
            ..FitConfig::default()
        }
    }

    /// Serialize as a `key = value` map (manifest writing, reproducibility).
    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("vertex_count", self.vertex_count.to_string());
        m.insert("identity_rank", self.identity_rank.to_string());
        m.insert("expression_rank", self.expression_rank.to_string());
        m.insert("landmark_count", self.landmark_count.to_string());
        m.insert("scale", self.scale.to_string());
        m.insert("smoothness", self.smoothness.to_string());
        m.insert("identity_amplitude", self.identity_amplitude.to_string());
        m.insert("expression_amplitude", self.expression_amplitude.to_string());
        m.insert("sequences", self.sequences.to_string());
        m.insert("frames", self.frames.to_string());
        m.insert("width", self.width.to_string());
        m.insert("height", self.height.to_string());
        m.insert("focal", self.focal.to_string());
        m.insert("base_depth", self.base_depth.to_string());
        m.insert("kernel_sigma", self.kernel_sigma.to_string());
        m.insert("walk_expression", self.walk_expression.to_string());
        m.insert("walk_rotation", self.walk_rotation.to_string());
        m.insert("walk_translation", self.walk_translation.to_string());
        m.insert("walk_displacement", self.walk_displacement.to_string());
        m.insert("rotation_limit", self.rotation_limit.to_string());
        m.insert("translation_limit", self.translation_limit.to_string());
        m.insert("displacement_limit", self.displacement_limit.to_string());
        m.insert("landmark_noise", self.landmark_noise.to_string());
        m.insert("seed", self.seed.to_string());
        m
    }
}
