//! On-disk dataset layout.
//!
//! ```text
//! dataset/
//!   manifest.txt            key = value generator parameters (incl. seed)
//!   seq_000/
//!     ground_truth.txt      header lines (# key = ...) then one motion
//!                           vector per line, whitespace-separated
//!     landmarks0.txt        first-frame detected landmarks, `x y` per line
//!     frame_000000.pgm      binary PGM frames
//!     ...
//! ```
//!
//! The manifest stores the toy-model spec rather than the model itself;
//! generation is deterministic per seed, so loaders rebuild the identical
//! model from the spec.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ferntrack_core::image::GrayImage;
use ferntrack_core::rng::derive_seed;
use ferntrack_core::shape_model::{Camera, MotionDims, MotionParams, StaticParams};
use ferntrack_core::synthscene::{generate_sequence, make_toy_model, SceneSequence, ToyModel};
use ferntrack_core::{Error, Result};
use ferntrack_core::nalgebra::{DVector, Point2};

use crate::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// One sequence loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub name: String,
    pub frames: Vec<GrayImage>,
    pub ground_truth: Vec<MotionParams>,
    pub statics: StaticParams,
    pub first_frame_landmarks: Vec<Point2<f64>>,
    pub seed: u64,
}

/// A full dataset: the regenerated toy model plus all sequences.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub toy: ToyModel,
    pub sequences: Vec<LoadedSequence>,
    pub manifest: BTreeMap<String, String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn sequence_dir_name(index: usize) -> String {
    format!("seq_{index:03}")
}

fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn ground_truth_text(seq: &SceneSequence) -> String {
    let mut out = String::new();
    let dims = seq.ground_truth[0].dims();
    out.push_str(&format!("# m_exp = {}\n", dims.m_exp));
    out.push_str(&format!("# landmarks = {}\n", dims.landmarks));
    out.push_str(&format!("# dim = {}\n", dims.total()));
    out.push_str(&format!("# seed = {}\n", seq.seed));
    out.push_str(&format!("# appearance_seed = {}\n", seq.appearance_seed));
    let alpha: Vec<String> = seq.statics.identity.iter().map(|v| v.to_string()).collect();
    out.push_str(&format!("# alpha = {}\n", alpha.join(" ")));
    out.push_str(&format!("# focal = {}\n", seq.statics.camera.focal));
    out.push_str(&format!(
        "# principal = {} {}\n",
        seq.statics.camera.principal.0, seq.statics.camera.principal.1
    ));
    for truth in &seq.ground_truth {
        let row: Vec<String> = truth.as_vector().iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Generate and write a dataset. The directory is built under a temporary
/// name and renamed into place, so a failure leaves nothing behind.
pub fn write_dataset(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    if out.exists() {
        return Err(Error::InvalidConfig(format!(
            "output path {} already exists",
            out.display()
        )));
    }
    let toy = make_toy_model(&config.toy_model_spec())?;
    let staging = out.with_extension("tmp-build");
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }

    let build = || -> Result<()> {
        std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let mut manifest = config.to_map();
        manifest.insert("format_version", "1".to_string());
        let mut text = String::new();
        for (k, v) in &manifest {
            text.push_str(&format!("{k} = {v}\n"));
        }
        write_atomic(&staging.join(MANIFEST_NAME), text.as_bytes())?;

        let seq_config = config.sequence_config();
        for s in 0..config.sequences {
            let seq_seed = derive_seed(config.seed, "scene", s as u64);
            let seq = generate_sequence(&toy, &seq_config, config.frames, seq_seed)?;
            let dir = staging.join(sequence_dir_name(s));
            std::fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;

            write_atomic(&dir.join("ground_truth.txt"), ground_truth_text(&seq).as_bytes())?;
            let mut lms = String::new();
            for p in &seq.first_frame_landmarks {
                lms.push_str(&format!("{} {}\n", p.x, p.y));
            }
            write_atomic(&dir.join("landmarks0.txt"), lms.as_bytes())?;
            for (f, frame) in seq.frames.iter().enumerate() {
                frame.write_pgm(&dir.join(frame_file_name(f)))?;
            }
        }
        Ok(())
    };

    match build() {
        Ok(()) => std::fs::rename(&staging, out).map_err(|e| Error::io(out, e)),
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("{}: malformed manifest line `{line}`", path.display()))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn manifest_value<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    map.get(key)
        .ok_or_else(|| {
            Error::InvalidConfig(format!("{}: manifest misses key `{key}`", path.display()))
        })?
        .parse()
        .map_err(|_| {
            Error::InvalidConfig(format!("{}: manifest key `{key}` unparsable", path.display()))
        })
}

/// Load one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<LoadedSequence> {
    let gt_path = dir.join("ground_truth.txt");
    let text = std::fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad_gt(&gt_path, "unparsable number")))
            .collect::<Result<_>>()?;
        rows.push(DVector::from_vec(values));
    }
    let m_exp: usize = header_value(&header, "m_exp", &gt_path)?;
    let landmarks: usize = header_value(&header, "landmarks", &gt_path)?;
    let seed: u64 = header_value(&header, "seed", &gt_path)?;
    let focal: f64 = header_value(&header, "focal", &gt_path)?;
    let principal_raw = header
        .get("principal")
        .ok_or_else(|| bad_gt(&gt_path, "missing principal"))?;
    let principal: Vec<f64> = principal_raw
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad_gt(&gt_path, "bad principal")))
        .collect::<Result<_>>()?;
    let alpha_raw = header
        .get("alpha")
        .ok_or_else(|| bad_gt(&gt_path, "missing alpha"))?;
    let alpha: Vec<f64> = alpha_raw
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad_gt(&gt_path, "bad alpha")))
        .collect::<Result<_>>()?;
    if principal.len() != 2 {
        return Err(bad_gt(&gt_path, "principal needs two numbers"));
    }

    let dims = MotionDims { m_exp, landmarks };
    let camera = Camera::new(focal, (principal[0], principal[1]))?;
    let statics = StaticParams::new(DVector::from_vec(alpha), camera)?;
    let ground_truth = rows
        .into_iter()
        .map(|row| MotionParams::from_vector(row, dims))
        .collect::<Result<Vec<_>>>()?;
    if ground_truth.is_empty() {
        return Err(bad_gt(&gt_path, "no ground-truth rows"));
    }

    let lm_path = dir.join("landmarks0.txt");
    let lm_text = std::fs::read_to_string(&lm_path).map_err(|e| Error::io(&lm_path, e))?;
    let mut first_frame_landmarks = Vec::new();
    for line in lm_text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad_gt(&lm_path, "bad landmark")))
            .collect::<Result<_>>()?;
        if nums.len() != 2 {
            return Err(bad_gt(&lm_path, "landmark line needs `x y`"));
        }
        first_frame_landmarks.push(Point2::new(nums[0], nums[1]));
    }
    if first_frame_landmarks.len() != landmarks {
        return Err(bad_gt(&lm_path, "landmark count mismatch"));
    }

    let mut frames = Vec::with_capacity(ground_truth.len());
    for f in 0..ground_truth.len() {
        frames.push(GrayImage::read_pgm(&dir.join(frame_file_name(f)))?);
    }

    Ok(LoadedSequence {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into()),
        frames,
        ground_truth,
        statics,
        first_frame_landmarks,
        seed,
    })
}

fn bad_gt(path: &Path, reason: &str) -> Error {
    Error::InvalidConfig(format!("{}: {reason}", path.display()))
}

fn header_value<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    map.get(key)
        .ok_or_else(|| bad_gt(path, &format!("missing header `{key}`")))?
        .parse()
        .map_err(|_| bad_gt(path, &format!("bad header `{key}`")))
}

/// Load a dataset directory: manifest, regenerated toy model, sequences.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest = parse_manifest(&manifest_path)?;
    let spec = ferntrack_core::synthscene::ToyModelSpec {
        vertex_count: manifest_value(&manifest, "vertex_count", &manifest_path)?,
        identity_rank: manifest_value(&manifest, "identity_rank", &manifest_path)?,
        expression_rank: manifest_value(&manifest, "expression_rank", &manifest_path)?,
        landmark_count: manifest_value(&manifest, "landmark_count", &manifest_path)?,
        scale: manifest_value(&manifest, "scale", &manifest_path)?,
        smoothness: manifest_value(&manifest, "smoothness", &manifest_path)?,
        identity_amplitude: manifest_value(&manifest, "identity_amplitude", &manifest_path)?,
        expression_amplitude: manifest_value(&manifest, "expression_amplitude", &manifest_path)?,
        seed: manifest_value(&manifest, "seed", &manifest_path)?,
    };
    let toy = make_toy_model(&spec)?;

    let sequences_expected: usize = manifest_value(&manifest, "sequences", &manifest_path)?;
    let mut sequences = Vec::with_capacity(sequences_expected);
    for s in 0..sequences_expected {
        let seq_dir = dir.join(sequence_dir_name(s));
        sequences.push(load_sequence(&seq_dir)?);
    }
    Ok(Dataset {
        toy,
        sequences,
        manifest,
    })
}

/// Sequence subdirectories of a dataset, in order.
pub fn sequence_dirs(dir: &Path, count: usize) -> Vec<PathBuf> {
    (0..count).map(|s| dir.join(sequence_dir_name(s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        RunConfig {
            vertex_count: 100,
            identity_rank: 3,
            expression_rank: 3,
            landmark_count: 12,
            sequences: 2,
            frames: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let config = small_config();
        write_dataset(&config, &out).unwrap();

        let loaded = load_dataset(&out).unwrap();
        assert_eq!(loaded.sequences.len(), 2);
        assert_eq!(loaded.sequences[0].frames.len(), 4);
        assert_eq!(loaded.toy.spec.vertex_count, 100);

        // Ground truth round-trips exactly (shortest-repr float text).
        let seq_seed = derive_seed(config.seed, "scene", 0);
        let regenerated = generate_sequence(
            &loaded.toy,
            &config.sequence_config(),
            config.frames,
            seq_seed,
        )
        .unwrap();
        for (a, b) in loaded.sequences[0]
            .ground_truth
            .iter()
            .zip(&regenerated.ground_truth)
        {
            assert_eq!(a.as_vector(), b.as_vector());
        }
        assert_eq!(
            loaded.sequences[0].statics.identity,
            regenerated.statics.identity
        );
        // Frames round-trip at 8-bit quantization.
        assert_eq!(
            loaded.sequences[0].frames[0].quantized(),
            regenerated.frames[0].quantized()
        );
    }

    #[test]
    fn existing_output_is_refused_and_failure_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        std::fs::create_dir(&out).unwrap();
        assert!(write_dataset(&small_config(), &out).is_err());

        // Invalid spec: no partial outputs.
        let out2 = dir.path().join("data2");
        let mut bad = small_config();
        bad.vertex_count = 5; // below landmark count
        assert!(write_dataset(&bad, &out2).is_err());
        assert!(!out2.exists());
        assert!(!out2.with_extension("tmp-build").exists());
    }
}
