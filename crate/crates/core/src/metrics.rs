//! Landmark error metrics. One implementation shared by training reports,
//! tracking output and the benchmark comparison.

use nalgebra::Point2;

use crate::error::Result;
use crate::shape_model::{interocular_distance, Camera, MotionParams, ParametricShapeModel};

/// Point-to-point RMS error between two landmark sets, normalized by the
/// ground-truth inter-ocular distance of this frame.
pub fn normalized_landmark_error(
    predicted: &[Point2<f64>],
    truth: &[Point2<f64>],
    interocular_pair: (usize, usize),
) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "landmark count mismatch");
    let mse: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).norm_squared())
        .sum::<f64>()
        / predicted.len() as f64;
    mse.sqrt() / interocular_distance(truth, interocular_pair)
}

/// Normalized landmark error between a predicted and a ground-truth motion
/// state under the same identity and camera.
pub fn motion_landmark_error(
    model: &ParametricShapeModel,
    alpha: &nalgebra::DVector<f64>,
    camera: &Camera,
    predicted: &MotionParams,
    truth: &MotionParams,
) -> Result<f64> {
    let p = model.landmark_positions(alpha, camera, predicted)?;
    let t = model.landmark_positions(alpha, camera, truth)?;
    Ok(normalized_landmark_error(&p, &t, model.interocular_pair()))
}
