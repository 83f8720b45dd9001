//! Parametric 3D shape model, rigid motion and pinhole projection.
//!
//! A shape is a stacked vertex vector `S = B_id * alpha + B_exp * delta`.
//! Column 0 of the identity basis is the mean neutral shape, so `alpha`
//! always carries a leading 1. A subset of vertices are designated
//! landmarks; their projected 2D positions (plus per-landmark displacement
//! offsets) are what the regression tracks.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Vector2, Vector3};

use crate::error::{check_dim, Error, Result};

/// Pinhole camera with square pixels and zero skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub principal: (f64, f64),
}

impl Camera {
    pub fn new(focal: f64, principal: (f64, f64)) -> Result<Self> {
        if focal <= 0.0 || focal.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "camera focal length must be positive, got {focal}"
            )));
        }
        Ok(Camera { focal, principal })
    }
}

/// Per-subject parameters estimated once on the first frame and then frozen.
#[derive(Debug, Clone)]
pub struct StaticParams {
    /// Identity coefficients; element 0 is fixed at 1.
    pub identity: DVector<f64>,
    pub camera: Camera,
}

impl StaticParams {
    pub fn new(identity: DVector<f64>, camera: Camera) -> Result<Self> {
        if identity.is_empty() || identity[0] != 1.0 {
            return Err(Error::InvalidConfig(
                "identity coefficient 0 must be fixed at 1".into(),
            ));
        }
        Ok(StaticParams { identity, camera })
    }
}

/// Sizes of the per-frame motion vector `[delta; theta; t; D]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionDims {
    pub m_exp: usize,
    pub landmarks: usize,
}

impl MotionDims {
    pub fn total(&self) -> usize {
        self.m_exp + 3 + 3 + 2 * self.landmarks
    }
    pub fn expression_range(&self) -> std::ops::Range<usize> {
        0..self.m_exp
    }
    pub fn rotation_range(&self) -> std::ops::Range<usize> {
        self.m_exp..self.m_exp + 3
    }
    pub fn translation_range(&self) -> std::ops::Range<usize> {
        self.m_exp + 3..self.m_exp + 6
    }
    pub fn displacement_range(&self) -> std::ops::Range<usize> {
        self.m_exp + 6..self.total()
    }
}

/// Per-frame motion parameters, stored flat so the regression can treat the
/// whole vector uniformly while callers address the four modality slices by
/// name.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    data: DVector<f64>,
    dims: MotionDims,
}

impl MotionParams {
    pub fn zeros(dims: MotionDims) -> Self {
        MotionParams {
            data: DVector::zeros(dims.total()),
            dims,
        }
    }

    pub fn from_parts(
        expression: DVector<f64>,
        rotation: Vector3<f64>,
        translation: Vector3<f64>,
        displacements: DVector<f64>,
    ) -> Result<Self> {
        if !displacements.len().is_multiple_of(2) {
            return Err(Error::InvalidConfig(
                "displacement vector length must be even".into(),
            ));
        }
        let dims = MotionDims {
            m_exp: expression.len(),
            landmarks: displacements.len() / 2,
        };
        let mut data = DVector::zeros(dims.total());
        data.rows_mut(0, dims.m_exp).copy_from(&expression);
        data.fixed_rows_mut::<3>(dims.m_exp).copy_from(&rotation);
        data.fixed_rows_mut::<3>(dims.m_exp + 3)
            .copy_from(&translation);
        data.rows_mut(dims.m_exp + 6, 2 * dims.landmarks)
            .copy_from(&displacements);
        Ok(MotionParams { data, dims })
    }

    pub fn from_vector(data: DVector<f64>, dims: MotionDims) -> Result<Self> {
        check_dim("motion vector", dims.total(), data.len())?;
        Ok(MotionParams { data, dims })
    }

    pub fn dims(&self) -> MotionDims {
        self.dims
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn expression(&self) -> DVector<f64> {
        self.data.rows(0, self.dims.m_exp).into_owned()
    }

    pub fn rotation(&self) -> Vector3<f64> {
        self.data.fixed_rows::<3>(self.dims.m_exp).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.data.fixed_rows::<3>(self.dims.m_exp + 3).into_owned()
    }

    pub fn displacements(&self) -> DVector<f64> {
        self.data
            .rows(self.dims.m_exp + 6, 2 * self.dims.landmarks)
            .into_owned()
    }

    /// 2D displacement slice of landmark `k`.
    pub fn displacement(&self, k: usize) -> Vector2<f64> {
        let base = self.dims.m_exp + 6 + 2 * k;
        Vector2::new(self.data[base], self.data[base + 1])
    }

    pub fn set_expression(&mut self, expression: &DVector<f64>) {
        self.data
            .rows_mut(0, self.dims.m_exp)
            .copy_from(expression);
    }

    pub fn set_rotation(&mut self, rotation: Vector3<f64>) {
        self.data
            .fixed_rows_mut::<3>(self.dims.m_exp)
            .copy_from(&rotation);
    }

    pub fn set_translation(&mut self, translation: Vector3<f64>) {
        self.data
            .fixed_rows_mut::<3>(self.dims.m_exp + 3)
            .copy_from(&translation);
    }

    pub fn set_displacements(&mut self, displacements: &DVector<f64>) {
        self.data
            .rows_mut(self.dims.m_exp + 6, 2 * self.dims.landmarks)
            .copy_from(displacements);
    }

    /// Advance by a regression increment over the full vector.
    pub fn add_increment(&mut self, increment: &DVector<f64>) -> Result<()> {
        check_dim("motion increment", self.data.len(), increment.len())?;
        self.data += increment;
        Ok(())
    }
}

/// Low-rank shape model: identity basis (with mean in column 0), delta
/// blendshape basis, and the vertex indices that act as 2D landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricShapeModel {
    identity_basis: DMatrix<f64>,
    expression_basis: DMatrix<f64>,
    landmark_indices: Vec<usize>,
    /// Indices into `landmark_indices` of the two eye-reference landmarks.
    interocular_pair: (usize, usize),
    /// Landmark rows of the two bases, gathered once so per-frame landmark
    /// evaluation does not touch the full vertex set.
    landmark_identity: DMatrix<f64>,
    landmark_expression: DMatrix<f64>,
}

impl ParametricShapeModel {
    pub fn new(
        identity_basis: DMatrix<f64>,
        expression_basis: DMatrix<f64>,
        landmark_indices: Vec<usize>,
        interocular_pair: (usize, usize),
    ) -> Result<Self> {
        let rows = identity_basis.nrows();
        if rows == 0 || !rows.is_multiple_of(3) {
            return Err(Error::InvalidConfig(format!(
                "basis row count must be a positive multiple of 3, got {rows}"
            )));
        }
        check_dim("expression basis rows", rows, expression_basis.nrows())?;
        if identity_basis.ncols() == 0 || expression_basis.ncols() == 0 {
            return Err(Error::InvalidConfig("bases must be non-empty".into()));
        }
        let n = rows / 3;
        if landmark_indices.is_empty() {
            return Err(Error::InvalidConfig("no landmark indices".into()));
        }
        if let Some(&bad) = landmark_indices.iter().find(|&&v| v >= n) {
            return Err(Error::InvalidConfig(format!(
                "landmark vertex index {bad} out of range (n = {n})"
            )));
        }
        let (a, b) = interocular_pair;
        if a == b || a >= landmark_indices.len() || b >= landmark_indices.len() {
            return Err(Error::InvalidConfig(format!(
                "inter-ocular pair ({a}, {b}) invalid for {} landmarks",
                landmark_indices.len()
            )));
        }

        let gather = |basis: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(3 * landmark_indices.len(), basis.ncols());
            for (k, &v) in landmark_indices.iter().enumerate() {
                for r in 0..3 {
                    out.row_mut(3 * k + r).copy_from(&basis.row(3 * v + r));
                }
            }
            out
        };
        let landmark_identity = gather(&identity_basis);
        let landmark_expression = gather(&expression_basis);

        Ok(ParametricShapeModel {
            identity_basis,
            expression_basis,
            landmark_indices,
            interocular_pair,
            landmark_identity,
            landmark_expression,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.identity_basis.nrows() / 3
    }
    pub fn identity_rank(&self) -> usize {
        self.identity_basis.ncols() - 1
    }
    pub fn expression_rank(&self) -> usize {
        self.expression_basis.ncols()
    }
    pub fn landmark_count(&self) -> usize {
        self.landmark_indices.len()
    }
    pub fn landmark_indices(&self) -> &[usize] {
        &self.landmark_indices
    }
    pub fn interocular_pair(&self) -> (usize, usize) {
        self.interocular_pair
    }
    pub fn identity_basis(&self) -> &DMatrix<f64> {
        &self.identity_basis
    }
    pub fn expression_basis(&self) -> &DMatrix<f64> {
        &self.expression_basis
    }
    /// Landmark-row slices of the bases (3 * landmark_count rows).
    pub fn landmark_identity_basis(&self) -> &DMatrix<f64> {
        &self.landmark_identity
    }
    pub fn landmark_expression_basis(&self) -> &DMatrix<f64> {
        &self.landmark_expression
    }

    pub fn motion_dims(&self) -> MotionDims {
        MotionDims {
            m_exp: self.expression_rank(),
            landmarks: self.landmark_count(),
        }
    }

    /// Full-shape evaluation `S = B_id * alpha + B_exp * delta`.
    pub fn evaluate_shape(&self, alpha: &DVector<f64>, delta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("identity coefficients", self.identity_basis.ncols(), alpha.len())?;
        check_dim("expression coefficients", self.expression_basis.ncols(), delta.len())?;
        let mut shape = &self.identity_basis * alpha;
        shape.gemv(1.0, &self.expression_basis, delta, 1.0);
        Ok(shape)
    }

    /// 3D positions of the landmark vertices only.
    pub fn landmark_shape(&self, alpha: &DVector<f64>, delta: &DVector<f64>) -> Result<Vec<Vector3<f64>>> {
        check_dim("identity coefficients", self.landmark_identity.ncols(), alpha.len())?;
        check_dim("expression coefficients", self.landmark_expression.ncols(), delta.len())?;
        let mut stacked = &self.landmark_identity * alpha;
        stacked.gemv(1.0, &self.landmark_expression, delta, 1.0);
        Ok((0..self.landmark_count())
            .map(|k| Vector3::new(stacked[3 * k], stacked[3 * k + 1], stacked[3 * k + 2]))
            .collect())
    }

    /// Projected 2D landmarks for motion `P`: pinhole projection of each
    /// landmark vertex plus that landmark's displacement slice.
    pub fn landmark_positions(
        &self,
        alpha: &DVector<f64>,
        camera: &Camera,
        motion: &MotionParams,
    ) -> Result<Vec<Point2<f64>>> {
        check_dim(
            "motion vector",
            self.motion_dims().total(),
            motion.as_vector().len(),
        )?;
        let shape = self.landmark_shape(alpha, &motion.expression())?;
        let rot = euler_to_rotation(motion.rotation());
        let t = motion.translation();
        let mut out = Vec::with_capacity(shape.len());
        for (k, v) in shape.iter().enumerate() {
            let p = project_with(&rot, v, &t, camera)?;
            let d = motion.displacement(k);
            out.push(Point2::new(p.x + d.x, p.y + d.y));
        }
        Ok(out)
    }
}

/// Rotation from Euler angles, intrinsic yaw(Y) -> pitch(X) -> roll(Z):
/// `R = R_y(yaw) * R_x(pitch) * R_z(roll)`.
pub fn euler_to_rotation(theta: Vector3<f64>) -> Matrix3<f64> {
    let (s1, c1) = theta.x.sin_cos();
    let (s2, c2) = theta.y.sin_cos();
    let (s3, c3) = theta.z.sin_cos();
    Matrix3::new(
        c1 * c3 + s1 * s2 * s3,
        -c1 * s3 + s1 * s2 * c3,
        s1 * c2,
        c2 * s3,
        c2 * c3,
        -s2,
        -s1 * c3 + c1 * s2 * s3,
        s1 * s3 + c1 * s2 * c3,
        c1 * c2,
    )
}

/// Inverse of [`euler_to_rotation`] for rotations away from pitch = ±π/2.
pub fn rotation_to_euler(rot: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-rot[(1, 2)]).clamp(-1.0, 1.0).asin();
    let cos_pitch = pitch.cos();
    if cos_pitch.abs() < 1e-9 {
        // Gimbal lock: yaw and roll are coupled; pin roll to 0.
        let yaw = rot[(0, 1)].atan2(rot[(0, 0)]);
        return Vector3::new(yaw, pitch, 0.0);
    }
    let yaw = rot[(0, 2)].atan2(rot[(2, 2)]);
    let roll = rot[(1, 0)].atan2(rot[(1, 1)]);
    Vector3::new(yaw, pitch, roll)
}

/// Pinhole projection of a world point under rotation `theta` and
/// translation `t`. The camera looks down +z; depth must be positive.
pub fn project_point(
    v: &Vector3<f64>,
    theta: Vector3<f64>,
    t: &Vector3<f64>,
    camera: &Camera,
) -> Result<Point2<f64>> {
    let rot = euler_to_rotation(theta);
    project_with(&rot, v, t, camera)
}

/// Projection with a precomputed rotation matrix.
pub fn project_with(
    rot: &Matrix3<f64>,
    v: &Vector3<f64>,
    t: &Vector3<f64>,
    camera: &Camera,
) -> Result<Point2<f64>> {
    let cam = rot * v + t;
    if cam.z <= 0.0 {
        return Err(Error::BehindCamera { depth: cam.z });
    }
    Ok(Point2::new(
        camera.focal * cam.x / cam.z + camera.principal.0,
        camera.focal * cam.y / cam.z + camera.principal.1,
    ))
}

/// Distance between the two eye-reference landmarks of a 2D landmark set.
pub fn interocular_distance(landmarks: &[Point2<f64>], pair: (usize, usize)) -> f64 {
    (landmarks[pair.0] - landmarks[pair.1]).norm()
}
