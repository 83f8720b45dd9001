//! Random ferns boosted on regression residuals.
//!
//! A fern applies one pixel-difference test per level; a sample's leaf index
//! assembles the test outcomes as bits (test `b` contributes bit `b`, set
//! when `x[i] - x[j] > tau`). Boosting chains ferns on the residual left by
//! the preceding ones, so the ensemble prediction is the sum of the member
//! predictions.
//!
//! Split selection follows the correlation scheme: project the residual
//! targets onto a random Gaussian direction and pick the feature pair whose
//! difference correlates most with the projection, using
//! `cov(x_i - x_j, y) = cov(x_i, y) - cov(x_j, y)` so the pair search only
//! needs per-feature covariances plus the precomputed feature covariance
//! matrix. The threshold is then sampled uniformly within the selected
//! feature's maximum absolute value over the training set.

use nalgebra::{DMatrix, DVector};

/// Appearance features are pixel intensities; f32 carries them exactly
/// (they are 8-bit at the source) at half the memory traffic of f64.
/// Feature values are the differences `x[i] - x[j]`, always evaluated in
/// f64 after exact widening so training and prediction agree bit for bit.
pub type AppearanceMatrix = DMatrix<f32>;

#[inline]
fn feature_value(x: &[f32], lhs: usize, rhs: usize) -> f64 {
    f64::from(x[lhs]) - f64::from(x[rhs])
}

/// Widening dot product; this runs once per feature column per fern level,
/// so it is written for instruction-level parallelism.
fn dot_f32_f64(col: &[f32], ys: &[f64]) -> f64 {
    debug_assert_eq!(col.len(), ys.len());
    let mut acc0 = [0.0f64; 4];
    let mut acc1 = [0.0f64; 4];
    let mut col_chunks = col.chunks_exact(8);
    let mut ys_chunks = ys.chunks_exact(8);
    for (c8, y8) in (&mut col_chunks).zip(&mut ys_chunks) {
        for k in 0..4 {
            acc0[k] += f64::from(c8[k]) * y8[k];
        }
        for k in 0..4 {
            acc1[k] += f64::from(c8[4 + k]) * y8[4 + k];
        }
    }
    for (v, w) in col_chunks.remainder().iter().zip(ys_chunks.remainder()) {
        acc0[0] += f64::from(*v) * w;
    }
    let lo = (acc0[0] + acc0[1]) + (acc0[2] + acc0[3]);
    let hi = (acc1[0] + acc1[1]) + (acc1[2] + acc1[3]);
    lo + hi
}
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// One node-splitting test: compare `x[lhs] - x[rhs]` against `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitTest {
    pub lhs: usize,
    pub rhs: usize,
    pub threshold: f64,
}

impl SplitTest {
    #[inline]
    pub fn passes(&self, x: &[f32]) -> bool {
        feature_value(x, self.lhs, self.rhs) > self.threshold
    }
}

/// A depth-`F` fern: `F` tests and a leaf matrix of `2^F` output columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Fern {
    tests: Vec<SplitTest>,
    /// output_dim x 2^F; column `b` is the prediction of leaf `b`.
    leaves: DMatrix<f64>,
}

impl Fern {
    pub fn new(tests: Vec<SplitTest>, leaves: DMatrix<f64>) -> Result<Self> {
        if tests.is_empty() {
            return Err(Error::InvalidConfig("fern needs at least one test".into()));
        }
        check_dim("fern leaf columns", 1 << tests.len(), leaves.ncols())?;
        Ok(Fern { tests, leaves })
    }

    pub fn depth(&self) -> usize {
        self.tests.len()
    }
    pub fn tests(&self) -> &[SplitTest] {
        &self.tests
    }
    pub fn leaves(&self) -> &DMatrix<f64> {
        &self.leaves
    }
    pub fn output_dim(&self) -> usize {
        self.leaves.nrows()
    }

    /// Leaf index of `x`; bit `b` is set iff test `b` passes.
    pub fn descend(&self, x: &[f32]) -> usize {
        let mut index = 0usize;
        for (bit, test) in self.tests.iter().enumerate() {
            if test.passes(x) {
                index |= 1 << bit;
            }
        }
        index
    }

    /// Prediction `w * phi(x)`: the leaf column selected by [`descend`].
    ///
    /// [`descend`]: Fern::descend
    pub fn predict(&self, x: &[f32]) -> DVector<f64> {
        self.leaves.column(self.descend(x)).into_owned()
    }
}

/// Sequential ensemble of ferns sharing appearance length and output size.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedFerns {
    ferns: Vec<Fern>,
    appearance_len: usize,
    output_dim: usize,
}

impl BoostedFerns {
    pub fn ferns(&self) -> &[Fern] {
        &self.ferns
    }
    pub fn appearance_len(&self) -> usize {
        self.appearance_len
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Sum of the member ferns' predictions.
    pub fn predict(&self, x: &[f32]) -> Result<DVector<f64>> {
        check_dim("appearance vector", self.appearance_len, x.len())?;
        let mut out = DVector::zeros(self.output_dim);
        for fern in &self.ferns {
            out += fern.leaves.column(fern.descend(x));
        }
        Ok(out)
    }
}

/// Knobs for boosted-ferns training.
#[derive(Debug, Clone, Copy)]
pub struct BoostConfig {
    /// Number of ferns `K`.
    pub fern_count: usize,
    /// Tests per fern `F` (leaves are `2^F`).
    pub depth: usize,
    /// Leaf shrinkage `beta`: a leaf stores `sum / (count + beta)`.
    pub shrinkage: f64,
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fern_count == 0 {
            return Err(Error::InvalidConfig("fern count must be >= 1".into()));
        }
        if self.depth == 0 || self.depth > 20 {
            return Err(Error::InvalidConfig(format!(
                "fern depth must be in 1..=20, got {}",
                self.depth
            )));
        }
        if self.shrinkage < 0.0 || self.shrinkage.is_nan() {
            return Err(Error::InvalidConfig("shrinkage must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-feature first and second central moments of a training appearance
/// matrix (samples are rows). Computed once per stage and shared by every
/// fern trained on that stage's features.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub means: DVector<f64>,
    /// Unnormalized central covariance `sum (x_i - m_i)(x_j - m_j)`.
    pub covariance: DMatrix<f64>,
}

impl FeatureStats {
    pub fn compute(x: &AppearanceMatrix) -> Self {
        let n = x.nrows();
        let mut centered = DMatrix::<f64>::zeros(x.nrows(), x.ncols());
        for (dst, src) in centered.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *dst = f64::from(*src);
        }
        let means = DVector::from_fn(x.ncols(), |c, _| centered.column(c).sum() / n as f64);
        for c in 0..x.ncols() {
            centered.column_mut(c).add_scalar_mut(-means[c]);
        }
        let covariance = centered.transpose() * &centered;
        FeatureStats { means, covariance }
    }

    #[inline]
    fn pair_variance(&self, i: usize, j: usize) -> f64 {
        self.covariance[(i, i)] + self.covariance[(j, j)] - 2.0 * self.covariance[(i, j)]
    }
}

/// Outcome of one split-selection attempt.
enum SplitAttempt {
    Selected(SplitTest),
    /// The projected target varies but no feature pair correlates with it.
    NoInformativePair,
}

/// Centered projection of the residual targets onto a random unit direction.
/// Fails when the projected targets have zero variance.
fn project_residuals(residuals: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let dim = residuals.ncols();
    let mut direction = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = direction.norm();
    if norm > 0.0 {
        direction /= norm;
    } else {
        direction[0] = 1.0;
    }
    let mut y = residuals * direction;
    let mean = y.sum() / y.len() as f64;
    y.add_scalar_mut(-mean);
    if y.iter().map(|v| v * v).sum::<f64>() == 0.0 {
        return Err(Error::DegenerateTargets);
    }
    Ok(y)
}

fn attempt_split(
    x: &AppearanceMatrix,
    stats: &FeatureStats,
    residuals: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<SplitAttempt> {
    let y = project_residuals(residuals, rng)?;
    // Per-feature covariance with the projection; y is centered so the
    // feature means drop out up to a correction with sum(y).
    let n = x.nrows();
    let data = x.as_slice();
    let ys = y.as_slice();
    let mut cov_y = DVector::zeros(x.ncols());
    for i in 0..x.ncols() {
        let col = &data[i * n..(i + 1) * n];
        cov_y[i] = dot_f32_f64(col, ys);
    }
    let y_sum = y.sum();
    cov_y -= &stats.means * y_sum;

    let m = x.ncols();
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..m {
        for j in i + 1..m {
            let denom = stats.pair_variance(i, j);
            if denom <= 0.0 {
                continue;
            }
            let num = cov_y[i] - cov_y[j];
            let score = num * num / denom;
            if score > 0.0 && best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, i, j));
            }
        }
    }
    let Some((_, i, j)) = best else {
        return Ok(SplitAttempt::NoInformativePair);
    };

    let mut max_abs = 0.0f64;
    let (ci, cj) = (&data[i * n..(i + 1) * n], &data[j * n..(j + 1) * n]);
    for (a, b) in ci.iter().zip(cj) {
        max_abs = max_abs.max((f64::from(*a) - f64::from(*b)).abs());
    }
    let threshold = if max_abs > 0.0 {
        rng.random_range(-max_abs..=max_abs)
    } else {
        0.0
    };
    Ok(SplitAttempt::Selected(SplitTest {
        lhs: i,
        rhs: j,
        threshold,
    }))
}

/// Select one split test by correlation against a random residual
/// projection. Zero-variance projected targets (after the internal redraws)
/// and fully uninformative feature sets are both reported as degenerate.
pub fn select_split(
    x: &AppearanceMatrix,
    residuals: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<SplitTest> {
    if x.nrows() < 2 {
        return Err(Error::InvalidConfig(
            "split selection needs at least 2 samples".into(),
        ));
    }
    let stats = FeatureStats::compute(x);
    match attempt_split(x, &stats, residuals, rng)? {
        SplitAttempt::Selected(test) => Ok(test),
        SplitAttempt::NoInformativePair => Err(Error::DegenerateTargets),
    }
}

/// Leaf index per training sample under a fixed test sequence.
fn assign_leaves(x: &AppearanceMatrix, tests: &[SplitTest]) -> Vec<u32> {
    let n = x.nrows();
    let data = x.as_slice();
    let mut leaves = vec![0u32; n];
    for (bit, test) in tests.iter().enumerate() {
        let lhs = &data[test.lhs * n..(test.lhs + 1) * n];
        let rhs = &data[test.rhs * n..(test.rhs + 1) * n];
        for s in 0..n {
            if f64::from(lhs[s]) - f64::from(rhs[s]) > test.threshold {
                leaves[s] |= 1 << bit;
            }
        }
    }
    leaves
}

/// Shrunk per-leaf means: a leaf with `n_b` samples stores
/// `n_b / (n_b + beta)` times the mean residual, i.e. `sum / (n_b + beta)`.
/// Empty leaves stay zero.
pub fn fit_leaves(
    tests: &[SplitTest],
    x: &AppearanceMatrix,
    residuals: &DMatrix<f64>,
    shrinkage: f64,
) -> Result<DMatrix<f64>> {
    if shrinkage < 0.0 || shrinkage.is_nan() {
        return Err(Error::InvalidConfig("shrinkage must be >= 0".into()));
    }
    check_dim("residual rows", x.nrows(), residuals.nrows())?;
    let assignments = assign_leaves(x, tests);
    Ok(shrunk_leaf_sums(
        &assignments,
        residuals,
        1 << tests.len(),
        shrinkage,
    ))
}

fn shrunk_leaf_sums(
    assignments: &[u32],
    residuals: &DMatrix<f64>,
    leaf_count: usize,
    shrinkage: f64,
) -> DMatrix<f64> {
    let dim = residuals.ncols();
    let mut sums = DMatrix::zeros(dim, leaf_count);
    let mut counts = vec![0usize; leaf_count];
    for &leaf in assignments {
        counts[leaf as usize] += 1;
    }
    // Column sweep keeps the residual reads contiguous.
    for d in 0..dim {
        let col = residuals.column(d);
        for (s, &leaf) in assignments.iter().enumerate() {
            sums[(d, leaf as usize)] += col[s];
        }
    }
    for (leaf, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let scale = 1.0 / (count as f64 + shrinkage);
        sums.column_mut(leaf).scale_mut(scale);
    }
    sums
}

/// How a degenerate residual projection is handled while building one fern.
#[derive(Clone, Copy, PartialEq)]
enum DegeneratePolicy {
    /// Propagate the degenerate-target error (first fern of an ensemble).
    Fail,
    /// Emit a structurally valid fern with all-zero leaves and carry on.
    ZeroFern,
}

const SPLIT_RETRIES: usize = 5;

fn train_fern(
    x: &AppearanceMatrix,
    stats: &FeatureStats,
    residuals: &DMatrix<f64>,
    config: &BoostConfig,
    rng: &mut ChaCha8Rng,
    policy: DegeneratePolicy,
) -> Result<Fern> {
    let mut tests = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        let mut informative = None;
        let mut saw_live_target = false;
        for _ in 0..SPLIT_RETRIES {
            match attempt_split(x, stats, residuals, rng) {
                Ok(SplitAttempt::Selected(test)) => {
                    informative = Some(test);
                    break;
                }
                Ok(SplitAttempt::NoInformativePair) => saw_live_target = true,
                Err(Error::DegenerateTargets) => {}
                Err(other) => return Err(other),
            }
        }
        match informative {
            Some(test) => tests.push(test),
            None if saw_live_target => {
                // Features carry no signal for this projection; keep the
                // level alive with an arbitrary valid pair.
                tests.push(SplitTest {
                    lhs: 0,
                    rhs: 1,
                    threshold: 0.0,
                });
            }
            None => {
                // Residual projections collapsed on every redraw.
                match policy {
                    DegeneratePolicy::Fail => return Err(Error::DegenerateTargets),
                    DegeneratePolicy::ZeroFern => {
                        let tests = vec![
                            SplitTest {
                                lhs: 0,
                                rhs: 1,
                                threshold: 0.0,
                            };
                            config.depth
                        ];
                        let leaves = DMatrix::zeros(residuals.ncols(), 1 << config.depth);
                        return Fern::new(tests, leaves);
                    }
                }
            }
        }
    }
    let leaves = fit_leaves(&tests, x, residuals, config.shrinkage)?;
    Fern::new(tests, leaves)
}

/// Train a boosted ferns on appearance rows `x` (N x M) against targets
/// (N x output_dim). Each fern fits the residual left by its predecessors.
pub fn train_boosted(
    x: &AppearanceMatrix,
    targets: &DMatrix<f64>,
    config: &BoostConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BoostedFerns> {
    let stats = FeatureStats::compute(x);
    train_boosted_with_stats(x, &stats, targets, config, rng)
}

/// As [`train_boosted`] but with feature statistics precomputed by the
/// caller (they depend only on `x`, not on the targets).
pub fn train_boosted_with_stats(
    x: &AppearanceMatrix,
    stats: &FeatureStats,
    targets: &DMatrix<f64>,
    config: &BoostConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BoostedFerns> {
    config.validate()?;
    if x.nrows() < 2 {
        return Err(Error::InvalidConfig(
            "boosted training needs at least 2 samples".into(),
        ));
    }
    if x.ncols() < 2 {
        return Err(Error::InvalidConfig(
            "boosted training needs at least 2 features".into(),
        ));
    }
    check_dim("target rows", x.nrows(), targets.nrows())?;

    let mut residuals = targets.clone();
    let mut ferns = Vec::with_capacity(config.fern_count);
    for k in 0..config.fern_count {
        let policy = if k == 0 {
            DegeneratePolicy::Fail
        } else {
            DegeneratePolicy::ZeroFern
        };
        let fern = train_fern(x, stats, &residuals, config, rng, policy)?;
        subtract_fern_predictions(&fern, x, &mut residuals);
        ferns.push(fern);
    }
    Ok(BoostedFerns {
        ferns,
        appearance_len: x.ncols(),
        output_dim: targets.ncols(),
    })
}

fn subtract_fern_predictions(fern: &Fern, x: &AppearanceMatrix, residuals: &mut DMatrix<f64>) {
    let assignments = assign_leaves(x, fern.tests());
    for d in 0..residuals.ncols() {
        let mut col = residuals.column_mut(d);
        for (s, &leaf) in assignments.iter().enumerate() {
            col[s] -= fern.leaves[(d, leaf as usize)];
        }
    }
}

/// Leaf assignment for every row of a sample matrix; used by the modular
/// fusion step, which needs per-fern leaf indices rather than predictions.
pub fn leaf_assignments(fern: &Fern, x: &AppearanceMatrix) -> Vec<u32> {
    assign_leaves(x, fern.tests())
}

/// Rebuild an ensemble from already-validated parts (model deserialization).
pub(crate) fn boosted_from_parts(
    ferns: Vec<Fern>,
    appearance_len: usize,
    output_dim: usize,
) -> Result<BoostedFerns> {
    if ferns.is_empty() {
        return Err(Error::InvalidConfig("ensemble needs at least one fern".into()));
    }
    let depth = ferns[0].depth();
    for fern in &ferns {
        check_dim("fern depth", depth, fern.depth())?;
        check_dim("fern output dim", output_dim, fern.output_dim())?;
        for test in fern.tests() {
            if test.lhs >= appearance_len || test.rhs >= appearance_len {
                return Err(Error::InvalidConfig(format!(
                    "split test indices ({}, {}) exceed appearance length {}",
                    test.lhs, test.rhs, appearance_len
                )));
            }
        }
    }
    Ok(BoostedFerns {
        ferns,
        appearance_len,
        output_dim,
    })
}
