//! Modality-grouped boosted ferns with a global leaf refit.
//!
//! Each modality group (expression, rotation, translation, displacements)
//! trains its own boosted ferns against its slice of the target vector, so
//! feature selection inside a group is never distracted by the other
//! modalities' scale. The per-group leaf matrices are then block-embedded
//! into one wide leaf matrix over the concatenated fern indicators and
//! jointly refit by ridge regression on the whole target, which lets every
//! fern contribute to every output dimension.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::ferns::{
    leaf_assignments, train_boosted_with_stats, AppearanceMatrix, BoostConfig, BoostedFerns,
    FeatureStats,
};
use crate::linalg::SpdFactor;
use crate::rng::stream_rng;
use crate::shape_model::MotionDims;

/// One contiguous slice of the regression target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityGroup {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub fern_count: usize,
}

/// Ordered modality groups tiling the full target dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityLayout {
    groups: Vec<ModalityGroup>,
}

impl ModalityLayout {
    pub fn new(groups: Vec<ModalityGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidConfig("layout needs at least one group".into()));
        }
        let mut expected_offset = 0;
        for g in &groups {
            if g.offset != expected_offset {
                return Err(Error::InvalidConfig(format!(
                    "group `{}` starts at {}, expected {} (groups must tile the target)",
                    g.name, g.offset, expected_offset
                )));
            }
            if g.width == 0 {
                return Err(Error::InvalidConfig(format!("group `{}` is empty", g.name)));
            }
            if g.fern_count == 0 {
                return Err(Error::InvalidConfig(format!(
                    "group `{}` has a zero fern budget",
                    g.name
                )));
            }
            expected_offset += g.width;
        }
        Ok(ModalityLayout { groups })
    }

    /// The four-group layout over a motion vector `[delta; theta; t; D]`,
    /// one fern budget per group.
    pub fn for_motion(dims: MotionDims, fern_counts: [usize; 4]) -> Result<Self> {
        ModalityLayout::new(vec![
            ModalityGroup {
                name: "expression".into(),
                offset: 0,
                width: dims.m_exp,
                fern_count: fern_counts[0],
            },
            ModalityGroup {
                name: "rotation".into(),
                offset: dims.m_exp,
                width: 3,
                fern_count: fern_counts[1],
            },
            ModalityGroup {
                name: "translation".into(),
                offset: dims.m_exp + 3,
                width: 3,
                fern_count: fern_counts[2],
            },
            ModalityGroup {
                name: "displacement".into(),
                offset: dims.m_exp + 6,
                width: 2 * dims.landmarks,
                fern_count: fern_counts[3],
            },
        ])
    }

    /// Degenerate one-group layout (the monolithic baseline).
    pub fn single(total_dim: usize, fern_count: usize) -> Result<Self> {
        ModalityLayout::new(vec![ModalityGroup {
            name: "all".into(),
            offset: 0,
            width: total_dim,
            fern_count,
        }])
    }

    pub fn groups(&self) -> &[ModalityGroup] {
        &self.groups
    }

    pub fn total_dim(&self) -> usize {
        self.groups.iter().map(|g| g.width).sum()
    }

    pub fn total_ferns(&self) -> usize {
        self.groups.iter().map(|g| g.fern_count).sum()
    }
}

/// Sparse indicator over the concatenated leaf columns: exactly one column
/// per fern is active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIndicator {
    /// Active column index per fern, in fern order.
    pub columns: Vec<usize>,
    /// Total column count of the fused leaf matrix.
    pub total: usize,
}

/// Modality-grouped boosted ferns plus the fused leaf matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GombfModel {
    layout: ModalityLayout,
    group_models: Vec<BoostedFerns>,
    /// total_dim x (sum_g K_g * 2^F). Block-embedded group leaves before
    /// the refit, replaced by the ridge solution afterwards.
    fused: DMatrix<f64>,
    depth: usize,
    appearance_len: usize,
    fused_by_ridge: bool,
}

impl GombfModel {
    pub fn from_parts(
        layout: ModalityLayout,
        group_models: Vec<BoostedFerns>,
        fused: DMatrix<f64>,
        fused_by_ridge: bool,
    ) -> Result<Self> {
        check_dim("group model count", layout.groups.len(), group_models.len())?;
        let depth = group_models
            .first()
            .and_then(|m| m.ferns().first())
            .map(|f| f.depth())
            .ok_or_else(|| Error::InvalidConfig("model has no ferns".into()))?;
        let appearance_len = group_models[0].appearance_len();
        for (g, model) in layout.groups.iter().zip(&group_models) {
            check_dim("group fern count", g.fern_count, model.ferns().len())?;
            check_dim("group output dim", g.width, model.output_dim())?;
            check_dim("group appearance length", appearance_len, model.appearance_len())?;
            for fern in model.ferns() {
                check_dim("fern depth", depth, fern.depth())?;
            }
        }
        let columns = layout.total_ferns() << depth;
        check_dim("fused leaf columns", columns, fused.ncols())?;
        check_dim("fused leaf rows", layout.total_dim(), fused.nrows())?;
        Ok(GombfModel {
            layout,
            group_models,
            fused,
            depth,
            appearance_len,
            fused_by_ridge,
        })
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }
    pub fn group_models(&self) -> &[BoostedFerns] {
        &self.group_models
    }
    pub fn fused_leaves(&self) -> &DMatrix<f64> {
        &self.fused
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn appearance_len(&self) -> usize {
        self.appearance_len
    }
    pub fn is_fused(&self) -> bool {
        self.fused_by_ridge
    }
    pub fn total_dim(&self) -> usize {
        self.layout.total_dim()
    }
    pub fn leaf_column_count(&self) -> usize {
        self.fused.ncols()
    }

    /// First fused column of fern `k` within group `g`.
    fn column_base(&self, group: usize, fern: usize) -> usize {
        let leaves = 1usize << self.depth;
        let mut base = 0;
        for g in &self.layout.groups[..group] {
            base += g.fern_count * leaves;
        }
        base + fern * leaves
    }

    /// Concatenated per-fern one-hot blocks for one appearance vector.
    pub fn assemble_indicator(&self, x: &[f32]) -> Result<SparseIndicator> {
        check_dim("appearance vector", self.appearance_len, x.len())?;
        let mut columns = Vec::with_capacity(self.layout.total_ferns());
        for (g, model) in self.group_models.iter().enumerate() {
            for (k, fern) in model.ferns().iter().enumerate() {
                columns.push(self.column_base(g, k) + fern.descend(x));
            }
        }
        Ok(SparseIndicator {
            columns,
            total: self.fused.ncols(),
        })
    }

    /// Full-dimension increment `W_P * Phi_P(x)`: the sum of one fused
    /// column per fern.
    pub fn predict(&self, x: &[f32]) -> Result<DVector<f64>> {
        let indicator = self.assemble_indicator(x)?;
        let mut out = DVector::zeros(self.fused.nrows());
        for &column in &indicator.columns {
            out += self.fused.column(column);
        }
        Ok(out)
    }

    /// Predictions for every row of `x`, in row order.
    pub fn predict_batch(&self, x: &AppearanceMatrix) -> Result<DMatrix<f64>> {
        check_dim("appearance columns", self.appearance_len, x.ncols())?;
        let n = x.nrows();
        let dim = self.total_dim();
        let rows: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|s| {
                let probe: Vec<f32> = x.row(s).iter().copied().collect();
                self.predict(&probe).expect("dims already checked")
            })
            .collect();
        let mut out = DMatrix::zeros(n, dim);
        for (s, row) in rows.iter().enumerate() {
            out.row_mut(s).tr_copy_from(row);
        }
        Ok(out)
    }
}

/// Train one boosted ferns per modality group on that group's target slice.
/// Groups run concurrently; each derives its own seed from `master_seed`
/// and its ordinal, so the result does not depend on scheduling.
pub fn train_modular(
    x: &AppearanceMatrix,
    targets: &DMatrix<f64>,
    layout: &ModalityLayout,
    config: &BoostConfig,
    master_seed: u64,
) -> Result<GombfModel> {
    check_dim("target dimension", layout.total_dim(), targets.ncols())?;
    let stats = FeatureStats::compute(x);

    let results: Vec<Result<BoostedFerns>> = layout
        .groups
        .par_iter()
        .enumerate()
        .map(|(g, group)| {
            let slice = targets.columns(group.offset, group.width).into_owned();
            let group_config = BoostConfig {
                fern_count: group.fern_count,
                ..*config
            };
            let mut rng = stream_rng(master_seed, "group", g as u64);
            train_boosted_with_stats(x, &stats, &slice, &group_config, &mut rng)
                .map_err(|e| e.context(format!("group `{}`", group.name)))
        })
        .collect();

    let mut group_models = Vec::with_capacity(results.len());
    for result in results {
        group_models.push(result?);
    }

    let fused = embed_group_leaves(layout, &group_models, config.depth);
    GombfModel::from_parts(layout.clone(), group_models, fused, false)
}

/// Block-embed the group leaf matrices: group `g`'s leaves occupy its
/// target rows in its fern columns, zero everywhere else.
fn embed_group_leaves(
    layout: &ModalityLayout,
    group_models: &[BoostedFerns],
    depth: usize,
) -> DMatrix<f64> {
    let leaves = 1usize << depth;
    let columns = layout.total_ferns() * leaves;
    let mut fused = DMatrix::zeros(layout.total_dim(), columns);
    let mut base = 0;
    for (group, model) in layout.groups.iter().zip(group_models) {
        for fern in model.ferns() {
            fused
                .view_mut((group.offset, base), (group.width, leaves))
                .copy_from(fern.leaves());
            base += leaves;
        }
    }
    fused
}

/// Per-sample active column per fern, for all samples. Fern order matches
/// [`GombfModel::assemble_indicator`].
fn batch_indicators(model: &GombfModel, x: &AppearanceMatrix) -> Vec<Vec<u32>> {
    let mut per_fern = Vec::with_capacity(model.layout.total_ferns());
    for group_model in &model.group_models {
        for fern in group_model.ferns() {
            per_fern.push(leaf_assignments(fern, x));
        }
    }
    per_fern
}

/// Replace the fused leaf matrix with the minimizer of
/// `sum_i ||W Phi(x_i) - t_i||^2 + lambda ||W||_F^2`, solved through the
/// normal equations of the stacked indicator design. Leaf columns never
/// visited by the training set stay exactly zero and are dropped from the
/// solve. The group fern structures are untouched.
pub fn global_optimize(
    model: &mut GombfModel,
    x: &AppearanceMatrix,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<()> {
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::InvalidConfig("ridge weight must be >= 0".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidConfig("global refit needs samples".into()));
    }
    check_dim("appearance columns", model.appearance_len, x.ncols())?;
    check_dim("target dimension", model.total_dim(), targets.ncols())?;
    check_dim("target rows", x.nrows(), targets.nrows())?;

    let n = x.nrows();
    let dim = model.total_dim();
    let leaves = 1usize << model.depth;
    let fern_total = model.layout.total_ferns();
    let per_fern = batch_indicators(model, x);

    // Occupancy compression: unvisited leaf columns solve to exactly zero
    // (their Gram row and right-hand side are both zero), so only occupied
    // columns enter the factorization.
    let mut visits = vec![0u32; model.fused.ncols()];
    let mut fern_base = vec![0usize; fern_total];
    {
        let mut base = 0;
        for (f, assignments) in per_fern.iter().enumerate() {
            fern_base[f] = base;
            for &leaf in assignments {
                visits[base + leaf as usize] += 1;
            }
            base += leaves;
        }
    }
    let occupied: Vec<usize> = (0..visits.len()).filter(|&c| visits[c] > 0).collect();
    let compact: Vec<u32> = {
        let mut map = vec![u32::MAX; visits.len()];
        for (idx, &c) in occupied.iter().enumerate() {
            map[c] = idx as u32;
        }
        map
    };
    let occ = occupied.len();

    // Gram matrix of the stacked indicators, accumulated as co-occurrence
    // counts per fern pair. Fern pairs own disjoint Gram blocks, so the
    // blocks can be built in parallel and scattered afterwards.
    let pairs: Vec<(usize, usize)> = (0..fern_total)
        .flat_map(|f1| (f1..fern_total).map(move |f2| (f1, f2)))
        .collect();
    let blocks: Vec<Vec<u32>> = pairs
        .par_iter()
        .map(|&(f1, f2)| {
            // Local dense block indexed by leaf pair; two interleaved
            // accumulators so repeated leaf pairs do not serialize on the
            // same counter.
            let (la, lb) = (&per_fern[f1], &per_fern[f2]);
            let mut even = vec![0u32; leaves * leaves];
            let mut odd = vec![0u32; leaves * leaves];
            let mut s = 0;
            while s + 1 < n {
                even[la[s] as usize * leaves + lb[s] as usize] += 1;
                odd[la[s + 1] as usize * leaves + lb[s + 1] as usize] += 1;
                s += 2;
            }
            if s < n {
                even[la[s] as usize * leaves + lb[s] as usize] += 1;
            }
            for (e, o) in even.iter_mut().zip(&odd) {
                *e += o;
            }
            even
        })
        .collect();

    let mut gram = DMatrix::<f64>::zeros(occ, occ);
    for (&(f1, f2), block) in pairs.iter().zip(&blocks) {
        for leaf_a in 0..leaves {
            let ca = compact[fern_base[f1] + leaf_a];
            if ca == u32::MAX {
                continue;
            }
            for leaf_b in 0..leaves {
                let count = block[leaf_a * leaves + leaf_b];
                if count == 0 {
                    continue;
                }
                let cb = compact[fern_base[f2] + leaf_b];
                let (ca, cb) = (ca as usize, cb as usize);
                gram[(ca, cb)] += count as f64;
                if f1 != f2 {
                    gram[(cb, ca)] += count as f64;
                }
            }
        }
    }

    // Right-hand side B^T (occupied x dim): column sums of targets per
    // active leaf. One sample-major pass streams the target matrix once;
    // the per-fern accumulator blocks stay cache-resident. Samples are
    // split into fixed chunks reduced in order, so the sums are identical
    // for any worker count.
    let targets_t = targets.transpose();
    // Sample-major copy of the active columns so the inner loop reads one
    // contiguous run of fern leaves per sample.
    let mut columns_of = vec![0u32; n * fern_total];
    for (f, assignments) in per_fern.iter().enumerate() {
        let base = fern_base[f] as u32;
        for (s, &leaf) in assignments.iter().enumerate() {
            columns_of[s * fern_total + f] = base + leaf;
        }
    }
    let chunk_count = 16usize;
    let chunk_len = n.div_ceil(chunk_count);
    let chunk_sums: Vec<Vec<f64>> = (0..chunk_count)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * chunk_len;
            let hi = ((chunk + 1) * chunk_len).min(n);
            let mut local = vec![0.0f64; fern_total * leaves * dim];
            let src = targets_t.as_slice();
            for s in lo..hi {
                let sample = &src[s * dim..(s + 1) * dim];
                for &column in &columns_of[s * fern_total..(s + 1) * fern_total] {
                    let base = column as usize * dim;
                    let col = &mut local[base..base + dim];
                    for (acc, v) in col.iter_mut().zip(sample) {
                        *acc += v;
                    }
                }
            }
            local
        })
        .collect();
    let mut sums = vec![0.0f64; fern_total * leaves * dim];
    for chunk in &chunk_sums {
        for (acc, v) in sums.iter_mut().zip(chunk) {
            *acc += v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(occ, dim);
    for (global_col, &c) in compact.iter().enumerate() {
        if c == u32::MAX {
            continue;
        }
        let col = &sums[global_col * dim..(global_col + 1) * dim];
        for (d, v) in col.iter().enumerate() {
            rhs[(c as usize, d)] = *v;
        }
    }

    for i in 0..occ {
        gram[(i, i)] += lambda;
    }
    let factor = SpdFactor::new(gram)?;
    factor.solve_in_place(&mut rhs);

    // Scatter the solution back; unvisited columns stay zero.
    let mut fused = DMatrix::zeros(dim, model.fused.ncols());
    for (idx, &c) in occupied.iter().enumerate() {
        fused.column_mut(c).tr_copy_from(&rhs.row(idx));
    }
    model.fused = fused;
    model.fused_by_ridge = true;
    Ok(())
}

/// The refit objective `sum_i ||W Phi(x_i) - t_i||^2 + lambda ||W||_F^2`
/// evaluated at the model's current fused leaves.
pub fn regularized_objective(
    model: &GombfModel,
    x: &AppearanceMatrix,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64> {
    let predictions = model.predict_batch(x)?;
    let mut sse = 0.0;
    for s in 0..x.nrows() {
        sse += (targets.row(s) - predictions.row(s)).norm_squared();
    }
    Ok(sse + lambda * model.fused.norm_squared())
}
