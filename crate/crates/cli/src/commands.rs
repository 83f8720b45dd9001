//! The four pipeline commands. Each is a library function returning a
//! summary (the binary maps errors to exit codes), writes its outputs
//! atomically, and records the seed it ran under.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ferntrack_core::cascade::{
    track_frame, train_cascade, CascadeModel, TrainReport, TrainingFrame,
};
use ferntrack_core::metrics::normalized_landmark_error;
use ferntrack_core::model_io::{load_model, save_model};
use ferntrack_core::shape_model::StaticParams;
use ferntrack_core::{Error, Result};

use crate::config::{Mode, RunConfig};
use crate::dataset::{load_dataset, load_sequence, write_dataset, Dataset, LoadedSequence};

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `synth`: generate a dataset directory.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<()> {
    write_dataset(config, out)
}

/// Every `train_stride`-th frame across the dataset, in sequence order.
pub fn training_frames(dataset: &Dataset, stride: usize) -> Vec<TrainingFrame> {
    let mut frames = Vec::new();
    let mut index = 0usize;
    for seq in &dataset.sequences {
        for (image, truth) in seq.frames.iter().zip(&seq.ground_truth) {
            if index.is_multiple_of(stride) {
                frames.push(TrainingFrame {
                    image: image.clone(),
                    truth: truth.clone(),
                    statics: seq.statics.clone(),
                });
            }
            index += 1;
        }
    }
    frames
}

/// Train one mode on an already-loaded dataset.
pub fn train_on_dataset(
    config: &RunConfig,
    dataset: &Dataset,
    mode: Mode,
) -> Result<(CascadeModel, TrainReport)> {
    let frames = training_frames(dataset, config.train_stride);
    if frames.is_empty() {
        return Err(Error::InvalidConfig("train_stride leaves no frames".into()));
    }
    train_cascade(
        &dataset.toy.shape,
        &dataset.toy.prior_sigmas,
        &frames,
        &config.cascade_config(mode),
    )
}

fn training_metrics_csv(config: &RunConfig, mode: Mode, report: &TrainReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed = {}", config.seed);
    let _ = writeln!(out, "# mode = {mode}");
    let _ = writeln!(out, "# threads = {}", rayon::current_num_threads());
    let _ = writeln!(out, "# samples = {}", report.sample_count);
    let _ = writeln!(out, "stage,rmse,extract_secs,regress_secs,fuse_secs");
    let _ = writeln!(out, "0,{},,,", report.initial_rmse);
    for (t, (rmse, timing)) in report.stage_rmse.iter().zip(&report.timings).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t + 1,
            rmse,
            timing.extraction.as_secs_f64(),
            timing.regressor.as_secs_f64(),
            timing.fusion.as_secs_f64()
        );
    }
    out
}

/// Result of `train`.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// `train`: build a cascade model from a dataset and write it plus a
/// metrics table.
pub fn cmd_train(config: &RunConfig, dataset_dir: &Path, out: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = load_dataset(dataset_dir)?;
    let (model, report) = train_on_dataset(config, &dataset, config.mode)?;
    save_model(&model, out)?;
    let metrics_path = out.with_extension("metrics.csv");
    write_atomic(&metrics_path, &training_metrics_csv(config, config.mode, &report))?;
    Ok(TrainOutcome {
        report,
        model_path: out.to_path_buf(),
        metrics_path,
    })
}

/// Result of `track` on one sequence.
pub struct TrackOutcome {
    /// Estimated motion state per frame (frame 0 is the first-frame fit).
    pub estimates: Vec<ferntrack_core::MotionParams>,
    /// Normalized landmark error per frame, against the sequence ground
    /// truth.
    pub frame_errors: Vec<f64>,
    /// Tracked frames per second over frames 1.., regression loop only.
    pub fps: f64,
}

/// Track one loaded sequence with a loaded model.
pub fn track_sequence(
    config: &RunConfig,
    model: &CascadeModel,
    seq: &LoadedSequence,
) -> Result<TrackOutcome> {
    let shape = model.shape();
    let dims = shape.motion_dims();
    let seq_dims = seq.ground_truth[0].dims();
    if dims != seq_dims {
        return Err(Error::InvalidConfig(format!(
            "model ({} expression, {} landmarks) incompatible with sequence ({}, {})",
            dims.m_exp, dims.landmarks, seq_dims.m_exp, seq_dims.landmarks
        )));
    }
    if seq.statics.camera != *model.camera() {
        return Err(Error::InvalidConfig(
            "sequence camera differs from the camera the model was trained with".into(),
        ));
    }

    // First frame: fit statics and the initial motion state.
    let fit = ferntrack_core::init_fit::fit_first_frame(
        &seq.first_frame_landmarks,
        shape,
        &seq.statics.camera,
        model.prior_sigmas(),
        &config.fit_config(),
    )?;
    let statics = StaticParams::new(fit.alpha.clone(), seq.statics.camera)?;

    let truth_landmarks = |frame: usize| {
        shape.landmark_positions(
            &seq.statics.identity,
            &seq.statics.camera,
            &seq.ground_truth[frame],
        )
    };
    let error_of = |state: &ferntrack_core::MotionParams, frame: usize| -> Result<f64> {
        let predicted = shape.landmark_positions(&statics.identity, &statics.camera, state)?;
        Ok(normalized_landmark_error(
            &predicted,
            &truth_landmarks(frame)?,
            shape.interocular_pair(),
        ))
    };

    let mut frame_errors = Vec::with_capacity(seq.frames.len());
    let mut estimates = Vec::with_capacity(seq.frames.len());
    frame_errors.push(error_of(&fit.motion, 0)?);
    estimates.push(fit.motion);

    let mut elapsed = Duration::ZERO;
    for frame in 1..seq.frames.len() {
        let started = Instant::now();
        let estimate = track_frame(model, &seq.frames[frame], estimates.last().unwrap(), &statics)?;
        elapsed += started.elapsed();
        frame_errors.push(error_of(&estimate, frame)?);
        estimates.push(estimate);
    }
    let tracked = seq.frames.len().saturating_sub(1);
    let fps = if tracked > 0 && elapsed > Duration::ZERO {
        tracked as f64 / elapsed.as_secs_f64()
    } else {
        f64::INFINITY
    };
    Ok(TrackOutcome {
        estimates,
        frame_errors,
        fps,
    })
}

fn track_csv(config: &RunConfig, seq: &LoadedSequence, outcome: &TrackOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# seed = {}", config.seed);
    let _ = writeln!(out, "# sequence = {}", seq.name);
    let _ = writeln!(out, "# fps = {}", outcome.fps);
    let mean = outcome.frame_errors.iter().sum::<f64>() / outcome.frame_errors.len() as f64;
    let _ = writeln!(out, "# mean_error = {mean}");
    let dim = outcome.estimates[0].as_vector().len();
    let mut header = String::from("frame,error");
    for d in 0..dim {
        let _ = write!(header, ",p{d}");
    }
    let _ = writeln!(out, "{header}");
    for (f, (e, estimate)) in outcome
        .frame_errors
        .iter()
        .zip(&outcome.estimates)
        .enumerate()
    {
        let _ = write!(out, "{f},{e}");
        for v in estimate.as_vector().iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `track`: first-frame fit, then frame-by-frame regression; writes a
/// per-frame error table when an output path is given.
pub fn cmd_track(
    config: &RunConfig,
    model_path: &Path,
    sequence_dir: &Path,
    out: Option<&Path>,
) -> Result<TrackOutcome> {
    config.validate()?;
    let model = load_model(model_path)?;
    let seq = load_sequence(sequence_dir)?;
    let outcome = track_sequence(config, &model, &seq)?;
    if let Some(path) = out {
        write_atomic(path, &track_csv(config, &seq, &outcome))?;
    }
    Ok(outcome)
}

/// Per-sequence comparison row.
pub struct SequenceComparison {
    pub sequence: String,
    pub first_error: f64,
    pub second_error: f64,
}

/// Result of `compare`.
pub struct CompareOutcome {
    pub modes: (Mode, Mode),
    pub rows: Vec<SequenceComparison>,
    pub first_report: TrainReport,
    pub second_report: TrainReport,
    pub threads: usize,
}

impl CompareOutcome {
    /// Sequences where the first mode's mean error is <= the second's.
    pub fn first_wins(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.first_error <= r.second_error)
            .count()
    }
}

/// Train two modes under matched budgets and seeds, track every sequence
/// with both, and report side-by-side errors and training curves.
pub fn run_comparison(
    config: &RunConfig,
    dataset: &Dataset,
    modes: (Mode, Mode),
) -> Result<CompareOutcome> {
    if dataset.sequences.len() < 2 {
        return Err(Error::InvalidConfig(
            "comparison needs at least 2 sequences".into(),
        ));
    }
    let (first_model, first_report) = train_on_dataset(config, dataset, modes.0)?;
    let (second_model, second_report) = train_on_dataset(config, dataset, modes.1)?;

    let mut rows = Vec::with_capacity(dataset.sequences.len());
    for seq in &dataset.sequences {
        let a = track_sequence(config, &first_model, seq)?;
        let b = track_sequence(config, &second_model, seq)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        rows.push(SequenceComparison {
            sequence: seq.name.clone(),
            first_error: mean(&a.frame_errors),
            second_error: mean(&b.frame_errors),
        });
    }
    Ok(CompareOutcome {
        modes,
        rows,
        first_report,
        second_report,
        threads: rayon::current_num_threads(),
    })
}

fn compare_csv(config: &RunConfig, outcome: &CompareOutcome) -> String {
    let (a, b) = outcome.modes;
    let mut out = String::new();
    let _ = writeln!(out, "# seed = {}", config.seed);
    let _ = writeln!(out, "# threads = {}", outcome.threads);
    let _ = writeln!(out, "sequence,{a}_error,{b}_error");
    for row in &outcome.rows {
        let _ = writeln!(out, "{},{},{}", row.sequence, row.first_error, row.second_error);
    }
    out
}

fn compare_stages_csv(config: &RunConfig, outcome: &CompareOutcome) -> String {
    let (a, b) = outcome.modes;
    let mut out = String::new();
    let _ = writeln!(out, "# seed = {}", config.seed);
    let _ = writeln!(out, "# threads = {}", outcome.threads);
    let _ = writeln!(
        out,
        "stage,{a}_rmse,{b}_rmse,{a}_stage_secs,{b}_stage_secs"
    );
    let _ = writeln!(
        out,
        "0,{},{},,",
        outcome.first_report.initial_rmse, outcome.second_report.initial_rmse
    );
    for t in 0..outcome.first_report.stage_rmse.len() {
        let total = |r: &TrainReport| {
            let tm = &r.timings[t];
            (tm.extraction + tm.regressor + tm.fusion).as_secs_f64()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            t + 1,
            outcome.first_report.stage_rmse[t],
            outcome.second_report.stage_rmse[t],
            total(&outcome.first_report),
            total(&outcome.second_report)
        );
    }
    out
}

/// `compare`: the grouped regressor against the monolithic baseline on one
/// dataset; writes `compare.csv` (per-sequence errors) and
/// `compare_stages.csv` (training curves and wall-clock) into `out`.
pub fn cmd_compare(config: &RunConfig, dataset_dir: &Path, out: &Path) -> Result<CompareOutcome> {
    config.validate()?;
    let dataset = load_dataset(dataset_dir)?;
    let outcome = run_comparison(config, &dataset, (Mode::Gombf, Mode::Monolithic))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("compare.csv"), &compare_csv(config, &outcome))?;
    write_atomic(
        &out.join("compare_stages.csv"),
        &compare_stages_csv(config, &outcome),
    )?;
    Ok(outcome)
}
