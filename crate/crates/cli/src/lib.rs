//! Command layer: configuration, dataset layout, and the synth / train /
//! track / compare pipeline commands as library functions.

pub mod commands;
pub mod config;
pub mod dataset;

pub use commands::{
    cmd_compare, cmd_synth, cmd_track, cmd_train, run_comparison, track_sequence,
    train_on_dataset, CompareOutcome, TrackOutcome, TrainOutcome,
};
pub use config::{Mode, RunConfig};
